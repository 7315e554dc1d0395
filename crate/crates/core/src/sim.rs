//! Euler–Maruyama simulation of the interacting-particle SDE
//! `dX = −(∇V(X) + ∇K ∗ μ_t(X)) dt + σ dB`, plus analytic references.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conv::FrameConvolver;
use crate::data::{Axis, DomainConfig, Snapshot, SnapshotSet, Source, Observation};
use crate::density::frame_mass;
use crate::error::{Error, Result};
use crate::exec;
use crate::kde::{estimate_density, sample_covariance, silverman_bandwidth};
use crate::mat2::Mat2;
use crate::weakform::{env_gradient, kernel_gradient};

/// Snapshot times of the field experiments, hr.
pub const FIELD_TIMES: [f64; 8] = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 24.0, 48.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialWeight {
    pub n: usize,
    pub m: usize,
    /// cm²/hr.
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionWeight {
    pub n: usize,
    /// cm²/hr.
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Fold excursions back into the plot.
    #[default]
    Reflect,
    /// Free motion; particles outside the plot are not recorded.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// Gaussian cluster of standard deviation `spread` (cm) around `center`
    /// (plot centre when absent).
    PointCluster {
        #[serde(default)]
        center: Option<[f64; 2]>,
        #[serde(default = "default_spread")]
        spread: f64,
    },
    /// Uniform over the plot.
    Uniform,
    Custom { positions: Vec<[f64; 2]> },
}

fn default_spread() -> f64 {
    3.0
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::PointCluster {
            center: None,
            spread: default_spread(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub particles: usize,
    /// Noise amplitude σ, cm/√hr. Give either this or `diffusion`.
    pub sigma: Option<Mat2>,
    /// `D = σσᵀ/2`, cm²/hr.
    pub diffusion: Option<Mat2>,
    pub potential: Vec<PotentialWeight>,
    pub interaction: Vec<InteractionWeight>,
    /// Bessel kernel length scale ρ₀, cm.
    pub kernel_scale: f64,
    /// Interaction range, cm.
    pub kernel_cutoff: f64,
    pub dt: f64,
    pub times: Vec<f64>,
    pub boundary: Boundary,
    pub initial: InitialCondition,
    pub seed: u64,
    pub domain: DomainConfig,
    pub plot_id: String,
    pub replicate_id: String,
}

impl Default for SimConfig {
    fn default() -> Self {
        let domain = DomainConfig::default();
        Self {
            particles: 160,
            sigma: None,
            diffusion: Some(Mat2::scaled(8.0)),
            potential: Vec::new(),
            interaction: Vec::new(),
            kernel_scale: 6.0,
            kernel_cutoff: 30.0 * domain.length_x / (domain.grid_nx - 1) as f64,
            dt: 0.02,
            times: FIELD_TIMES.to_vec(),
            boundary: Boundary::Reflect,
            initial: InitialCondition::default(),
            seed: 0,
            domain,
            plot_id: "sim".into(),
            replicate_id: "1".into(),
        }
    }
}

impl SimConfig {
    /// `σ`, from `sigma` or as `(2D)^{1/2}`.
    pub fn sigma_matrix(&self) -> Result<Mat2> {
        match (self.sigma, self.diffusion) {
            (Some(s), None) => Ok(s),
            (None, Some(d)) => d
                .scale(2.0)
                .sqrt_spd()
                .ok_or_else(|| Error::Invalid(format!("diffusion {:?} is not symmetric positive semi-definite", d.0))),
            _ => Err(Error::Invalid("give exactly one of sigma or diffusion".into())),
        }
    }

    /// `D = σσᵀ/2`.
    pub fn diffusion_matrix(&self) -> Result<Mat2> {
        let s = self.sigma_matrix()?;
        Ok((s * s.transpose()).scale(0.5))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load<P: AsRef<std::path::Path>>(path: P) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.sigma_matrix()?;
        if self.particles == 0 {
            return Err(Error::Invalid("particles must be >= 1".into()));
        }
        if self.times.is_empty() || self.times[0] != 0.0 {
            return Err(Error::Invalid("snapshot times must start at 0".into()));
        }
        let min_gap = self
            .times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        if min_gap <= 0.0 {
            return Err(Error::Invalid("snapshot times must be strictly increasing".into()));
        }
        if !(self.dt > 0.0) || (min_gap.is_finite() && self.dt > min_gap / 10.0 * (1.0 + 1e-12)) {
            return Err(Error::Invalid(format!(
                "dt = {} must be positive and at most a tenth of the smallest snapshot gap",
                self.dt
            )));
        }
        if self.potential.iter().any(|p| p.n == 0 || p.m == 0) || self.interaction.iter().any(|k| k.n == 0) {
            return Err(Error::Invalid("basis indices start at 1".into()));
        }
        if !self.interaction.is_empty() && !(self.kernel_scale > 0.0 && self.kernel_cutoff > 0.0) {
            return Err(Error::Invalid("kernel_scale and kernel_cutoff must be positive".into()));
        }
        match &self.initial {
            InitialCondition::PointCluster { spread, .. } if !(*spread >= 0.0) => {
                return Err(Error::Invalid("cluster spread must be >= 0".into()))
            }
            InitialCondition::Custom { positions } => {
                if positions.len() != self.particles {
                    return Err(Error::Invalid(format!(
                        "{} custom positions for {} particles",
                        positions.len(),
                        self.particles
                    )));
                }
                let d = &self.domain;
                if positions
                    .iter()
                    .any(|p| !(0.0..=d.length_x).contains(&p[0]) || !(0.0..=d.length_y).contains(&p[1]))
                {
                    return Err(Error::Invalid("custom positions must lie in the plot".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// `∇V(x)`.
    pub fn potential_gradient(&self, p: [f64; 2]) -> [f64; 2] {
        let length = [self.domain.length_x, self.domain.length_y];
        self.potential.iter().fold([0.0, 0.0], |acc, w| {
            let g = env_gradient(w.n, w.m, length, p[0], p[1]);
            [acc[0] + w.weight * g[0], acc[1] + w.weight * g[1]]
        })
    }

    /// `∇K(d)` within the cutoff.
    pub fn kernel_gradient(&self, d: [f64; 2]) -> [f64; 2] {
        if d[0].hypot(d[1]) > self.kernel_cutoff {
            return [0.0, 0.0];
        }
        self.interaction.iter().fold([0.0, 0.0], |acc, k| {
            let g = kernel_gradient(k.n, self.kernel_scale, d);
            [acc[0] + k.weight * g[0], acc[1] + k.weight * g[1]]
        })
    }
}

fn fold(v: f64, len: f64) -> f64 {
    let period = 2.0 * len;
    let mut r = v.rem_euclid(period);
    if r > len {
        r = period - r;
    }
    r
}

struct Particle {
    pos: [f64; 2],
    rng: ChaCha8Rng,
}

fn initial_positions(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let (lx, ly) = (cfg.domain.length_x, cfg.domain.length_y);
    match &cfg.initial {
        InitialCondition::PointCluster { center, spread } => {
            let c = center.unwrap_or([lx / 2.0, ly / 2.0]);
            (0..cfg.particles)
                .map(|_| {
                    let zx: f64 = StandardNormal.sample(rng);
                    let zy: f64 = StandardNormal.sample(rng);
                    [fold(c[0] + spread * zx, lx), fold(c[1] + spread * zy, ly)]
                })
                .collect()
        }
        InitialCondition::Uniform => {
            use rand::Rng;
            (0..cfg.particles)
                .map(|_| [rng.random_range(0.0..=lx), rng.random_range(0.0..=ly)])
                .collect()
        }
        InitialCondition::Custom { positions } => positions.clone(),
    }
}

/// Run the simulation and record the configured snapshots.
pub fn simulate(cfg: &SimConfig) -> Result<SnapshotSet> {
    cfg.validate()?;
    let sigma = cfg.sigma_matrix()?;
    let (lx, ly) = (cfg.domain.length_x, cfg.domain.length_y);
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(u64::MAX);
    let mut particles: Vec<Particle> = initial_positions(cfg, &mut init_rng)
        .into_iter()
        .enumerate()
        .map(|(i, pos)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            Particle { pos, rng }
        })
        .collect();
    let n = particles.len();
    let interacting = !cfg.interaction.is_empty();
    let reflect = cfg.boundary == Boundary::Reflect;

    let record = |particles: &[Particle], time: f64| Snapshot {
        time,
        observations: particles
            .iter()
            .filter(|p| (0.0..=lx).contains(&p.pos[0]) && (0.0..=ly).contains(&p.pos[1]))
            .map(|p| Observation {
                x: p.pos[0],
                y: p.pos[1],
                z: None,
                source: 0,
            })
            .collect(),
    };

    let mut snapshots = vec![record(&particles, 0.0)];
    let mut t = 0.0;
    let mut step = 0usize;
    for &target in &cfg.times[1..] {
        while t < target - 1e-12 * target.max(1.0) {
            let h = cfg.dt.min(target - t);
            let sq = h.sqrt();
            let frozen: Vec<[f64; 2]> = if interacting {
                particles.iter().map(|p| p.pos).collect()
            } else {
                Vec::new()
            };
            exec::for_each_chunk_mut(&mut particles, 64, |_, chunk| {
                for p in chunk.iter_mut() {
                    let mut drift = cfg.potential_gradient(p.pos);
                    if interacting {
                        let mut acc = [0.0, 0.0];
                        for q in &frozen {
                            let g = cfg.kernel_gradient([p.pos[0] - q[0], p.pos[1] - q[1]]);
                            acc[0] += g[0];
                            acc[1] += g[1];
                        }
                        drift[0] += acc[0] / n as f64;
                        drift[1] += acc[1] / n as f64;
                    }
                    let z = [StandardNormal.sample(&mut p.rng), StandardNormal.sample(&mut p.rng)];
                    let noise = sigma.apply(z);
                    let mut x = p.pos[0] - drift[0] * h + sq * noise[0];
                    let mut y = p.pos[1] - drift[1] * h + sq * noise[1];
                    if reflect {
                        x = fold(x, lx);
                        y = fold(y, ly);
                    }
                    p.pos = [x, y];
                }
            });
            step += 1;
            if particles.iter().any(|p| !p.pos[0].is_finite() || !p.pos[1].is_finite()) {
                return Err(Error::SimulationBlowup { step });
            }
            t += h;
        }
        t = target;
        snapshots.push(record(&particles, target));
    }
    let source = Source {
        plot_id: cfg.plot_id.clone(),
        replicate_id: cfg.replicate_id.clone(),
    };
    SnapshotSet::new(cfg.domain, vec![source], snapshots)
}

/// `u₀ ∗ H_D(·, t)` with `H_D` the Gaussian of covariance `2tD`, by FFT.
/// Mass leaving the plot is lost.
pub fn heat_kernel_density(u0: &Array2<f64>, d: Mat2, t: f64, x: &Axis, y: &Axis) -> Result<Array2<f64>> {
    if !(t > 0.0) {
        return Err(Error::Invalid(format!("t must be positive, got {t}")));
    }
    if !d.is_spd() {
        return Err(Error::Invalid(format!("D = {:?} is not positive definite", d.0)));
    }
    if u0.dim() != (x.len, y.len) {
        return Err(Error::Invalid("initial frame does not match the grid".into()));
    }
    let cov = d.scale(2.0 * t);
    let p = cov.inverse().expect("SPD");
    let norm = 1.0 / (2.0 * std::f64::consts::PI * cov.det().sqrt());
    let hx = ((8.0 * cov.get(0, 0).sqrt() / x.step).ceil() as usize).min(x.len);
    let hy = ((8.0 * cov.get(1, 1).sqrt() / y.step).ceil() as usize).min(y.len);
    let area = x.step * y.step;
    let stencil = Array2::from_shape_fn((2 * hx + 1, 2 * hy + 1), |(a, b)| {
        let v = [(a as f64 - hx as f64) * x.step, (b as f64 - hy as f64) * y.step];
        area * norm * (-0.5 * p.quad(v)).exp()
    });
    FrameConvolver::new(stencil.view(), u0.dim())?.apply(u0.view())
}

/// One simulation of the gallery.
#[derive(Debug, Clone)]
pub struct GalleryEntry {
    pub pi_v: f64,
    pub pi_k: f64,
    pub config: SimConfig,
    pub snapshots: SnapshotSet,
}

/// `‖∇V‖₂` of the configured potential over the plot (trapezoid rule on
/// the domain grid).
pub fn potential_scale(cfg: &SimConfig) -> Result<f64> {
    let g = cfg.domain.grid(0.0, 1.0)?;
    let sq = Array2::from_shape_fn((g.x.len, g.y.len), |(i, j)| {
        let v = cfg.potential_gradient([g.x.node(i), g.y.node(j)]);
        v[0] * v[0] + v[1] * v[1]
    });
    Ok(frame_mass(&sq.view(), &g.x, &g.y).sqrt())
}

/// `K_c U_c` of the configured kernel on the KDE of the initial positions.
pub fn interaction_scale(cfg: &SimConfig, initial: &[[f64; 2]]) -> Result<f64> {
    let g = cfg.domain.grid(0.0, 1.0)?;
    let cov = sample_covariance(initial)?;
    let u = estimate_density(initial, cov.cov, silverman_bandwidth(initial.len()), &g)?;
    let rx = (cfg.kernel_cutoff / g.x.step).floor() as usize;
    let ry = (cfg.kernel_cutoff / g.y.step).floor() as usize;
    let area = g.x.step * g.y.step;
    let mut gx = Array2::zeros((2 * rx + 1, 2 * ry + 1));
    let mut gy = Array2::zeros((2 * rx + 1, 2 * ry + 1));
    for a in 0..=2 * rx {
        for b in 0..=2 * ry {
            let d = [(a as f64 - rx as f64) * g.x.step, (b as f64 - ry as f64) * g.y.step];
            let k = cfg.kernel_gradient(d);
            gx[[a, b]] = area * k[0];
            gy[[a, b]] = area * k[1];
        }
    }
    let shape = u.dim();
    let fx = FrameConvolver::new(gx.view(), shape)?.apply(u.view())?;
    let fy = FrameConvolver::new(gy.view(), shape)?.apply(u.view())?;
    let sq = &fx * &fx + &fy * &fy;
    let u_c = u.iter().copied().fold(0.0, f64::max);
    Ok(frame_mass(&sq.view(), &g.x, &g.y).sqrt() * u_c)
}

/// One simulation per `(Π_V, Π_K)` pair. The base potential and kernel
/// weights give the shapes; they are rescaled so that `V_c / D = Π_V` and
/// `t_c K_c U_c = Π_K`, with `D = tr(D)/2`, `t_c` the simulated span and
/// `K_c U_c` evaluated on the initial density.
pub fn regime_gallery(pi_v: &[f64], pi_k: &[f64], base: &SimConfig) -> Result<Vec<GalleryEntry>> {
    if pi_v.is_empty() || pi_k.is_empty() {
        return Err(Error::Invalid("gallery needs at least one value of each group".into()));
    }
    base.validate()?;
    let d = 0.5 * base.diffusion_matrix()?.trace();
    let t_c = base.times[base.times.len() - 1] - base.times[0];
    let v_unit = potential_scale(base)?;
    let k_unit = if base.interaction.is_empty() {
        0.0
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(base.seed);
        rng.set_stream(u64::MAX);
        t_c * interaction_scale(base, &initial_positions(base, &mut rng))?
    };
    let mut out = Vec::new();
    for &pv in pi_v {
        for &pk in pi_k {
            if (pv != 0.0 && v_unit == 0.0) || (pk != 0.0 && k_unit == 0.0) {
                return Err(Error::Invalid(
                    "base config needs non-zero potential and interaction shapes for non-zero groups".into(),
                ));
            }
            let mut cfg = base.clone();
            let sv = if pv == 0.0 { 0.0 } else { pv * d / v_unit };
            let sk = if pk == 0.0 { 0.0 } else { pk / k_unit };
            cfg.potential.iter_mut().for_each(|w| w.weight *= sv);
            cfg.interaction.iter_mut().for_each(|w| w.weight *= sk);
            if sv == 0.0 {
                cfg.potential.clear();
            }
            if sk == 0.0 {
                cfg.interaction.clear();
            }
            let snapshots = simulate(&cfg)?;
            out.push(GalleryEntry {
                pi_v: pv,
                pi_k: pk,
                config: cfg,
                snapshots,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_reflects() {
        assert_eq!(fold(-1.0, 10.0), 1.0);
        assert_eq!(fold(11.0, 10.0), 9.0);
        assert_eq!(fold(23.0, 10.0), 3.0);
        assert_eq!(fold(5.0, 10.0), 5.0);
    }

    #[test]
    fn deterministic_and_count_preserving() {
        let cfg = SimConfig {
            particles: 50,
            seed: 3,
            ..Default::default()
        };
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.times(), FIELD_TIMES.to_vec());
        assert!(a.counts().iter().all(|&c| c == 50));
        let c = simulate(&SimConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn config_validation() {
        let ok = SimConfig::default();
        assert!(ok.validate().is_ok());
        assert!(SimConfig { dt: 0.2, ..ok.clone() }.validate().is_err());
        assert!(SimConfig {
            sigma: Some(Mat2::IDENTITY),
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(SimConfig {
            times: vec![1.0, 2.0],
            ..ok.clone()
        }
        .validate()
        .is_err());
        let d = SimConfig {
            sigma: Some(Mat2::diag(4.0, 6.0)),
            diffusion: None,
            ..ok
        }
        .diffusion_matrix()
        .unwrap();
        assert_eq!(d, Mat2::diag(8.0, 18.0));
    }

    #[test]
    fn gradient_flow_descends_to_minimum() {
        // −cos(2πx/L)cos(2πy/W) has its minimum at the plot centre
        let cfg = SimConfig {
            particles: 4,
            diffusion: Some(Mat2::ZERO),
            potential: vec![PotentialWeight { n: 1, m: 1, weight: -200.0 }],
            initial: InitialCondition::Custom {
                positions: vec![[70.0, 80.0], [100.0, 95.0], [80.0, 100.0], [95.0, 70.0]],
            },
            times: vec![0.0, 100.0],
            dt: 0.05,
            ..Default::default()
        };
        let out = simulate(&cfg).unwrap();
        for p in out.positions(1) {
            assert!((p[0] - 87.5).abs() < 1e-3 && (p[1] - 87.5).abs() < 1e-3, "{p:?}");
        }
    }

    #[test]
    fn heat_kernel_of_delta() {
        let x = Axis::spanning(0.0, 40.0, 81);
        let y = Axis::spanning(0.0, 40.0, 81);
        let mut u0 = Array2::zeros((81, 81));
        u0[[40, 40]] = 1.0 / (x.step * y.step);
        let u = heat_kernel_density(&u0, Mat2::IDENTITY, 1.0, &x, &y).unwrap();
        let expected = |dx: f64, dy: f64| (-(dx * dx + dy * dy) / 4.0).exp() / (4.0 * std::f64::consts::PI);
        assert!((u[[40, 40]] - expected(0.0, 0.0)).abs() < 1e-12);
        assert!((u[[43, 38]] - expected(1.5, -1.0)).abs() < 1e-12);
        assert!((frame_mass(&u.view(), &x, &y) - 1.0).abs() < 1e-6);
    }
}
