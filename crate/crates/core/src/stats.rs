//! Model-free diffusion estimates from snapshot statistics.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Snapshot, SnapshotSet};
use crate::error::{Error, Result};
use crate::exec;
use crate::kde::sample_covariance;
use crate::mat2::Mat2;

/// How per-time covariance rates are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeWeighting {
    /// Plain mean over frames.
    #[default]
    Uniform,
    /// Weights proportional to `N_t · t`, favouring late, well-populated frames.
    CountTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceRate {
    /// `(t, (Ĉ_t − Ĉ_0) / 2t)` for every frame with `t > 0` and `N_t ≥ 2`.
    pub per_time: Vec<(f64, Mat2)>,
    pub d: Mat2,
}

impl CovarianceRate {
    /// `tr(D̂)/2`.
    pub fn effective(&self) -> f64 {
        0.5 * self.d.trace()
    }
}

/// `D̂_t = (Ĉ_t − Ĉ_0) / (2t)` per frame, averaged over frames. The initial
/// covariance is subtracted so that spread-out starting positions do not
/// bias the rate; for a point release it is zero.
pub fn covariance_rate(set: &SnapshotSet, weighting: TimeWeighting) -> Result<CovarianceRate> {
    let c0 = if set.snapshots()[0].observations.len() >= 2 {
        sample_covariance(&set.positions(0))?.cov
    } else {
        Mat2::ZERO
    };
    let mut per_time = Vec::new();
    let mut weights = Vec::new();
    for (k, s) in set.snapshots().iter().enumerate() {
        if s.time <= 0.0 || s.observations.len() < 2 {
            continue;
        }
        let c = sample_covariance(&set.positions(k))?;
        per_time.push((s.time, (c.cov - c0).scale(0.5 / s.time)));
        weights.push(match weighting {
            TimeWeighting::Uniform => 1.0,
            TimeWeighting::CountTime => s.observations.len() as f64 * s.time,
        });
    }
    if per_time.is_empty() {
        return Err(Error::InsufficientData(
            "covariance rate needs a frame with t > 0 and at least 2 particles".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    let d = per_time
        .iter()
        .zip(&weights)
        .fold(Mat2::ZERO, |acc, ((_, m), w)| acc + m.scale(w / total));
    Ok(CovarianceRate { per_time, d })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplacementAxis {
    /// `‖x − x̄₀‖`, model `√(πDt)`.
    Radial,
    /// `|x − x̄₀|`, model `√(4Dt/π)`.
    X,
    Y,
    /// Height; reference is the mean initial height.
    Z,
}

impl DisplacementAxis {
    /// `c` in the model curve `√(c D t)`.
    pub fn model_factor(self) -> f64 {
        match self {
            DisplacementAxis::Radial => PI,
            _ => 4.0 / PI,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementFit {
    pub axis: DisplacementAxis,
    /// `(t, (⟨Δ⟩_t² − ⟨Δ⟩_0²)^{1/2})` with `Δ` measured from the initial
    /// centre of mass. For a Gaussian release `⟨Δ⟩_t²` grows by exactly
    /// `c D t`, so the initial spread drops out.
    pub curve: Vec<(f64, f64)>,
    pub d: f64,
    /// All displacements were zero.
    pub zero_variance: bool,
}

/// Initial centre of mass (x, y, z) of each source.
fn initial_centres(set: &SnapshotSet) -> Vec<[f64; 3]> {
    let n = set.sources().len();
    let mut sum = vec![[0.0; 3]; n];
    let mut count = vec![[0usize; 2]; n];
    for o in &set.snapshots()[0].observations {
        let s = o.source as usize;
        sum[s][0] += o.x;
        sum[s][1] += o.y;
        count[s][0] += 1;
        if let Some(z) = o.z {
            sum[s][2] += z;
            count[s][1] += 1;
        }
    }
    let all: Vec<[f64; 2]> = set.positions(0);
    let overall = [
        all.iter().map(|p| p[0]).sum::<f64>() / all.len() as f64,
        all.iter().map(|p| p[1]).sum::<f64>() / all.len() as f64,
    ];
    (0..n)
        .map(|s| {
            if count[s][0] == 0 {
                log::warn!("source {} has no initial observations; using the pooled centre", s);
                return [overall[0], overall[1], 0.0];
            }
            let c = count[s][0] as f64;
            let z = if count[s][1] > 0 { sum[s][2] / count[s][1] as f64 } else { 0.0 };
            [sum[s][0] / c, sum[s][1] / c, z]
        })
        .collect()
}

/// Distance of every observation from its source's initial centre.
fn distances(snapshot: &Snapshot, centres: &[[f64; 3]], axis: DisplacementAxis) -> Result<Vec<f64>> {
    snapshot
        .observations
        .iter()
        .map(|o| {
            let c = centres[o.source as usize];
            Ok(match axis {
                DisplacementAxis::Radial => (o.x - c[0]).hypot(o.y - c[1]),
                DisplacementAxis::X => (o.x - c[0]).abs(),
                DisplacementAxis::Y => (o.y - c[1]).abs(),
                DisplacementAxis::Z => {
                    let z = o.z.ok_or_else(|| {
                        Error::InsufficientData(format!("missing z at t = {}", snapshot.time))
                    })?;
                    (z - c[2]).abs()
                }
            })
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Least-squares fit of `⟨Δ⟩_t ≈ √(c D t)` over all snapshot times, `D ≥ 0`.
pub fn fit_displacement(set: &SnapshotSet, axis: DisplacementAxis) -> Result<DisplacementFit> {
    if set.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "displacement fit needs at least 3 snapshots, got {}",
            set.len()
        )));
    }
    let centres = initial_centres(set);
    let base = mean(&distances(&set.snapshots()[0], &centres, axis)?);
    let mut curve = Vec::with_capacity(set.len());
    for s in set.snapshots() {
        let m = mean(&distances(s, &centres, axis)?);
        curve.push((s.time, (m * m - base * base).max(0.0).sqrt()));
    }
    let factor = axis.model_factor();
    let (mut num, mut den) = (0.0, 0.0);
    for &(t, delta) in &curve {
        let g = (factor * t).sqrt();
        num += delta * g;
        den += g * g;
    }
    let zero_variance = curve.iter().all(|&(_, d)| d == 0.0);
    let a = if den > 0.0 { (num / den).max(0.0) } else { 0.0 };
    Ok(DisplacementFit {
        axis,
        curve,
        d: a * a,
        zero_variance,
    })
}

/// Spread of a statistic over bootstrap replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub estimate: f64,
    pub std_error: f64,
    /// Percentile interval (2.5%, 97.5%).
    pub interval: (f64, f64),
    pub replicates: usize,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Bootstrap over frames of unlabeled items: each replicate resamples every
/// frame with replacement, keeping its size. Replicate `b` draws from the
/// ChaCha8 stream `b` of `seed`.
pub fn bootstrap_frames<T, F>(frames: &[Vec<T>], statistic: F, replicates: usize, seed: u64) -> Result<BootstrapSummary>
where
    T: Clone + Sync + Send,
    F: Fn(&[Vec<T>]) -> Result<f64> + Sync + Send,
{
    if frames.is_empty() || frames.iter().all(|f| f.is_empty()) {
        return Err(Error::InsufficientData("bootstrap needs data".into()));
    }
    if replicates == 0 {
        return Err(Error::Invalid("bootstrap needs at least one replicate".into()));
    }
    let estimate = statistic(frames)?;
    let values: Vec<Result<f64>> = exec::map_range(replicates, |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        let sample: Vec<Vec<T>> = frames
            .iter()
            .map(|f| (0..f.len()).map(|_| f[rng.random_range(0..f.len())].clone()).collect())
            .collect();
        statistic(&sample)
    });
    let mut values = values.into_iter().collect::<Result<Vec<f64>>>()?;
    if replicates == 1 {
        return Ok(BootstrapSummary {
            estimate,
            std_error: 0.0,
            interval: (estimate, estimate),
            replicates,
        });
    }
    let m = mean(&values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    values.sort_by(f64::total_cmp);
    Ok(BootstrapSummary {
        estimate,
        std_error: var.sqrt(),
        interval: (quantile(&values, 0.025), quantile(&values, 0.975)),
        replicates,
    })
}

/// [`bootstrap_frames`] over the snapshots of `set`.
pub fn bootstrap_se<F>(set: &SnapshotSet, statistic: F, replicates: usize, seed: u64) -> Result<BootstrapSummary>
where
    F: Fn(&SnapshotSet) -> Result<f64> + Sync + Send,
{
    let frames: Vec<Vec<_>> = set.snapshots().iter().map(|s| s.observations.clone()).collect();
    let times = set.times();
    let domain = *set.domain();
    let sources = set.sources().to_vec();
    bootstrap_frames(
        &frames,
        |sample| {
            let snapshots = sample
                .iter()
                .zip(&times)
                .map(|(obs, &time)| Snapshot {
                    time,
                    observations: obs.clone(),
                })
                .collect();
            statistic(&SnapshotSet::new(domain, sources.clone(), snapshots)?)
        },
        replicates,
        seed,
    )
}

/// Which estimator produced a [`DiffusionEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    CovarianceRate,
    DisplacementFit,
}

/// Effective diffusivity with bootstrap uncertainty, plus matrix entries
/// where the method provides them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionEstimate {
    pub method: EstimateMethod,
    pub d_x: f64,
    pub d_xy: f64,
    pub d_y: f64,
    pub d_eff: f64,
    /// `2σ̂` of `d_eff`.
    pub two_sigma: f64,
    pub interval: (f64, f64),
}

/// Covariance-rate estimate with bootstrap error bars on `D_eff`.
pub fn covariance_rate_estimate(set: &SnapshotSet, replicates: usize, seed: u64) -> Result<DiffusionEstimate> {
    let cr = covariance_rate(set, TimeWeighting::Uniform)?;
    let boot = bootstrap_se(set, |s| Ok(covariance_rate(s, TimeWeighting::Uniform)?.effective()), replicates, seed)?;
    Ok(DiffusionEstimate {
        method: EstimateMethod::CovarianceRate,
        d_x: cr.d.get(0, 0),
        d_xy: cr.d.get(0, 1),
        d_y: cr.d.get(1, 1),
        d_eff: cr.effective(),
        two_sigma: 2.0 * boot.std_error,
        interval: boot.interval,
    })
}

/// Displacement-curve estimate: radial fit for `D_eff`, marginal fits for
/// the diagonal entries.
pub fn displacement_estimate(set: &SnapshotSet, replicates: usize, seed: u64) -> Result<DiffusionEstimate> {
    let radial = fit_displacement(set, DisplacementAxis::Radial)?;
    let dx = fit_displacement(set, DisplacementAxis::X)?;
    let dy = fit_displacement(set, DisplacementAxis::Y)?;
    let boot = bootstrap_se(set, |s| Ok(fit_displacement(s, DisplacementAxis::Radial)?.d), replicates, seed)?;
    Ok(DiffusionEstimate {
        method: EstimateMethod::DisplacementFit,
        d_x: dx.d,
        d_xy: 0.0,
        d_y: dy.d,
        d_eff: radial.d,
        two_sigma: 2.0 * boot.std_error,
        interval: boot.interval,
    })
}

/// Per-observation distances from the initial centre, for distribution plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementSample {
    pub time_hr: f64,
    pub plot_id: String,
    pub replicate_id: String,
    pub radial_cm: f64,
    pub abs_x_cm: f64,
    pub abs_y_cm: f64,
}

pub fn displacement_samples(set: &SnapshotSet) -> Vec<DisplacementSample> {
    let centres = initial_centres(set);
    let mut out = Vec::with_capacity(set.total_count());
    for s in set.snapshots() {
        for o in &s.observations {
            let c = centres[o.source as usize];
            let src = &set.sources()[o.source as usize];
            out.push(DisplacementSample {
                time_hr: s.time,
                plot_id: src.plot_id.clone(),
                replicate_id: src.replicate_id.clone(),
                radial_cm: (o.x - c[0]).hypot(o.y - c[1]),
                abs_x_cm: (o.x - c[0]).abs(),
                abs_y_cm: (o.y - c[1]).abs(),
            });
        }
    }
    out
}

/// Mean radial displacement per time with a bootstrap percentile interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementRow {
    pub time_hr: f64,
    pub count: usize,
    pub mean_radial_cm: f64,
    pub ci_low_cm: f64,
    pub ci_high_cm: f64,
}

pub fn displacement_table(set: &SnapshotSet, replicates: usize, seed: u64) -> Result<Vec<DisplacementRow>> {
    let centres = initial_centres(set);
    set.snapshots()
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let d = distances(s, &centres, DisplacementAxis::Radial)?;
            let boot = bootstrap_frames(&[d], |f| Ok(mean(&f[0])), replicates, seed.wrapping_add(k as u64))?;
            Ok(DisplacementRow {
                time_hr: s.time,
                count: s.observations.len(),
                mean_radial_cm: boot.estimate,
                ci_low_cm: boot.interval.0,
                ci_high_cm: boot.interval.1,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DomainConfig, Source};

    fn src() -> Source {
        Source {
            plot_id: "p".into(),
            replicate_id: "r".into(),
        }
    }

    #[test]
    fn frozen_particles_have_zero_rate() {
        let pts = vec![[10.0, 20.0], [30.0, 25.0], [50.0, 60.0]];
        let frames = [0.0, 1.0, 2.0, 4.0].iter().map(|&t| (t, pts.clone())).collect();
        let set = SnapshotSet::from_positions(DomainConfig::default(), src(), frames).unwrap();
        let cr = covariance_rate(&set, TimeWeighting::Uniform).unwrap();
        assert_eq!(cr.d, Mat2::ZERO);
        let fit = fit_displacement(&set, DisplacementAxis::Radial).unwrap();
        assert_eq!(fit.d, 0.0);
        assert!(fit.zero_variance);
    }

    #[test]
    fn only_initial_frame_is_an_error() {
        let set = SnapshotSet::from_positions(DomainConfig::default(), src(), vec![(0.0, vec![[1.0, 1.0], [2.0, 2.0]])]).unwrap();
        assert!(covariance_rate(&set, TimeWeighting::Uniform).is_err());
    }

    #[test]
    fn bootstrap_constant_and_single_replicate() {
        let frames = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0]];
        let b = bootstrap_frames(&frames, |_| Ok(7.0), 100, 1).unwrap();
        assert_eq!(b.std_error, 0.0);
        assert_eq!(b.interval, (7.0, 7.0));
        let b = bootstrap_frames(&frames, |f| Ok(mean(&f[0])), 1, 1).unwrap();
        assert_eq!(b.interval, (2.0, 2.0));
        let a = bootstrap_frames(&frames, |f| Ok(mean(&f[0])), 50, 9).unwrap();
        let c = bootstrap_frames(&frames, |f| Ok(mean(&f[0])), 50, 9).unwrap();
        assert_eq!(a, c);
    }
}
