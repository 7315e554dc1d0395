//! Characteristic scales and dimensionless groups.

use ndarray::{Array2, Axis as NdAxis};
use serde::{Deserialize, Serialize};

use crate::conv::FrameConvolver;
use crate::data::{Axis, Grid};
use crate::density::{frame_mass, DensityField};
use crate::error::{Error, Result};
use crate::exec;
use crate::mat2::Mat2;
use crate::regression::SparseModel;
use crate::weakform::{env_gradient, env_potential, interaction_kernel_stencils, LibrarySpec, Term};

/// Coordinate map and magnitudes used to nondimensionalize a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleSet {
    /// Spatial map `x = A ξ`, cm.
    pub a: Mat2,
    /// hr.
    pub t_c: f64,
    /// `max û`, cm⁻².
    pub u_c: f64,
    /// `‖∇V_w‖₂`, cm²/hr.
    pub v_c: f64,
    /// Time-RMS of `‖∇K_w ∗ û‖₂`.
    pub k_c: f64,
    /// The model had no non-zero weights.
    pub empty_model: bool,
}

impl ScaleSet {
    /// `Λ = AᵀA`.
    pub fn lambda(&self) -> Mat2 {
        self.a.transpose() * self.a
    }

    /// Replace `A` by the diffusion-centric `(D t_c)^{1/2}`.
    pub fn diffusion_centric(self, d: Mat2) -> Result<Self> {
        let a = d
            .scale(self.t_c)
            .sqrt_spd()
            .ok_or_else(|| Error::Singular(format!("diffusion matrix {:?} is not positive definite", d.0)))?;
        Ok(Self { a, ..self })
    }
}

/// `V_w = Σ w_nm V_nm` on the spatial grid.
pub fn potential_field(model: &SparseModel, grid: &Grid) -> Array2<f64> {
    let length = [grid.x.end() - grid.x.start, grid.y.end() - grid.y.start];
    Array2::from_shape_fn((grid.x.len, grid.y.len), |(i, j)| {
        let (x, y) = (grid.x.node(i), grid.y.node(j));
        model
            .terms
            .iter()
            .zip(&model.weights)
            .filter_map(|(t, w)| match t {
                Term::Potential { n, m } if *w != 0.0 => Some(w * env_potential(*n, *m, length, x, y)),
                _ => None,
            })
            .sum()
    })
}

/// `‖∇V_w‖₂` over the plot by trapezoid quadrature.
pub fn potential_gradient_norm(model: &SparseModel, grid: &Grid) -> f64 {
    let length = [grid.x.end() - grid.x.start, grid.y.end() - grid.y.start];
    let active: Vec<(usize, usize, f64)> = model
        .terms
        .iter()
        .zip(&model.weights)
        .filter_map(|(t, w)| match t {
            Term::Potential { n, m } if *w != 0.0 => Some((*n, *m, *w)),
            _ => None,
        })
        .collect();
    if active.is_empty() {
        return 0.0;
    }
    let sq = Array2::from_shape_fn((grid.x.len, grid.y.len), |(i, j)| {
        let (x, y) = (grid.x.node(i), grid.y.node(j));
        let g = active.iter().fold([0.0, 0.0], |acc, &(n, m, w)| {
            let g = env_gradient(n, m, length, x, y);
            [acc[0] + w * g[0], acc[1] + w * g[1]]
        });
        g[0] * g[0] + g[1] * g[1]
    });
    frame_mass(&sq.view(), &grid.x, &grid.y).sqrt()
}

/// Time-RMS over the density's frames of `‖∇K_w ∗ û‖₂`.
pub fn interaction_norm(model: &SparseModel, density: &DensityField, lib: &LibrarySpec) -> Result<f64> {
    let weights: Vec<(usize, f64)> = model
        .terms
        .iter()
        .zip(&model.weights)
        .filter_map(|(t, w)| match t {
            Term::Interaction { n } if *w != 0.0 => Some((*n, *w)),
            _ => None,
        })
        .collect();
    if weights.is_empty() {
        return Ok(0.0);
    }
    let grid = density.grid;
    let count = weights.iter().map(|w| w.0).max().unwrap_or(0);
    let stencils = interaction_kernel_stencils(count, lib.kernel_scale, lib.kernel_radius, &grid);
    let mut gx = Array2::zeros(stencils[0].gx.dim());
    let mut gy = Array2::zeros(stencils[0].gy.dim());
    for &(n, w) in &weights {
        gx.scaled_add(w, &stencils[n - 1].gx);
        gy.scaled_add(w, &stencils[n - 1].gy);
    }
    let shape = (grid.x.len, grid.y.len);
    let cx = FrameConvolver::new(gx.view(), shape)?;
    let cy = FrameConvolver::new(gy.view(), shape)?;
    let per_frame: Vec<Result<f64>> = exec::map_range(grid.t.len, |k| {
        let f = density.values.index_axis(NdAxis(2), k);
        let fx = cx.apply(f)?;
        let fy = cy.apply(f)?;
        let sq = &fx * &fx + &fy * &fy;
        Ok(frame_mass(&sq.view(), &grid.x, &grid.y))
    });
    let mut acc = 0.0;
    for (k, v) in per_frame.into_iter().enumerate() {
        acc += grid.t.trapezoid_weight(k) * v?;
    }
    let span = grid.t.end() - grid.t.start;
    Ok((acc / span).sqrt())
}

/// Scales of a fitted model on its density. `t_c` defaults to the time
/// span of the density; `A` starts as the identity (cm).
pub fn characteristic_scales(
    model: &SparseModel,
    density: &DensityField,
    lib: &LibrarySpec,
    t_c: Option<f64>,
) -> Result<ScaleSet> {
    let grid = density.grid;
    let t_c = t_c.unwrap_or(grid.t.end() - grid.t.start);
    if !(t_c > 0.0) {
        return Err(Error::Invalid(format!("t_c must be positive, got {t_c}")));
    }
    let empty_model = model.weights.iter().all(|w| *w == 0.0);
    Ok(ScaleSet {
        a: Mat2::IDENTITY,
        t_c,
        u_c: density.max_value(),
        v_c: potential_gradient_norm(model, &grid),
        k_c: interaction_norm(model, density, lib)?,
        empty_model,
    })
}

/// Dimensionless groups in matrix form, their spectral norms, and the
/// isotropic reduction with `D = tr(D)/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiGroups {
    pub pi_v: Mat2,
    pub pi_k: Mat2,
    pub pi_d: Mat2,
    pub pi_v_norm: f64,
    pub pi_k_norm: f64,
    pub pi_d_norm: f64,
    /// `V_c / D`.
    pub isotropic_pi_v: f64,
    /// `t_c K_c U_c`.
    pub isotropic_pi_k: f64,
}

/// `Π_V = t_c V_c Λ⁻¹`, `Π_K = t_c K_c U_c |Λ|^{1/2} Λ⁻¹`, `Π_D = t_c A⁻¹ D A⁻¹`.
pub fn pi_groups(s: &ScaleSet, d: Mat2) -> Result<PiGroups> {
    let a_inv = s
        .a
        .inverse()
        .ok_or_else(|| Error::Singular("coordinate map A is singular".into()))?;
    let lambda = s.lambda();
    let l_inv = lambda
        .inverse()
        .ok_or_else(|| Error::Singular("Λ = AᵀA is singular".into()))?;
    if d.det().abs() <= 1e-300 {
        return Err(Error::Singular(format!("diffusion matrix {:?} is singular", d.0)));
    }
    let pi_v = l_inv.scale(s.t_c * s.v_c);
    let pi_k = l_inv.scale(s.t_c * s.k_c * s.u_c * lambda.det().abs().sqrt());
    let pi_d = (a_inv * d * a_inv).scale(s.t_c);
    let d_iso = 0.5 * d.trace();
    Ok(PiGroups {
        pi_v,
        pi_k,
        pi_d,
        pi_v_norm: pi_v.spectral_norm(),
        pi_k_norm: pi_k.spectral_norm(),
        pi_d_norm: pi_d.spectral_norm(),
        isotropic_pi_v: s.v_c / d_iso,
        isotropic_pi_k: s.t_c * s.k_c * s.u_c,
    })
}

/// `exp(−Π_V V)` normalized to unit trapezoid mass.
pub fn boltzmann_stationary(v: &Array2<f64>, pi_v: f64, x: &Axis, y: &Axis) -> Result<Array2<f64>> {
    if v.dim() != (x.len, y.len) {
        return Err(Error::Invalid(format!("potential shape {:?} does not match the grid", v.dim())));
    }
    if v.iter().any(|p| !p.is_finite()) {
        return Err(Error::Invalid("potential has non-finite values".into()));
    }
    let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
    let mut u = v.mapv(|p| (-pi_v * (p - vmin)).exp());
    let mass = frame_mass(&u.view(), x, y);
    u /= mass;
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::Solver;

    fn model(terms: Vec<Term>, weights: Vec<f64>) -> SparseModel {
        let n = terms.len();
        SparseModel {
            solver: Solver::Ols,
            terms,
            weights,
            std_errors: vec![0.0; n],
            support: Vec::new(),
            lambda: None,
            r_squared: None,
            aic: None,
            residual_norm2: 0.0,
            zero_model: false,
            rows: 0,
            particles: 0,
        }
    }

    #[test]
    fn identity_case() {
        let s = ScaleSet {
            a: Mat2::IDENTITY,
            t_c: 1.0,
            u_c: 1.0,
            v_c: 1.0,
            k_c: 1.0,
            empty_model: false,
        };
        let p = pi_groups(&s, Mat2::IDENTITY).unwrap();
        assert_eq!(p.pi_v, Mat2::IDENTITY);
        assert_eq!(p.pi_k, Mat2::IDENTITY);
        assert_eq!(p.pi_d, Mat2::IDENTITY);
        assert!(pi_groups(&s, Mat2::ZERO).is_err());
        let bad = ScaleSet { a: Mat2::ZERO, ..s };
        assert!(pi_groups(&bad, Mat2::IDENTITY).is_err());
    }

    #[test]
    fn diffusion_centric_gives_identity() {
        let d = Mat2::symmetric(8.0, 1.0, 9.0);
        let s = ScaleSet {
            a: Mat2::IDENTITY,
            t_c: 48.0,
            u_c: 0.01,
            v_c: 2.0,
            k_c: 3.0,
            empty_model: false,
        }
        .diffusion_centric(d)
        .unwrap();
        let p = pi_groups(&s, d).unwrap();
        assert!((p.pi_d - Mat2::IDENTITY).max_abs() < 1e-10);
        assert!((s.lambda().det().sqrt() - s.a.det().abs()).abs() < 1e-9 * s.a.det().abs());
    }

    #[test]
    fn single_mode_gradient_norm() {
        let grid = crate::data::DomainConfig::default().grid(0.0, 48.0).unwrap();
        let m = model(vec![Term::Potential { n: 2, m: 3 }], vec![1.5]);
        let exact = 1.5 * std::f64::consts::PI * (4.0f64 + 9.0).sqrt();
        let got = potential_gradient_norm(&m, &grid);
        assert!((got - exact).abs() < 1e-10 * exact, "{got} vs {exact}");
        let zero = model(vec![Term::Potential { n: 1, m: 1 }], vec![0.0]);
        assert_eq!(potential_gradient_norm(&zero, &grid), 0.0);
    }

    #[test]
    fn boltzmann_cases() {
        let x = Axis::spanning(0.0, 10.0, 41);
        let y = Axis::spanning(0.0, 10.0, 41);
        let flat = boltzmann_stationary(&Array2::from_elem((41, 41), 3.0), 0.0, &x, &y).unwrap();
        assert!(flat.iter().all(|v| (v - 0.01).abs() < 1e-12));
        // quadratic potential: Gaussian with variance 1/(2Π_V) per axis
        let pi = 2.0;
        let v = Array2::from_shape_fn((41, 41), |(i, j)| {
            let (a, b) = (x.node(i) - 5.0, y.node(j) - 5.0);
            a * a + b * b
        });
        let u = boltzmann_stationary(&v, pi, &x, &y).unwrap();
        let var: f64 = frame_mass(
            &Array2::from_shape_fn((41, 41), |(i, j)| u[[i, j]] * (x.node(i) - 5.0).powi(2)).view(),
            &x,
            &y,
        );
        assert!((var - 1.0 / (2.0 * pi)).abs() < 1e-6);
    }
}
