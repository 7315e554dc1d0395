//! Discrete weak-form system `b = G w` for the Fokker-Planck model
//! `u_t = ∇·(D∇u) + ∇·(u∇V) + ∇·(u ∇K∗u)`.
//!
//! Separable test functions `ψ = φ_x φ_y φ_t`, `φ(x) = (1 − (x/mΔ)²)^p`, are
//! centred on every interior grid node where their support fits. All
//! integrals use trapezoidal weights, which are folded into the stencils.

mod assemble;
mod basis;

pub use assemble::{assemble, assemble_reference, WeakSystem};
pub use basis::{
    env_gradient, env_potential, interaction_kernel_stencils, kernel_gradient, spherical_bessel, spherical_bessel_derivative,
    KernelStencil,
};

use serde::{Deserialize, Serialize};

use crate::data::{Axis, Grid};
use crate::error::{Error, Result};

/// Separable polynomial bump test functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestFunctionSpec {
    /// Support half-widths in grid cells, (x, y, t).
    pub support: [usize; 3],
    /// Explicit degrees; derived from `tolerance` when absent.
    pub degrees: Option<[u32; 3]>,
    pub tolerance: f64,
    /// Highest derivative order taken along each axis.
    pub max_derivative: [u32; 3],
}

impl Default for TestFunctionSpec {
    fn default() -> Self {
        Self {
            support: [10, 10, 6],
            degrees: None,
            tolerance: 1e-10,
            max_derivative: [2, 2, 1],
        }
    }
}

impl TestFunctionSpec {
    pub fn resolved_degrees(&self) -> [u32; 3] {
        self.degrees.unwrap_or_else(|| {
            [0, 1, 2].map(|i| test_function_degree(self.support[i], self.max_derivative[i], self.tolerance))
        })
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let lens = [grid.x.len, grid.y.len, grid.t.len];
        for (i, name) in ["x", "y", "t"].iter().enumerate() {
            let m = self.support[i];
            if m < 2 {
                return Err(Error::Invalid(format!("test-function support along {name} must be >= 2 cells")));
            }
            if 2 * m >= lens[i] {
                return Err(Error::Invalid(format!(
                    "test-function support 2*{m} along {name} does not fit {} nodes",
                    lens[i]
                )));
            }
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Invalid(format!("support tolerance must be positive, got {}", self.tolerance)));
        }
        let p = self.resolved_degrees();
        for i in 0..3 {
            if p[i] < self.max_derivative[i] + 1 {
                return Err(Error::Invalid(format!(
                    "degree {} is too low for derivative order {}",
                    p[i], self.max_derivative[i]
                )));
            }
        }
        Ok(())
    }

    /// Number of query points on `grid`.
    pub fn query_count(&self, nx: usize, ny: usize, nt: usize) -> usize {
        let m = self.support;
        nx.saturating_sub(2 * m[0]) * ny.saturating_sub(2 * m[1]) * nt.saturating_sub(2 * m[2])
    }
}

/// Smallest degree for which `φ` drops below `tolerance` one cell inside its
/// support edge, and never below `max_derivative + 1`.
pub fn test_function_degree(m: usize, max_derivative: u32, tolerance: f64) -> u32 {
    let floor = max_derivative + 1;
    if m < 2 || tolerance >= 1.0 {
        return floor;
    }
    let l = m as f64;
    let ratio = (2.0 * l - 1.0) / (l * l);
    let p = (tolerance.ln() / ratio.ln()).ceil();
    (p.max(0.0) as u32).max(floor)
}

/// `φ`, `φ'` and `φ''` sampled on the `2m + 1` support nodes, each multiplied
/// by the grid spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisStencils {
    pub half_width: usize,
    pub degree: u32,
    pub value: Vec<f64>,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl AxisStencils {
    pub fn new(m: usize, degree: u32, spacing: f64) -> Self {
        let a = m as f64 * spacing;
        let p = degree as f64;
        let n = 2 * m + 1;
        let mut value = vec![0.0; n];
        let mut first = vec![0.0; n];
        let mut second = vec![0.0; n];
        for q in 1..n - 1 {
            let s = (q as f64 - m as f64) / m as f64;
            let g = 1.0 - s * s;
            let gp2 = if degree >= 2 { g.powi(degree as i32 - 2) } else { 0.0 };
            let gp1 = g.powi(degree as i32 - 1);
            value[q] = spacing * gp1 * g;
            first[q] = spacing * p * gp1 * (-2.0 * s) / a;
            second[q] = spacing * (-2.0 * p * gp1 + 4.0 * p * (p - 1.0) * s * s * gp2) / (a * a);
        }
        Self {
            half_width: m,
            degree,
            value,
            first,
            second,
        }
    }

    pub fn derivative(&self, order: u32) -> &[f64] {
        match order {
            0 => &self.value,
            1 => &self.first,
            _ => &self.second,
        }
    }
}

/// Stencils for all three axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencils {
    pub x: AxisStencils,
    pub y: AxisStencils,
    pub t: AxisStencils,
}

pub fn build_stencils(spec: &TestFunctionSpec, grid: &Grid) -> Result<Stencils> {
    spec.validate(grid)?;
    let p = spec.resolved_degrees();
    let make = |i: usize, axis: &Axis| AxisStencils::new(spec.support[i], p[i], axis.step);
    Ok(Stencils {
        x: make(0, &grid.x),
        y: make(1, &grid.y),
        t: make(2, &grid.t),
    })
}

/// Candidate terms and their basis parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LibrarySpec {
    /// Cosine modes per axis for the environmental potential.
    pub cosine_degree: usize,
    /// Number of spherical Bessel interaction kernels.
    pub kernel_count: usize,
    /// Kernel length scale ρ₀, cm.
    pub kernel_scale: f64,
    /// Kernel support radius in x-grid cells.
    pub kernel_radius: usize,
    pub include_potential: bool,
    pub include_interaction: bool,
    pub include_diffusion: bool,
    /// Replace the three diffusion columns by a single isotropic one.
    pub effective_diffusion: bool,
}

impl Default for LibrarySpec {
    fn default() -> Self {
        Self {
            cosine_degree: 9,
            kernel_count: 5,
            kernel_scale: 6.0,
            kernel_radius: 30,
            include_potential: true,
            include_interaction: false,
            include_diffusion: true,
            effective_diffusion: false,
        }
    }
}

impl LibrarySpec {
    /// Pure diffusion with the full anisotropic matrix.
    pub fn anisotropic() -> Self {
        Self {
            include_potential: false,
            include_interaction: false,
            ..Self::default()
        }
    }

    /// Pure isotropic diffusion: a single column.
    pub fn effective() -> Self {
        Self {
            effective_diffusion: true,
            ..Self::anisotropic()
        }
    }

    pub fn terms(&self) -> Vec<Term> {
        let mut out = Vec::new();
        if self.include_potential {
            for n in 1..=self.cosine_degree {
                for m in 1..=self.cosine_degree {
                    out.push(Term::Potential { n, m });
                }
            }
        }
        if self.include_interaction {
            out.extend((1..=self.kernel_count).map(|n| Term::Interaction { n }));
        }
        if self.include_diffusion {
            if self.effective_diffusion {
                out.push(Term::EffectiveDiffusion);
            } else {
                out.extend([Term::DiffusionXx, Term::DiffusionXy, Term::DiffusionYy]);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms().is_empty() {
            return Err(Error::Invalid("library has no terms".into()));
        }
        if self.include_potential && self.cosine_degree == 0 {
            return Err(Error::Invalid("cosine_degree must be >= 1".into()));
        }
        if self.include_interaction && (self.kernel_count == 0 || self.kernel_radius == 0 || !(self.kernel_scale > 0.0)) {
            return Err(Error::Invalid(
                "interaction kernels need kernel_count, kernel_radius and kernel_scale > 0".into(),
            ));
        }
        Ok(())
    }
}

/// One library column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Term {
    /// `V = cos(2πnx/L) cos(2πmy/W)`.
    Potential { n: usize, m: usize },
    /// `K = j_{n−1}(ρ/ρ₀)`.
    Interaction { n: usize },
    DiffusionXx,
    DiffusionXy,
    DiffusionYy,
    /// `D_x = D_y`, `D_xy = 0`.
    EffectiveDiffusion,
}

impl Term {
    pub fn label(&self) -> String {
        match self {
            Term::Potential { n, m } => format!("V[{n},{m}]"),
            Term::Interaction { n } => format!("K[{n}]"),
            Term::DiffusionXx => "D_x".into(),
            Term::DiffusionXy => "D_xy".into(),
            Term::DiffusionYy => "D_y".into(),
            Term::EffectiveDiffusion => "D_eff".into(),
        }
    }

    pub fn is_diffusion(&self) -> bool {
        matches!(
            self,
            Term::DiffusionXx | Term::DiffusionXy | Term::DiffusionYy | Term::EffectiveDiffusion
        )
    }

    /// Physical units of the coefficient.
    pub fn units(&self) -> &'static str {
        "cm^2/hr"
    }
}
