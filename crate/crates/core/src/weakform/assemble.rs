use std::io::Write;

use ndarray::{Array3, ArrayView3, Axis as NdAxis, Zip};

use super::basis::{env_gradient, interaction_kernel_stencils, KernelStencil};
use super::{build_stencils, LibrarySpec, Stencils, TestFunctionSpec, Term};
use crate::conv::{self, convolve_axis, direct_convolve, direct_frame_convolve, outer3, FrameConvolver};
use crate::density::DensityField;
use crate::error::{Error, Result};
use crate::exec;

/// Assembled weak-form system. `G` is stored by column; row `k` is the
/// query point with flat index `k` in the `query_shape` block (t fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct WeakSystem {
    pub b: Vec<f64>,
    pub columns: Vec<Vec<f64>>,
    pub terms: Vec<Term>,
    /// Physical coefficient = fitted coefficient × scale.
    pub column_scale: Vec<f64>,
    pub query_shape: [usize; 3],
    /// Grid index of the first query point.
    pub query_origin: [usize; 3],
    /// `max û`, used to prescale interaction columns.
    pub density_scale: f64,
}

impl WeakSystem {
    pub fn rows(&self) -> usize {
        self.b.len()
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column_norms(&self) -> Vec<f64> {
        self.columns.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
    }

    /// Keep only the listed columns, in the given order.
    pub fn select(&self, cols: &[usize]) -> WeakSystem {
        WeakSystem {
            b: self.b.clone(),
            columns: cols.iter().map(|&j| self.columns[j].clone()).collect(),
            terms: cols.iter().map(|&j| self.terms[j]).collect(),
            column_scale: cols.iter().map(|&j| self.column_scale[j]).collect(),
            query_shape: self.query_shape,
            query_origin: self.query_origin,
            density_scale: self.density_scale,
        }
    }

    /// Little-endian dump: magic `FPWSYS01`, `u64` rows, `u64` cols, then `b`
    /// followed by each column of `G`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"FPWSYS01")?;
        w.write_all(&(self.rows() as u64).to_le_bytes())?;
        w.write_all(&(self.cols() as u64).to_le_bytes())?;
        for v in self.b.iter().chain(self.columns.iter().flatten()) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

fn scale_along(a: ArrayView3<f64>, axis: usize, weights: &[f64]) -> Array3<f64> {
    let mut out = a.to_owned();
    for (i, mut lane) in out.axis_iter_mut(NdAxis(axis)).enumerate() {
        lane *= weights[i];
    }
    out
}

fn flatten(a: Array3<f64>) -> Vec<f64> {
    if a.is_standard_layout() {
        a.into_raw_vec_and_offset().0
    } else {
        a.iter().copied().collect()
    }
}

fn check_density(density: &DensityField) -> Result<f64> {
    if let Some(frame) = density.first_non_finite_frame() {
        return Err(Error::NonFinite { frame });
    }
    let uc = density.max_value();
    if !(uc > 0.0) {
        return Err(Error::Invalid("density field is identically zero".into()));
    }
    Ok(uc)
}

/// Interaction-kernel flux `u (∇K ∗ u)` per frame, both components.
fn interaction_flux(u: ArrayView3<f64>, kernel: &KernelStencil, fast: bool) -> Result<[Array3<f64>; 2]> {
    let (nx, ny, nt) = u.dim();
    let convolvers = if fast {
        Some([
            FrameConvolver::new(kernel.gx.view(), (nx, ny))?,
            FrameConvolver::new(kernel.gy.view(), (nx, ny))?,
        ])
    } else {
        None
    };
    let frames: Vec<Result<[ndarray::Array2<f64>; 2]>> = exec::map_range(nt, |k| {
        let f = u.index_axis(NdAxis(2), k);
        Ok(match &convolvers {
            Some([cx, cy]) => [cx.apply(f)?, cy.apply(f)?],
            None => [
                direct_frame_convolve(f, kernel.gx.view()),
                direct_frame_convolve(f, kernel.gy.view()),
            ],
        })
    });
    let mut fx = Array3::zeros((nx, ny, nt));
    let mut fy = Array3::zeros((nx, ny, nt));
    for (k, r) in frames.into_iter().enumerate() {
        let [a, b] = r?;
        fx.index_axis_mut(NdAxis(2), k).assign(&a);
        fy.index_axis_mut(NdAxis(2), k).assign(&b);
    }
    fx *= &u;
    fy *= &u;
    Ok([fx, fy])
}

/// Assemble `b` and `G` on all interior query points.
pub fn assemble(density: &DensityField, lib: &LibrarySpec, tf: &TestFunctionSpec) -> Result<WeakSystem> {
    let uc = check_density(density)?;
    lib.validate()?;
    let grid = density.grid;
    let st = build_stencils(tf, &grid)?;
    let Stencils { x: sx, y: sy, t: stt } = &st;
    let u = density.values.view();
    let terms = lib.terms();

    let ut = convolve_axis(u, &stt.value, 2)?;
    let b = {
        let a = convolve_axis(u, &stt.first, 2)?;
        let a = convolve_axis(a.view(), &sx.value, 0)?;
        convolve_axis(a.view(), &sy.value, 1)?
    };
    let query_shape = {
        let d = b.dim();
        [d.0, d.1, d.2]
    };

    // x-passes of Ut with φ, φ', φ'' are reused by the diffusion columns
    let xpass = |s: &[f64]| convolve_axis(ut.view(), s, 0);

    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(terms.len());
    let mut column_scale = Vec::with_capacity(terms.len());

    if lib.include_potential {
        let jv = lib.cosine_degree;
        let length = [grid.x.end() - grid.x.start, grid.y.end() - grid.y.start];
        if grid.x.len < 4 * jv || grid.y.len < 4 * jv {
            log::warn!(
                "grid {}x{} may alias cosine modes up to {jv}",
                grid.x.len,
                grid.y.len
            );
        }
        let xs = grid.x.nodes();
        let per_n: Vec<Result<Vec<Vec<f64>>>> = exec::map_range(jv, |i| {
            let n = i + 1;
            // ∂xV = sx_n(x) cos_m(y), ∂yV = cos_n(x) sy_m(y)
            let dx_w: Vec<f64> = xs.iter().map(|&x| env_gradient(n, 0, length, x, 0.0)[0]).collect();
            let cx_w: Vec<f64> = xs.iter().map(|&x| (2.0 * std::f64::consts::PI * n as f64 * x / length[0]).cos()).collect();
            let x1 = convolve_axis(scale_along(ut.view(), 0, &dx_w).view(), &sx.first, 0)?;
            let x0 = convolve_axis(scale_along(ut.view(), 0, &cx_w).view(), &sx.value, 0)?;
            let ny = ut.dim().1;
            (1..=jv)
                .map(|m| {
                    let k = 2.0 * std::f64::consts::PI * m as f64 / length[1];
                    let all_y = grid.y.nodes();
                    let cy: Vec<f64> = all_y.iter().map(|&y| (k * y).cos()).collect();
                    let dy: Vec<f64> = all_y.iter().map(|&y| -k * (k * y).sin()).collect();
                    debug_assert_eq!(cy.len(), ny);
                    let mut a = convolve_axis(scale_along(x1.view(), 1, &cy).view(), &sy.value, 1)?;
                    let c = convolve_axis(scale_along(x0.view(), 1, &dy).view(), &sy.first, 1)?;
                    a += &c;
                    Ok(flatten(a))
                })
                .collect()
        });
        for r in per_n {
            columns.extend(r?);
        }
        column_scale.extend(std::iter::repeat_n(1.0, jv * jv));
    }

    if lib.include_interaction {
        let kernels = interaction_kernel_stencils(lib.kernel_count, lib.kernel_scale, lib.kernel_radius, &grid);
        for kernel in &kernels {
            let [fx, fy] = interaction_flux(u, kernel, true)?;
            let mut a = conv::convolve_separable(fx.view(), [&sx.first, &sy.value, &stt.value])?;
            let c = conv::convolve_separable(fy.view(), [&sx.value, &sy.first, &stt.value])?;
            a += &c;
            a /= uc;
            columns.push(flatten(a));
            column_scale.push(1.0 / uc);
        }
    }

    if lib.include_diffusion {
        let xx = convolve_axis(xpass(&sx.second)?.view(), &sy.value, 1)?;
        let yy = convolve_axis(xpass(&sx.value)?.view(), &sy.second, 1)?;
        if lib.effective_diffusion {
            columns.push(flatten(xx + yy));
            column_scale.push(1.0);
        } else {
            let xy = convolve_axis(xpass(&sx.first)?.view(), &sy.first, 1)? * 2.0;
            columns.extend([flatten(xx), flatten(xy), flatten(yy)]);
            column_scale.extend([1.0; 3]);
        }
    }

    debug_assert_eq!(columns.len(), terms.len());
    Ok(WeakSystem {
        b: flatten(b),
        columns,
        terms,
        column_scale,
        query_shape,
        query_origin: tf.support,
        density_scale: uc,
    })
}

/// Column-by-column assembly with dense 3-D stencils and direct
/// convolutions. Much slower than [`assemble`]; used to check it.
pub fn assemble_reference(density: &DensityField, lib: &LibrarySpec, tf: &TestFunctionSpec) -> Result<WeakSystem> {
    let uc = check_density(density)?;
    lib.validate()?;
    let grid = density.grid;
    let st = build_stencils(tf, &grid)?;
    let u = density.values.view();
    let psi = |ax: u32, ay: u32, at: u32| outer3(st.x.derivative(ax), st.y.derivative(ay), st.t.derivative(at));
    let b = direct_convolve(u, psi(0, 0, 1).view())?;
    let query_shape = {
        let d = b.dim();
        [d.0, d.1, d.2]
    };
    let length = [grid.x.end() - grid.x.start, grid.y.end() - grid.y.start];
    let kernels = if lib.include_interaction {
        interaction_kernel_stencils(lib.kernel_count, lib.kernel_scale, lib.kernel_radius, &grid)
    } else {
        Vec::new()
    };
    let terms = lib.terms();
    let mut columns = Vec::new();
    let mut column_scale = Vec::new();
    for term in &terms {
        let (col, scale) = match *term {
            Term::Potential { n, m } => {
                let mut fx = u.to_owned();
                let mut fy = u.to_owned();
                Zip::indexed(&mut fx).and(&mut fy).for_each(|(i, j, _), a, c| {
                    let g = env_gradient(n, m, length, grid.x.node(i), grid.y.node(j));
                    *a *= g[0];
                    *c *= g[1];
                });
                let a = direct_convolve(fx.view(), psi(1, 0, 0).view())?;
                let c = direct_convolve(fy.view(), psi(0, 1, 0).view())?;
                (a + c, 1.0)
            }
            Term::Interaction { n } => {
                let [fx, fy] = interaction_flux(u, &kernels[n - 1], false)?;
                let a = direct_convolve(fx.view(), psi(1, 0, 0).view())?;
                let c = direct_convolve(fy.view(), psi(0, 1, 0).view())?;
                ((a + c) / uc, 1.0 / uc)
            }
            Term::DiffusionXx => (direct_convolve(u, psi(2, 0, 0).view())?, 1.0),
            Term::DiffusionXy => (direct_convolve(u, psi(1, 1, 0).view())? * 2.0, 1.0),
            Term::DiffusionYy => (direct_convolve(u, psi(0, 2, 0).view())?, 1.0),
            Term::EffectiveDiffusion => {
                let a = direct_convolve(u, psi(2, 0, 0).view())?;
                (a + direct_convolve(u, psi(0, 2, 0).view())?, 1.0)
            }
        };
        columns.push(flatten(col));
        column_scale.push(scale);
    }
    Ok(WeakSystem {
        b: flatten(b),
        columns,
        terms,
        column_scale,
        query_shape,
        query_origin: tf.support,
        density_scale: uc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DomainConfig;

    fn blob() -> DensityField {
        let grid = DomainConfig {
            grid_nx: 28,
            grid_ny: 26,
            grid_nt: 16,
            ..Default::default()
        }
        .grid(0.0, 10.0)
        .unwrap();
        DensityField::from_fn(grid, |x, y, t| {
            let v = 200.0 + 30.0 * t;
            (-((x - 80.0).powi(2) + 0.5 * (x - 80.0) * (y - 95.0) + (y - 95.0).powi(2)) / (2.0 * v)).exp()
                / (2.0 * std::f64::consts::PI * v)
                + 1e-5 * (x / 40.0).sin().powi(2)
        })
    }

    #[test]
    fn factored_assembly_matches_reference() {
        let d = blob();
        let tf = TestFunctionSpec {
            support: [4, 4, 3],
            ..Default::default()
        };
        let lib = LibrarySpec {
            cosine_degree: 3,
            kernel_count: 2,
            kernel_radius: 5,
            include_interaction: true,
            ..Default::default()
        };
        let fast = assemble(&d, &lib, &tf).unwrap();
        let slow = assemble_reference(&d, &lib, &tf).unwrap();
        assert_eq!(fast.terms, slow.terms);
        assert_eq!(fast.query_shape, [20, 18, 10]);
        assert_eq!(fast.rows(), 20 * 18 * 10);
        let rel = |a: &[f64], b: &[f64]| {
            let s = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / s
        };
        assert!(rel(&fast.b, &slow.b) < 1e-12);
        for (j, (a, b)) in fast.columns.iter().zip(&slow.columns).enumerate() {
            assert!(rel(a, b) < 1e-11, "column {j} ({:?}): {}", fast.terms[j], rel(a, b));
        }
        assert_eq!(fast.column_scale, slow.column_scale);
    }

    #[test]
    fn constant_density_gives_zero_derivative_columns() {
        let grid = DomainConfig {
            grid_nx: 32,
            grid_ny: 32,
            grid_nt: 16,
            ..Default::default()
        }
        .grid(0.0, 1.0)
        .unwrap();
        let d = DensityField::from_fn(grid, |_, _, _| 3e-5);
        let tf = TestFunctionSpec::default();
        let sys = assemble(&d, &LibrarySpec::anisotropic(), &tf).unwrap();
        // natural magnitude: u times the absolute mass of the largest stencil
        let st = build_stencils(&tf, &grid).unwrap();
        let mass = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
        let scale = 3e-5 * mass(&st.x.second) * mass(&st.y.second) * mass(&st.t.first);
        assert!(sys.b.iter().all(|v| v.abs() < 1e-12 * scale));
        assert!(sys.columns[1].iter().all(|v| v.abs() < 1e-12 * scale));
        // Σφ'' is zero only up to trapezoid error
        let xx_scale = 3e-5 * mass(&st.x.second) * mass(&st.y.value) * mass(&st.t.value);
        for c in [&sys.columns[0], &sys.columns[2]] {
            assert!(c.iter().all(|v| v.abs() < 1e-8 * xx_scale));
        }
    }

    #[test]
    fn non_finite_density_names_frame() {
        let mut d = blob();
        d.values[[3, 4, 7]] = f64::NAN;
        let err = assemble(&d, &LibrarySpec::anisotropic(), &TestFunctionSpec::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { frame: 7 }));
    }
}
