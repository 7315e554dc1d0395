//! Discrete convolutions used by the weak-form assembly.
//!
//! Convention throughout: `(S ⋆ g)[i] = Σ_q S[q] g[i + 2m − q]` for a stencil
//! of length `2m + 1`, evaluated only where the stencil fits ("valid").

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis as NdAxis};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::exec;

fn half_width(stencil: &[f64]) -> Result<usize> {
    if stencil.len() % 2 == 0 {
        return Err(Error::Invalid(format!("stencil length {} is not odd", stencil.len())));
    }
    Ok(stencil.len() / 2)
}

/// Valid convolution of `field` with a 1-D stencil along one axis.
pub fn convolve_axis(field: ArrayView3<f64>, stencil: &[f64], axis: usize) -> Result<Array3<f64>> {
    let m = half_width(stencil)?;
    let (nx, ny, nt) = field.dim();
    let mut shape = [nx, ny, nt];
    if shape[axis] <= 2 * m {
        return Err(Error::Invalid(format!(
            "stencil of length {} does not fit axis {axis} of length {}",
            stencil.len(),
            shape[axis]
        )));
    }
    shape[axis] -= 2 * m;
    let field = field.as_standard_layout();
    let field = field.view();
    let mut out = Array3::<f64>::zeros(shape);
    let plane = shape[1] * shape[2];
    let data = out.as_slice_mut().expect("standard layout");
    let w = stencil.len() - 1;
    exec::for_each_chunk_mut(data, plane, |i, chunk| {
        let mut chunk = ndarray::ArrayViewMut2::from_shape((shape[1], shape[2]), chunk).expect("plane shape");
        match axis {
            0 => {
                for (q, &c) in stencil.iter().enumerate() {
                    if c != 0.0 {
                        chunk.scaled_add(c, &field.index_axis(NdAxis(0), i + w - q));
                    }
                }
            }
            1 => {
                let src = field.index_axis(NdAxis(0), i);
                for (q, &c) in stencil.iter().enumerate() {
                    if c != 0.0 {
                        chunk.scaled_add(c, &src.slice(s![w - q..w - q + shape[1], ..]));
                    }
                }
            }
            _ => {
                let src = field.index_axis(NdAxis(0), i);
                for j in 0..shape[1] {
                    let lane = src.row(j);
                    let lane = lane.as_slice().expect("contiguous lane");
                    let mut o = chunk.row_mut(j);
                    let o = o.as_slice_mut().expect("contiguous lane");
                    for (q, &c) in stencil.iter().enumerate() {
                        if c == 0.0 {
                            continue;
                        }
                        let src = &lane[w - q..w - q + o.len()];
                        for (a, b) in o.iter_mut().zip(src) {
                            *a += c * b;
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Valid convolution with the tensor product of three 1-D stencils.
pub fn convolve_separable(field: ArrayView3<f64>, stencils: [&[f64]; 3]) -> Result<Array3<f64>> {
    let a = convolve_axis(field, stencils[2], 2)?;
    let b = convolve_axis(a.view(), stencils[0], 0)?;
    convolve_axis(b.view(), stencils[1], 1)
}

/// Outer product of three 1-D stencils as a dense 3-D stencil.
pub fn outer3(sx: &[f64], sy: &[f64], st: &[f64]) -> Array3<f64> {
    Array3::from_shape_fn((sx.len(), sy.len(), st.len()), |(a, b, c)| sx[a] * sy[b] * st[c])
}

fn check_fits(field: (usize, usize, usize), stencil: (usize, usize, usize)) -> Result<[usize; 3]> {
    let f = [field.0, field.1, field.2];
    let k = [stencil.0, stencil.1, stencil.2];
    let mut out = [0; 3];
    for d in 0..3 {
        if k[d] % 2 == 0 || k[d] > f[d] {
            return Err(Error::Invalid(format!(
                "stencil shape {stencil:?} does not fit field shape {field:?}"
            )));
        }
        out[d] = f[d] - k[d] + 1;
    }
    Ok(out)
}

/// Direct valid 3-D convolution. Quadratic in the stencil size; meant for
/// small problems and as a reference.
pub fn direct_convolve(field: ArrayView3<f64>, stencil: ArrayView3<f64>) -> Result<Array3<f64>> {
    let out_shape = check_fits(field.dim(), stencil.dim())?;
    let (kx, ky, kt) = stencil.dim();
    let mut out = Array3::<f64>::zeros(out_shape);
    for ((i, j, k), o) in out.indexed_iter_mut() {
        let mut acc = 0.0;
        for a in 0..kx {
            for b in 0..ky {
                for c in 0..kt {
                    acc += stencil[[a, b, c]] * field[[i + kx - 1 - a, j + ky - 1 - b, k + kt - 1 - c]];
                }
            }
        }
        *o = acc;
    }
    Ok(out)
}

fn fft_along(data: &mut ndarray::ArrayViewMutD<Complex64>, axis: usize, planner: &mut FftPlanner<f64>, inverse: bool) {
    let n = data.shape()[axis];
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let mut buf = vec![Complex64::default(); n];
    for mut lane in data.lanes_mut(NdAxis(axis)) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        fft.process(&mut buf);
        for (v, b) in lane.iter_mut().zip(&buf) {
            *v = *b;
        }
    }
}

fn fft_nd(data: &mut ndarray::ArrayViewMutD<Complex64>, planner: &mut FftPlanner<f64>, inverse: bool) {
    for axis in 0..data.ndim() {
        fft_along(data, axis, planner, inverse);
    }
    if inverse {
        let scale = 1.0 / data.len() as f64;
        data.mapv_inplace(|v| v * scale);
    }
}

/// Valid 3-D convolution through zero-padded FFTs.
pub fn fft_convolve(field: ArrayView3<f64>, stencil: ArrayView3<f64>) -> Result<Array3<f64>> {
    let out_shape = check_fits(field.dim(), stencil.dim())?;
    let (nx, ny, nt) = field.dim();
    let (kx, ky, kt) = stencil.dim();
    let full = (nx + kx - 1, ny + ky - 1, nt + kt - 1);
    let mut planner = FftPlanner::new();
    let mut f = Array3::<Complex64>::zeros(full);
    f.slice_mut(s![..nx, ..ny, ..nt]).zip_mut_with(&field, |a, &b| a.re = b);
    let mut g = Array3::<Complex64>::zeros(full);
    g.slice_mut(s![..kx, ..ky, ..kt]).zip_mut_with(&stencil, |a, &b| a.re = b);
    fft_nd(&mut f.view_mut().into_dyn(), &mut planner, false);
    fft_nd(&mut g.view_mut().into_dyn(), &mut planner, false);
    f.zip_mut_with(&g, |a, b| *a *= *b);
    fft_nd(&mut f.view_mut().into_dyn(), &mut planner, true);
    let valid = f.slice(s![
        kx - 1..kx - 1 + out_shape[0],
        ky - 1..ky - 1 + out_shape[1],
        kt - 1..kt - 1 + out_shape[2]
    ]);
    Ok(valid.mapv(|c| c.re))
}

/// Same-size 2-D convolution `out[x] = Σ_d K[d] f[x − d]` of many frames with
/// one centred stencil, treating values outside the frame as zero.
pub struct FrameConvolver {
    shape: (usize, usize),
    padded: (usize, usize),
    half: (usize, usize),
    kernel_hat: Array2<Complex64>,
}

impl FrameConvolver {
    /// `stencil` has odd dimensions with its centre at offset zero.
    pub fn new(stencil: ArrayView2<f64>, shape: (usize, usize)) -> Result<Self> {
        let (kx, ky) = stencil.dim();
        if kx % 2 == 0 || ky % 2 == 0 {
            return Err(Error::Invalid(format!("stencil shape {:?} must be odd", stencil.dim())));
        }
        let padded = (shape.0 + kx - 1, shape.1 + ky - 1);
        let mut k = Array2::<Complex64>::zeros(padded);
        k.slice_mut(s![..kx, ..ky]).zip_mut_with(&stencil, |a, &b| a.re = b);
        let mut planner = FftPlanner::new();
        fft_nd(&mut k.view_mut().into_dyn(), &mut planner, false);
        Ok(Self {
            shape,
            padded,
            half: (kx / 2, ky / 2),
            kernel_hat: k,
        })
    }

    pub fn apply(&self, frame: ArrayView2<f64>) -> Result<Array2<f64>> {
        if frame.dim() != self.shape {
            return Err(Error::Invalid(format!(
                "frame shape {:?} differs from planned {:?}",
                frame.dim(),
                self.shape
            )));
        }
        let mut planner = FftPlanner::new();
        let mut f = Array2::<Complex64>::zeros(self.padded);
        f.slice_mut(s![..self.shape.0, ..self.shape.1])
            .zip_mut_with(&frame, |a, &b| a.re = b);
        fft_nd(&mut f.view_mut().into_dyn(), &mut planner, false);
        f.zip_mut_with(&self.kernel_hat, |a, b| *a *= *b);
        fft_nd(&mut f.view_mut().into_dyn(), &mut planner, true);
        let (hx, hy) = self.half;
        Ok(f.slice(s![hx..hx + self.shape.0, hy..hy + self.shape.1]).mapv(|c| c.re))
    }
}

/// Reference implementation of [`FrameConvolver::apply`].
pub fn direct_frame_convolve(frame: ArrayView2<f64>, stencil: ArrayView2<f64>) -> Array2<f64> {
    let (nx, ny) = frame.dim();
    let (kx, ky) = stencil.dim();
    let (hx, hy) = ((kx / 2) as isize, (ky / 2) as isize);
    Array2::from_shape_fn((nx, ny), |(i, j)| {
        let mut acc = 0.0;
        for a in 0..kx {
            for b in 0..ky {
                let si = i as isize - (a as isize - hx);
                let sj = j as isize - (b as isize - hy);
                if si >= 0 && sj >= 0 && (si as usize) < nx && (sj as usize) < ny {
                    acc += stencil[[a, b]] * frame[[si as usize, sj as usize]];
                }
            }
        }
        acc
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random3(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    fn max_rel(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
    }

    #[test]
    fn delta_stencil_is_identity_on_valid_region() {
        let f = random3((9, 8, 7), 1);
        let mut d = Array3::zeros((3, 5, 3));
        d[[1, 2, 1]] = 1.0;
        let out = direct_convolve(f.view(), d.view()).unwrap();
        assert_eq!(out, f.slice(s![1..8, 2..6, 1..6]));
        let out = fft_convolve(f.view(), d.view()).unwrap();
        assert!(max_rel(&out, &f.slice(s![1..8, 2..6, 1..6]).to_owned()) < 1e-14);
    }

    #[test]
    fn fft_matches_direct() {
        let f = random3((16, 16, 16), 2);
        let k = random3((5, 7, 3), 3);
        let a = fft_convolve(f.view(), k.view()).unwrap();
        let b = direct_convolve(f.view(), k.view()).unwrap();
        assert_eq!(a.dim(), (12, 10, 14));
        assert!(max_rel(&a, &b) < 1e-12);
    }

    #[test]
    fn separable_matches_full() {
        let f = random3((14, 13, 15), 4);
        let sx = [0.3, -1.0, 2.0, 0.5, 0.1];
        let sy = [1.0, 2.0, -0.7];
        let st = [0.2, 0.4, 1.0, -0.4, 0.2, 0.9, 0.3];
        let a = convolve_separable(f.view(), [&sx, &sy, &st]).unwrap();
        let b = direct_convolve(f.view(), outer3(&sx, &sy, &st).view()).unwrap();
        assert!(max_rel(&a, &b) < 1e-12);
    }

    #[test]
    fn one_dimensional_convention() {
        let f = Array3::from_shape_fn((1, 1, 5), |(_, _, k)| [1.0, 2.0, 4.0, 8.0, 16.0][k]);
        let out = convolve_axis(f.view(), &[1.0, 10.0, 100.0], 2).unwrap();
        // out[0] = 1·g[2] + 10·g[1] + 100·g[0]
        assert_eq!(out.as_slice().unwrap(), &[124.0, 248.0, 496.0]);
        assert!(convolve_axis(f.view(), &[1.0, 1.0], 2).is_err());
        assert!(convolve_axis(f.view(), &[1.0; 3], 0).is_err());
    }

    #[test]
    fn frame_convolver_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = Array2::from_shape_simple_fn((11, 9), || rng.random_range(0.0..1.0));
        let k = Array2::from_shape_simple_fn((7, 5), || rng.random_range(-1.0..1.0));
        let conv = FrameConvolver::new(k.view(), (11, 9)).unwrap();
        let a = conv.apply(f.view()).unwrap();
        let b = direct_frame_convolve(f.view(), k.view());
        let err = a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(err < 1e-12, "{err}");
    }
}
