//! Covariance-scaled Gaussian kernel density estimation with linear
//! interpolation between snapshot times.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::data::{Axis, Grid, SnapshotSet};
use crate::density::DensityField;
use crate::error::{Error, Result};
use crate::exec;
use crate::mat2::Mat2;

/// Kernel evaluation stops at this Mahalanobis radius.
pub const TRUNCATION_RADIUS: f64 = 6.0;

/// Relative eigenvalue floor below which a covariance counts as singular.
const SINGULAR_RTOL: f64 = 1e-10;

/// Unbiased sample covariance of a snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub cov: Mat2,
    pub mean: [f64; 2],
    pub count: usize,
    /// All points collinear (or coincident).
    pub singular: bool,
}

pub fn sample_covariance(points: &[[f64; 2]]) -> Result<CovarianceEstimate> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "covariance needs at least 2 points, got {n}"
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mean = points
        .iter()
        .fold([0.0, 0.0], |acc, p| [acc[0] + p[0], acc[1] + p[1]]);
    let mean = [mean[0] * inv_n, mean[1] * inv_n];
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mean[0], p[1] - mean[1]);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let s = 1.0 / (n - 1) as f64;
    let cov = Mat2::symmetric(sxx * s, sxy * s, syy * s);
    let [lo, hi] = cov.sym_eigenvalues();
    Ok(CovarianceEstimate {
        cov,
        mean,
        count: n,
        singular: hi <= 0.0 || lo <= SINGULAR_RTOL * hi,
    })
}

/// Silverman's rule of thumb in two dimensions, `h = N^(-1/6)`.
pub fn silverman_bandwidth(n: usize) -> f64 {
    (n.max(1) as f64).powf(-1.0 / 6.0)
}

/// Normalized bivariate Gaussian with a fixed covariance.
#[derive(Debug, Clone, Copy)]
pub struct GaussianKernel {
    cov: Mat2,
    precision: Mat2,
    norm: f64,
}

impl GaussianKernel {
    pub fn new(cov: Mat2) -> Result<Self> {
        if !cov.is_spd() {
            return Err(Error::Singular(format!("kernel covariance {:?} is not positive definite", cov.0)));
        }
        let precision = cov.inverse().expect("SPD matrices are invertible");
        Ok(Self {
            cov,
            precision,
            norm: 1.0 / (2.0 * PI * cov.det().sqrt()),
        })
    }

    /// Kernel with covariance `h² C`, falling back to an isotropic kernel of
    /// variance `h² tr(C)/2` when `C` is singular.
    pub fn bandwidth_scaled(cov: Mat2, h: f64) -> Result<Self> {
        let scaled = cov.scale(h * h);
        if scaled.is_spd() {
            return Self::new(scaled);
        }
        let var = 0.5 * h * h * cov.trace();
        if !(var > 0.0) {
            return Err(Error::Singular("degenerate covariance with zero trace".into()));
        }
        log::warn!(
            "singular covariance {:?}; using isotropic kernel with variance {var}",
            cov.0
        );
        Self::new(Mat2::scaled(var))
    }

    pub fn covariance(&self) -> Mat2 {
        self.cov
    }

    /// Mahalanobis radius squared of offset `d`.
    #[inline]
    pub fn mahalanobis2(&self, d: [f64; 2]) -> f64 {
        self.precision.quad(d)
    }

    #[inline]
    pub fn value(&self, d: [f64; 2]) -> f64 {
        self.norm * (-0.5 * self.mahalanobis2(d)).exp()
    }

    /// Laplacian `ΔG(d) = G(d)(|C⁻¹d|² − tr C⁻¹)`.
    #[inline]
    pub fn laplacian(&self, d: [f64; 2]) -> f64 {
        let w = self.precision.apply(d);
        self.value(d) * (w[0] * w[0] + w[1] * w[1] - self.precision.trace())
    }

    /// Half-widths of the truncation ellipse's bounding box.
    fn extent(&self) -> [f64; 2] {
        [
            TRUNCATION_RADIUS * self.cov.get(0, 0).sqrt(),
            TRUNCATION_RADIUS * self.cov.get(1, 1).sqrt(),
        ]
    }
}

fn index_range(axis: &Axis, center: f64, half: f64) -> std::ops::Range<usize> {
    let lo = ((center - half - axis.start) / axis.step).ceil().max(0.0) as usize;
    let hi = ((center + half - axis.start) / axis.step).floor();
    if hi < 0.0 {
        return 0..0;
    }
    let hi = (hi as usize + 1).min(axis.len);
    lo.min(hi)..hi
}

/// `scale · Σ_i f(x − x_i)` over the spatial grid, truncated to the kernel's
/// support ellipse. Parallel over x-rows.
fn accumulate<F>(points: &[[f64; 2]], kernel: &GaussianKernel, grid: &Grid, scale: f64, f: F) -> Array2<f64>
where
    F: Fn(&GaussianKernel, [f64; 2]) -> f64 + Sync + Send,
{
    let (nx, ny) = (grid.x.len, grid.y.len);
    let [ex, ey] = kernel.extent();
    let r2 = TRUNCATION_RADIUS * TRUNCATION_RADIUS;
    let mut out = Array2::<f64>::zeros((nx, ny));
    let slice = out.as_slice_mut().expect("standard layout");
    exec::for_each_chunk_mut(slice, ny, |i, row| {
        let x = grid.x.node(i);
        for p in points {
            let dx = x - p[0];
            if dx.abs() > ex {
                continue;
            }
            for j in index_range(&grid.y, p[1], ey) {
                let d = [dx, grid.y.node(j) - p[1]];
                if kernel.mahalanobis2(d) <= r2 {
                    row[j] += f(kernel, d);
                }
            }
        }
        for v in row.iter_mut() {
            *v *= scale;
        }
    });
    out
}

/// One KDE frame: `(1/N) Σ_i G(x − x_i)` with `G` the Gaussian of covariance
/// `h² C`. The kernel integrates to one on the plane; mass falling outside
/// the plot is not renormalized.
pub fn estimate_density(points: &[[f64; 2]], cov: Mat2, h: f64, grid: &Grid) -> Result<Array2<f64>> {
    if points.is_empty() {
        return Err(Error::InsufficientData("no points to smooth".into()));
    }
    if !(h > 0.0) {
        return Err(Error::Invalid(format!("bandwidth must be positive, got {h}")));
    }
    let kernel = GaussianKernel::bandwidth_scaled(cov, h)?;
    Ok(accumulate(points, &kernel, grid, 1.0 / points.len() as f64, |k, d| k.value(d)))
}

/// Leading-order expected KDE error under i.i.d. `N(0, σ² I)` position noise:
/// `(σ² / 2N) Σ_i ΔG(x − x_i; C_h)` where `C_h` is the kernel covariance.
///
/// Magnitude is `O(σ/h)` relative to the estimate itself.
pub fn kde_bias_estimate(points: &[[f64; 2]], sigma: f64, kernel_cov: Mat2, grid: &Grid) -> Result<Array2<f64>> {
    if !(sigma >= 0.0) {
        return Err(Error::Invalid(format!("noise level must be >= 0, got {sigma}")));
    }
    if points.is_empty() || sigma == 0.0 {
        return Ok(Array2::zeros((grid.x.len, grid.y.len)));
    }
    let kernel = GaussianKernel::new(kernel_cov)?;
    let scale = 0.5 * sigma * sigma / points.len() as f64;
    Ok(accumulate(points, &kernel, grid, scale, |k, d| k.laplacian(d)))
}

/// Linear interpolation of snapshot frames onto the time axis of `grid`.
/// Frames are `(time, frame)` with strictly increasing times; the grid's
/// time axis must lie within them.
pub fn interpolate_time(frames: &[(f64, Array2<f64>)], grid: &Grid) -> Result<DensityField> {
    if frames.len() < 2 {
        return Err(Error::InsufficientData("need at least two snapshot frames".into()));
    }
    if grid.t.len < frames.len() {
        return Err(Error::Invalid(format!(
            "target nt = {} is smaller than the {} snapshots",
            grid.t.len,
            frames.len()
        )));
    }
    let (nx, ny, nt) = grid.shape();
    for (t, f) in frames {
        if f.dim() != (nx, ny) {
            return Err(Error::Invalid(format!("frame at t = {t} has shape {:?}", f.dim())));
        }
    }
    let times: Vec<f64> = frames.iter().map(|f| f.0).collect();
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Invalid("snapshot times must increase".into()));
    }
    let tol = 1e-9 * (times[times.len() - 1] - times[0]).abs().max(1.0);
    if grid.t.start < times[0] - tol || grid.t.end() > times[times.len() - 1] + tol {
        return Err(Error::Invalid(format!(
            "time axis [{}, {}] extends past the snapshots",
            grid.t.start,
            grid.t.end()
        )));
    }

    let slabs: Vec<Array2<f64>> = exec::map_range(nt, |n| {
        let t = grid.t.node(n);
        let k = times.partition_point(|&s| s <= t).clamp(1, times.len() - 1) - 1;
        let (t0, t1) = (times[k], times[k + 1]);
        let a = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        if a == 0.0 {
            frames[k].1.clone()
        } else if a == 1.0 {
            frames[k + 1].1.clone()
        } else {
            &frames[k].1 * (1.0 - a) + &frames[k + 1].1 * a
        }
    });
    let mut values = Array3::<f64>::zeros((nx, ny, nt));
    for (n, slab) in slabs.iter().enumerate() {
        values.index_axis_mut(ndarray::Axis(2), n).assign(slab);
    }
    DensityField::new(*grid, values)
}

/// Per-snapshot KDE summary kept for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameInfo {
    pub time: f64,
    pub count: usize,
    pub bandwidth: f64,
    pub covariance: CovarianceEstimate,
}

/// KDE of every snapshot on the domain's grid, interpolated in time.
pub fn density_from_snapshots(set: &SnapshotSet) -> Result<(DensityField, Vec<FrameInfo>)> {
    let times = set.times();
    let grid = set.domain().grid(times[0], times[times.len() - 1])?;
    let per_frame: Vec<Result<(FrameInfo, Array2<f64>)>> = exec::map_range(set.len(), |k| {
        let pts = set.positions(k);
        let covariance = sample_covariance(&pts)?;
        let bandwidth = silverman_bandwidth(pts.len());
        let frame = estimate_density(&pts, covariance.cov, bandwidth, &grid)?;
        Ok((
            FrameInfo {
                time: times[k],
                count: pts.len(),
                bandwidth,
                covariance,
            },
            frame,
        ))
    });
    let mut info = Vec::with_capacity(set.len());
    let mut frames = Vec::with_capacity(set.len());
    for r in per_frame {
        let (i, f) = r?;
        frames.push((i.time, f));
        info.push(i);
    }
    Ok((interpolate_time(&frames, &grid)?, info))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DomainConfig;
    use crate::density::frame_mass;

    fn grid(n: usize) -> Grid {
        DomainConfig {
            grid_nx: n,
            grid_ny: n,
            grid_nt: 4,
            ..Default::default()
        }
        .grid(0.0, 1.0)
        .unwrap()
    }

    #[test]
    fn covariance_examples() {
        let c = sample_covariance(&[[0.0, 0.0], [2.0, 0.0]]).unwrap();
        assert_eq!(c.cov, Mat2::symmetric(2.0, 0.0, 0.0));
        assert!(c.singular);

        let c = sample_covariance(&[[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]]).unwrap();
        assert!((c.cov - Mat2::symmetric(1.0, 0.0, 1.0 / 3.0)).max_abs() < 1e-15);
        assert!(!c.singular);
        assert_eq!(c.mean, [1.0, 1.0 / 3.0]);

        assert!(matches!(sample_covariance(&[[1.0, 1.0]]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn silverman_examples() {
        assert_eq!(silverman_bandwidth(1), 1.0);
        assert!((silverman_bandwidth(64) - 0.5).abs() < 1e-15);
        // 160^(-1/6), evaluated independently as exp(-ln(160)/6)
        let expected = (-(160f64).ln() / 6.0).exp();
        assert!((silverman_bandwidth(160) - expected).abs() < 1e-14);
        assert!((silverman_bandwidth(160) - 0.4290).abs() < 5e-4);
    }

    #[test]
    fn single_particle_unit_gaussian() {
        // 175 / 174 spacing puts a node exactly at 87.5
        let g = DomainConfig {
            grid_nx: 351,
            grid_ny: 351,
            grid_nt: 4,
            ..Default::default()
        }
        .grid(0.0, 1.0)
        .unwrap();
        let f = estimate_density(&[[87.5, 87.5]], Mat2::IDENTITY, 1.0, &g).unwrap();
        let centre = f[[175, 175]];
        assert!((centre - 1.0 / (2.0 * PI)).abs() < 1e-15);
        // one node over: dx = 0.5
        let expected = (-0.125f64).exp() / (2.0 * PI);
        assert!((f[[176, 175]] - expected).abs() < 1e-15);
    }

    #[test]
    fn interior_mass_is_one() {
        let g = grid(80);
        let pts = [[80.0, 90.0], [95.0, 85.0], [88.0, 70.0], [70.0, 100.0]];
        let c = sample_covariance(&pts).unwrap();
        let f = estimate_density(&pts, c.cov, 1.0, &g).unwrap();
        let m = frame_mass(&f.view(), &g.x, &g.y);
        assert!((m - 1.0).abs() < 1e-3, "mass {m}");
    }

    #[test]
    fn swap_symmetry() {
        let g = grid(81);
        // mirror images about x = 87.5
        let f = estimate_density(&[[60.0, 80.0], [115.0, 80.0]], Mat2::symmetric(30.0, 0.0, 20.0), 1.0, &g).unwrap();
        for i in 0..81 {
            for j in 0..81 {
                assert!((f[[i, j]] - f[[80 - i, j]]).abs() < 1e-12 * f[[i, j]].abs().max(1e-300));
            }
        }
    }

    #[test]
    fn singular_covariance_falls_back_to_isotropic() {
        let g = grid(40);
        let pts = [[50.0, 50.0], [100.0, 50.0]];
        let c = sample_covariance(&pts).unwrap();
        assert!(c.singular);
        let f = estimate_density(&pts, c.cov, 0.5, &g).unwrap();
        assert!(f.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(f.sum() > 0.0);
        assert!(estimate_density(&pts, Mat2::ZERO, 0.5, &g).is_err());
    }

    #[test]
    fn bias_zero_for_zero_sigma_and_zero_mass() {
        let g = grid(120);
        let cov = Mat2::symmetric(40.0, 5.0, 30.0);
        let z = kde_bias_estimate(&[[87.5, 87.5]], 0.0, cov, &g).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
        let b = kde_bias_estimate(&[[87.5, 87.5]], 2.0, cov, &g).unwrap();
        let m = frame_mass(&b.view(), &g.x, &g.y);
        assert!(m.abs() < 1e-3, "LoG mass {m}");
        // LoG is negative at the centre
        assert!(b[[60, 60]] < 0.0 || b[[59, 59]] < 0.0);
    }

    #[test]
    fn interpolation_identity_and_midpoint() {
        let domain = DomainConfig {
            grid_nx: 4,
            grid_ny: 4,
            grid_nt: 4,
            ..Default::default()
        };
        let g = domain.grid(0.0, 3.0).unwrap();
        let frames: Vec<(f64, Array2<f64>)> = (0..4)
            .map(|k| (k as f64, Array2::from_elem((4, 4), (k * k) as f64)))
            .collect();
        let f = interpolate_time(&frames, &g).unwrap();
        for (k, (_, fr)) in frames.iter().enumerate() {
            assert_eq!(f.frame(k), fr.view());
        }
        let g7 = DomainConfig { grid_nt: 7, ..domain }.grid(0.0, 3.0).unwrap();
        let f = interpolate_time(&frames, &g7).unwrap();
        // t = 0.5 averages frames 0 and 1, t = 2.5 frames 2 and 3
        assert!(f.frame(1).iter().all(|v| (*v - 0.5).abs() < 1e-15));
        assert!(f.frame(5).iter().all(|v| (*v - 6.5).abs() < 1e-15));

        let too_short = DomainConfig { grid_nt: 4, ..domain }.grid(0.0, 3.0).unwrap();
        assert!(interpolate_time(&frames[..3], &too_short).is_err());
        assert!(interpolate_time(&frames[..1], &g).is_err());
    }
}
