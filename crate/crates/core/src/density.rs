//! Densities sampled on a uniform space-time grid.

use std::io::{Read, Write};

use ndarray::{Array2, Array3, ArrayView2, Axis as NdAxis};

use crate::data::{Axis, Grid};
use crate::error::{Error, Result};

const BINARY_MAGIC: &[u8; 8] = b"FPWDENS1";

/// Probability density (cm⁻²) on `x ⊗ y ⊗ t`. `values[[i, j, n]]` is the
/// density at `(x_i, y_j, t_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub grid: Grid,
    pub values: Array3<f64>,
}

/// Trapezoidal integral of a single spatial frame.
pub fn frame_mass(frame: &ArrayView2<f64>, x: &Axis, y: &Axis) -> f64 {
    let mut total = 0.0;
    for ((i, j), v) in frame.indexed_iter() {
        total += v * x.trapezoid_weight(i) * y.trapezoid_weight(j);
    }
    total
}

impl DensityField {
    pub fn new(grid: Grid, values: Array3<f64>) -> Result<Self> {
        let (nx, ny, nt) = grid.shape();
        if values.dim() != (nx, ny, nt) {
            return Err(Error::Invalid(format!(
                "density shape {:?} does not match grid {:?}",
                values.dim(),
                (nx, ny, nt)
            )));
        }
        Ok(Self { grid, values })
    }

    /// Sample `f(x, y, t)` at every grid node.
    pub fn from_fn<F: Fn(f64, f64, f64) -> f64>(grid: Grid, f: F) -> Self {
        let (nx, ny, nt) = grid.shape();
        let values = Array3::from_shape_fn((nx, ny, nt), |(i, j, n)| {
            f(grid.x.node(i), grid.y.node(j), grid.t.node(n))
        });
        Self { grid, values }
    }

    pub fn frame(&self, n: usize) -> ArrayView2<'_, f64> {
        self.values.index_axis(NdAxis(2), n)
    }

    pub fn frame_owned(&self, n: usize) -> Array2<f64> {
        self.frame(n).to_owned()
    }

    /// Trapezoidal spatial mass of every frame.
    pub fn masses(&self) -> Vec<f64> {
        (0..self.grid.t.len)
            .map(|n| frame_mass(&self.frame(n), &self.grid.x, &self.grid.y))
            .collect()
    }

    /// `‖u‖_∞`.
    pub fn max_value(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, &v| a.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |a, &v| a.min(v))
    }

    /// First frame holding a NaN or infinity.
    pub fn first_non_finite_frame(&self) -> Option<usize> {
        (0..self.grid.t.len).find(|&n| self.frame(n).iter().any(|v| !v.is_finite()))
    }

    /// Binary layout, all little-endian:
    ///
    /// ```text
    /// magic  "FPWDENS1"            8 bytes
    /// nx, ny, nt                   3 × u64
    /// x0, dx, y0, dy, t0, dt       6 × f64
    /// values                       nx·ny·nt × f64, t fastest, then y, then x
    /// ```
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        let g = &self.grid;
        for n in [g.x.len, g.y.len, g.t.len] {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for v in [g.x.start, g.x.step, g.y.start, g.y.step, g.t.start, g.t.step] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in self.values.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Schema("not a density file".into()));
        }
        let mut u = [0u8; 8];
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            r.read_exact(&mut u)?;
            *d = u64::from_le_bytes(u) as usize;
        }
        let mut meta = [0f64; 6];
        for m in meta.iter_mut() {
            r.read_exact(&mut u)?;
            *m = f64::from_le_bytes(u);
        }
        let axis = |k: usize| Axis {
            start: meta[2 * k],
            step: meta[2 * k + 1],
            len: dims[k],
        };
        let grid = Grid {
            x: axis(0),
            y: axis(1),
            t: axis(2),
        };
        let count = dims[0] * dims[1] * dims[2];
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut u)?;
            data.push(f64::from_le_bytes(u));
        }
        let values = Array3::from_shape_vec((dims[0], dims[1], dims[2]), data)
            .map_err(|e| Error::Schema(e.to_string()))?;
        Self::new(grid, values)
    }

    /// CSV with a leading `#` metadata row, then `x_cm,y_cm,t_hr,density`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let g = &self.grid;
        writeln!(
            w,
            "# nx={},ny={},nt={},x0={},dx={},y0={},dy={},t0={},dt={}",
            g.x.len, g.y.len, g.t.len, g.x.start, g.x.step, g.y.start, g.y.step, g.t.start, g.t.step
        )?;
        writeln!(w, "x_cm,y_cm,t_hr,density")?;
        for ((i, j, n), v) in self.values.indexed_iter() {
            writeln!(w, "{},{},{},{}", g.x.node(i), g.y.node(j), g.t.node(n), v)?;
        }
        w.flush()?;
        Ok(())
    }
}
