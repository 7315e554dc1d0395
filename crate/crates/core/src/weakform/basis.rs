//! Potential and interaction-kernel bases.

use std::f64::consts::PI;

use ndarray::Array2;

use crate::data::Grid;

/// `∇V` for `V = cos(2πnx/L) cos(2πmy/W)`.
pub fn env_gradient(n: usize, m: usize, length: [f64; 2], x: f64, y: f64) -> [f64; 2] {
    let kx = 2.0 * PI * n as f64 / length[0];
    let ky = 2.0 * PI * m as f64 / length[1];
    [
        -kx * (kx * x).sin() * (ky * y).cos(),
        -ky * (kx * x).cos() * (ky * y).sin(),
    ]
}

/// `V = cos(2πnx/L) cos(2πmy/W)`.
pub fn env_potential(n: usize, m: usize, length: [f64; 2], x: f64, y: f64) -> f64 {
    (2.0 * PI * n as f64 * x / length[0]).cos() * (2.0 * PI * m as f64 * y / length[1]).cos()
}

fn bessel_series(n: usize, s: f64) -> f64 {
    let mut lead = 1.0;
    for k in 1..=n {
        lead *= s / (2 * k + 1) as f64;
    }
    let h = -0.5 * s * s;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..80 {
        term *= h / (k * (2 * n + 2 * k + 1)) as f64;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    lead * sum
}

/// Spherical Bessel function of the first kind `j_n(s)`.
pub fn spherical_bessel(n: usize, s: f64) -> f64 {
    let s_abs = s.abs();
    let sign = if s < 0.0 && n % 2 == 1 { -1.0 } else { 1.0 };
    if s_abs < (n + 1) as f64 {
        return sign * bessel_series(n, s_abs);
    }
    let (sn, cs) = s_abs.sin_cos();
    let mut prev = sn / s_abs;
    if n == 0 {
        return prev;
    }
    let mut cur = sn / (s_abs * s_abs) - cs / s_abs;
    for k in 1..n {
        let next = (2 * k + 1) as f64 / s_abs * cur - prev;
        prev = cur;
        cur = next;
    }
    sign * cur
}

/// `j_n'(s)`.
pub fn spherical_bessel_derivative(n: usize, s: f64) -> f64 {
    if n == 0 {
        return -spherical_bessel(1, s);
    }
    let k = (2 * n + 1) as f64;
    (n as f64 * spherical_bessel(n - 1, s) - (n + 1) as f64 * spherical_bessel(n + 1, s)) / k
}

/// `∇K_n(d)` for `K_n(ρ) = j_{n−1}(ρ/ρ₀)`, with `∇K_n(0) = 0`.
pub fn kernel_gradient(n: usize, scale: f64, d: [f64; 2]) -> [f64; 2] {
    let rho = d[0].hypot(d[1]);
    if rho == 0.0 {
        return [0.0, 0.0];
    }
    let dk = spherical_bessel_derivative(n - 1, rho / scale) / scale;
    [d[0] / rho * dk, d[1] / rho * dk]
}

/// `∇K_n` sampled on a centred patch, multiplied by the cell area.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelStencil {
    pub n: usize,
    pub gx: Array2<f64>,
    pub gy: Array2<f64>,
}

/// Stencils for `K_1..K_count` on a disc of `radius` x-cells.
pub fn interaction_kernel_stencils(count: usize, scale: f64, radius: usize, grid: &Grid) -> Vec<KernelStencil> {
    let (dx, dy) = (grid.x.step, grid.y.step);
    let r = radius as f64 * dx;
    let rx = radius;
    let ry = (r / dy).floor() as usize;
    let area = dx * dy;
    (1..=count)
        .map(|n| {
            let mut gx = Array2::zeros((2 * rx + 1, 2 * ry + 1));
            let mut gy = Array2::zeros((2 * rx + 1, 2 * ry + 1));
            for a in 0..=2 * rx {
                for b in 0..=2 * ry {
                    let d = [(a as f64 - rx as f64) * dx, (b as f64 - ry as f64) * dy];
                    if d[0].hypot(d[1]) > r * (1.0 + 1e-12) {
                        continue;
                    }
                    let g = kernel_gradient(n, scale, d);
                    gx[[a, b]] = area * g[0];
                    gy[[a, b]] = area * g[1];
                }
            }
            KernelStencil { n, gx, gy }
        })
        .collect()
}
