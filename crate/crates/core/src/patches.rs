//! Canonical graph patches used by the experiments and tests.

use crate::error::Result;
use crate::graphgeom::{Boundary, GraphPatch};

/// Affine graph `u^a(x) = c^a + sum_k A^a_k x_k` on `[lo, hi]^n`.
pub fn affine_patch(
    n: usize,
    m: usize,
    lo: f64,
    hi: f64,
    grid: usize,
    offsets: &[f64],
    slopes: &[Vec<f64>],
) -> Result<GraphPatch> {
    assert_eq!(offsets.len(), m);
    assert_eq!(slopes.len(), m);
    GraphPatch::from_fn(
        n,
        m,
        &vec![lo; n],
        &vec![hi; n],
        &vec![grid; n],
        Boundary::FixedAffine,
        |x, out| {
            for a in 0..m {
                out[a] = offsets[a] + slopes[a].iter().zip(x).map(|(s, xi)| s * xi).sum::<f64>();
            }
        },
    )
}

/// Periodic product-of-sines graph
/// `u^a(x) = amp_a prod_k sin(freq_k x_k + phase_a)` on `[0, 2 pi)^n`.
pub fn sine_patch(
    n: usize,
    m: usize,
    grid: usize,
    amps: &[f64],
    freqs: &[f64],
    phases: &[f64],
) -> Result<GraphPatch> {
    assert_eq!(amps.len(), m);
    assert_eq!(phases.len(), m);
    assert_eq!(freqs.len(), n);
    let tau = 2.0 * std::f64::consts::PI;
    GraphPatch::from_fn(
        n,
        m,
        &vec![0.0; n],
        &vec![tau; n],
        &vec![grid; n],
        Boundary::Periodic,
        |x, out| {
            for a in 0..m {
                out[a] = amps[a]
                    * x.iter()
                        .zip(freqs)
                        .map(|(xi, f)| (f * xi + phases[a]).sin())
                        .product::<f64>();
            }
        },
    )
}

/// Grim-reaper translator graph in codimension `m`:
/// `u^1(x) = -log cos x_1`, all other components zero, on
/// `[-half_width, half_width] x [-1, 1]^{n-1}`. Requires
/// `half_width < pi / 2`.
pub fn grim_reaper_patch(n: usize, m: usize, half_width: f64, grid: usize) -> Result<GraphPatch> {
    assert!(half_width < std::f64::consts::FRAC_PI_2);
    let mut lo = vec![-1.0; n];
    let mut hi = vec![1.0; n];
    lo[0] = -half_width;
    hi[0] = half_width;
    GraphPatch::from_fn(
        n,
        m,
        &lo,
        &hi,
        &vec![grid; n],
        Boundary::FixedAffine,
        |x, out| {
            out.fill(0.0);
            out[0] = -x[0].cos().ln();
        },
    )
}

/// Lower cap of the sphere of the given radius centered at the origin,
/// written as a graph `u(x) = -sqrt(r^2 - |x|^2)` over
/// `[-extent, extent]^n`. Requires `extent sqrt(n) < r`.
pub fn sphere_cap_patch(n: usize, radius: f64, extent: f64, grid: usize) -> Result<GraphPatch> {
    assert!(extent * (n as f64).sqrt() < radius);
    GraphPatch::from_fn(
        n,
        1,
        &vec![-extent; n],
        &vec![extent; n],
        &vec![grid; n],
        Boundary::FixedAffine,
        |x, out| {
            let r2: f64 = x.iter().map(|xi| xi * xi).sum();
            out[0] = -(radius * radius - r2).sqrt();
        },
    )
}
