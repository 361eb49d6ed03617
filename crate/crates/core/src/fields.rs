//! Finite-difference operators on scalar fields living on the nodes of a
//! [`GraphPatch`]: coordinate gradients and Hessians, Christoffel symbols of
//! the induced metric, the Laplace-Beltrami operator and ambient-pushed
//! gradients.
//!
//! Fields are plain `Vec<f64>` indexed by `patch.flat(node)`. All operators
//! here are meant to be evaluated at nodes whose full stencil (depth 2 for
//! the Laplace-Beltrami operator, which differentiates the metric) stays on
//! the grid; periodic patches wrap.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graphgeom::{self, Boundary, GraphPatch};

/// Access a field value at a signed multi-index (periodic wrap; panics on
/// out-of-range indices for fixed boundaries).
fn field_at(field: &[f64], patch: &GraphPatch, node: &[isize]) -> f64 {
    let mut idx = vec![0usize; patch.n()];
    for k in 0..patch.n() {
        let g = patch.grid()[k] as isize;
        idx[k] = match patch.boundary() {
            Boundary::Periodic => node[k].rem_euclid(g) as usize,
            Boundary::FixedAffine => {
                assert!(node[k] >= 0 && node[k] < g, "field stencil left the grid");
                node[k] as usize
            }
        };
    }
    field[patch.flat(&idx)]
}

/// Central-difference coordinate gradient of a scalar field.
pub fn grad_coord(field: &[f64], patch: &GraphPatch, node: &[usize]) -> DVector<f64> {
    let n = patch.n();
    let base: Vec<isize> = node.iter().map(|&v| v as isize).collect();
    let mut df = DVector::zeros(n);
    for k in 0..n {
        let mut p = base.clone();
        let mut m = base.clone();
        p[k] += 1;
        m[k] -= 1;
        df[k] = (field_at(field, patch, &p) - field_at(field, patch, &m))
            / (2.0 * patch.spacing()[k]);
    }
    df
}

/// Central-difference coordinate Hessian of a scalar field.
pub fn hess_coord(field: &[f64], patch: &GraphPatch, node: &[usize]) -> DMatrix<f64> {
    let n = patch.n();
    let base: Vec<isize> = node.iter().map(|&v| v as isize).collect();
    let at = |offs: &[(usize, isize)]| {
        let mut idx = base.clone();
        for &(k, o) in offs {
            idx[k] += o;
        }
        field_at(field, patch, &idx)
    };
    let mut dd = DMatrix::zeros(n, n);
    for i in 0..n {
        let h = patch.spacing()[i];
        dd[(i, i)] = (at(&[(i, 1)]) - 2.0 * at(&[]) + at(&[(i, -1)])) / (h * h);
        for j in (i + 1)..n {
            let hj = patch.spacing()[j];
            let mixed = (at(&[(i, 1), (j, 1)]) - at(&[(i, 1), (j, -1)]) - at(&[(i, -1), (j, 1)])
                + at(&[(i, -1), (j, -1)]))
                / (4.0 * h * hj);
            dd[(i, j)] = mixed;
            dd[(j, i)] = mixed;
        }
    }
    dd
}

/// Jacobian by central differences through ghost access, defined at every
/// node (ghosts wrap or extend affinely per the patch boundary).
pub fn jacobian_ghost(patch: &GraphPatch, node: &[usize]) -> DMatrix<f64> {
    let n = patch.n();
    let m = patch.m();
    let base: Vec<isize> = node.iter().map(|&v| v as isize).collect();
    let mut du = DMatrix::zeros(m, n);
    for k in 0..n {
        let h = patch.spacing()[k];
        for a in 0..m {
            let mut p = base.clone();
            let mut mi = base.clone();
            p[k] += 1;
            mi[k] -= 1;
            du[(a, k)] = (patch.value_at(&p, a) - patch.value_at(&mi, a)) / (2.0 * h);
        }
    }
    du
}

/// The induced metric at every node, packed n*n per node (row-major).
pub fn metric_field(patch: &GraphPatch) -> Vec<f64> {
    let n = patch.n();
    let mut out = vec![0.0; patch.node_count() * n * n];
    for node in patch.nodes() {
        let du = jacobian_ghost(patch, &node);
        let g = graphgeom::induced_metric(&du);
        let base = patch.flat(&node) * n * n;
        for i in 0..n {
            for j in 0..n {
                out[base + i * n + j] = g[(i, j)];
            }
        }
    }
    out
}

/// The slope function `v = sqrt(det g)` at every node.
pub fn slope_field(patch: &GraphPatch) -> Vec<f64> {
    let n = patch.n();
    let mut out = vec![0.0; patch.node_count()];
    for node in patch.nodes() {
        let du = jacobian_ghost(patch, &node);
        let g = graphgeom::induced_metric(&du);
        out[patch.flat(&node)] = g.determinant().sqrt();
        let _ = n;
    }
    out
}

fn metric_at(metric: &[f64], patch: &GraphPatch, node: &[isize]) -> DMatrix<f64> {
    let n = patch.n();
    let mut idx = vec![0usize; n];
    for k in 0..n {
        let g = patch.grid()[k] as isize;
        idx[k] = match patch.boundary() {
            Boundary::Periodic => node[k].rem_euclid(g) as usize,
            Boundary::FixedAffine => {
                assert!(node[k] >= 0 && node[k] < g, "metric stencil left the grid");
                node[k] as usize
            }
        };
    }
    let base = patch.flat(&idx) * n * n;
    DMatrix::from_fn(n, n, |i, j| metric[base + i * n + j])
}

/// Christoffel symbols `Gamma^k_{ij}` of the induced metric at a node,
/// with metric derivatives by central differences of the metric field.
pub fn christoffels(metric: &[f64], patch: &GraphPatch, node: &[usize]) -> Result<Vec<DMatrix<f64>>> {
    let n = patch.n();
    let base: Vec<isize> = node.iter().map(|&v| v as isize).collect();
    let g = metric_at(metric, patch, &base);
    let g_inv = g
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Domain("induced metric not invertible".into()))?;

    // dg[l] = d g / d x_l
    let mut dg = Vec::with_capacity(n);
    for l in 0..n {
        let mut p = base.clone();
        let mut m = base.clone();
        p[l] += 1;
        m[l] -= 1;
        let diff = (metric_at(metric, patch, &p) - metric_at(metric, patch, &m))
            / (2.0 * patch.spacing()[l]);
        dg.push(diff);
    }

    let mut gamma = vec![DMatrix::zeros(n, n); n];
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for l in 0..n {
                    acc += g_inv[(k, l)] * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                }
                gamma[k][(i, j)] = 0.5 * acc;
            }
        }
    }
    Ok(gamma)
}

/// Laplace-Beltrami `Delta_g f = g^{ij} (d_ij f - Gamma^k_{ij} d_k f)`.
pub fn laplace_beltrami(
    field: &[f64],
    metric: &[f64],
    patch: &GraphPatch,
    node: &[usize],
) -> Result<f64> {
    let n = patch.n();
    let base: Vec<isize> = node.iter().map(|&v| v as isize).collect();
    let g = metric_at(metric, patch, &base);
    let g_inv = g
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Domain("induced metric not invertible".into()))?;
    let dd = hess_coord(field, patch, node);
    let df = grad_coord(field, patch, node);
    let gamma = christoffels(metric, patch, node)?;
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut corrected = dd[(i, j)];
            for k in 0..n {
                corrected -= gamma[k][(i, j)] * df[k];
            }
            acc += g_inv[(i, j)] * corrected;
        }
    }
    Ok(acc)
}

/// Advection term `g^{ij} Gamma^k_{ij} d_k f` that relates the graphical
/// gauge to the normal gauge.
pub fn advection_correction(
    field: &[f64],
    metric: &[f64],
    patch: &GraphPatch,
    node: &[usize],
) -> Result<f64> {
    let n = patch.n();
    let base: Vec<isize> = node.iter().map(|&v| v as isize).collect();
    let g = metric_at(metric, patch, &base);
    let g_inv = g
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Domain("induced metric not invertible".into()))?;
    let df = grad_coord(field, patch, node);
    let gamma = christoffels(metric, patch, node)?;
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                acc += g_inv[(i, j)] * gamma[k][(i, j)] * df[k];
            }
        }
    }
    Ok(acc)
}

/// Gradient of a scalar field pushed to ambient components:
/// `grad f = T g^{-1} df` with `T = [I; Du]`.
pub fn ambient_gradient(
    field: &[f64],
    patch: &GraphPatch,
    node: &[usize],
) -> Result<DVector<f64>> {
    let n = patch.n();
    let m = patch.m();
    let du = jacobian_ghost(patch, node);
    let g = graphgeom::induced_metric(&du);
    let g_inv = g
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Domain("induced metric not invertible".into()))?;
    let df = grad_coord(field, patch, node);
    let coeff = g_inv * df;
    let mut out = DVector::zeros(n + m);
    for k in 0..n {
        out[k] = coeff[k];
    }
    let graph_part = du * &coeff;
    for a in 0..m {
        out[n + a] = graph_part[a];
    }
    Ok(out)
}

/// Squared norm of the manifold gradient: `df^T g^{-1} df`.
pub fn grad_norm_sq(field: &[f64], metric: &[f64], patch: &GraphPatch, node: &[usize]) -> Result<f64> {
    let base: Vec<isize> = node.iter().map(|&v| v as isize).collect();
    let g = metric_at(metric, patch, &base);
    let g_inv = g
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Domain("induced metric not invertible".into()))?;
    let df = grad_coord(field, patch, node);
    Ok((g_inv * &df).dot(&df))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn laplace_beltrami_flat_metric_is_plain_laplacian() {
        let patch = GraphPatch::from_fn(
            2,
            1,
            &[-PI, -PI],
            &[PI, PI],
            &[64, 64],
            Boundary::Periodic,
            |_, out| out[0] = 0.0,
        )
        .unwrap();
        let metric = metric_field(&patch);
        let mut field = vec![0.0; patch.node_count()];
        for node in patch.nodes() {
            let x = patch.coords(&node);
            field[patch.flat(&node)] = x[0].sin() * x[1].cos();
        }
        let node = [13usize, 27];
        let x = patch.coords(&node);
        let lap = laplace_beltrami(&field, &metric, &patch, &node).unwrap();
        let exact = -2.0 * x[0].sin() * x[1].cos();
        assert_relative_eq!(lap, exact, epsilon = 3e-2);
    }

    #[test]
    fn laplace_beltrami_converges_on_curved_graph() {
        // f = sin(x1) on the graph u = 0.5 sin(x1); compare against the
        // analytic Laplace-Beltrami value at a point.
        let run = |count: usize| -> f64 {
            let patch = GraphPatch::from_fn(
                1,
                1,
                &[-PI],
                &[PI],
                &[count],
                Boundary::Periodic,
                |x, out| out[0] = 0.5 * x[0].sin(),
            )
            .unwrap();
            let metric = metric_field(&patch);
            let mut field = vec![0.0; patch.node_count()];
            for node in patch.nodes() {
                let x = patch.coords(&node);
                field[patch.flat(&node)] = x[0].sin();
            }
            // 1d: Delta_g f = f'' / g - 0.5 g'/g^2 f', g = 1 + u'^2
            let node = [count / 3];
            let x = patch.coords(&node)[0];
            let up = 0.5 * x.cos();
            let upp = -0.5 * x.sin();
            let g = 1.0 + up * up;
            let gp = 2.0 * up * upp;
            let exact = -x.sin() / g - 0.5 * gp / (g * g) * x.cos();
            (laplace_beltrami(&field, &metric, &patch, &node).unwrap() - exact).abs()
        };
        let e1 = run(64);
        let e2 = run(128);
        let ratio = e1 / e2;
        assert!((3.0..5.5).contains(&ratio), "ratio = {ratio}, e1 = {e1}");
    }

    #[test]
    fn ambient_gradient_of_coordinate_function() {
        // on a flat graph, grad of f(x) = x1 is e1
        let patch = GraphPatch::from_fn(
            2,
            2,
            &[-1.0, -1.0],
            &[1.0, 1.0],
            &[9, 9],
            Boundary::FixedAffine,
            |_, out| {
                out[0] = 0.0;
                out[1] = 0.0;
            },
        )
        .unwrap();
        let mut field = vec![0.0; patch.node_count()];
        for node in patch.nodes() {
            field[patch.flat(&node)] = patch.coords(&node)[0];
        }
        let grad = ambient_gradient(&field, &patch, &[4, 4]).unwrap();
        assert_relative_eq!(grad[0], 1.0, epsilon = 1e-12);
        for k in 1..4 {
            assert!(grad[k].abs() < 1e-12);
        }
    }
}
