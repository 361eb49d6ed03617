//! Residual evaluators and drift-operator inequality checks for
//! self-shrinkers and translating solitons, plus the localized
//! `|B|^2 <= C (1/R + 1/R^2)` harness.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields;
use crate::graphgeom::{self, GraphPatch};

/// Kind of soliton equation a patch is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolitonKind {
    Shrinker,
    Translator,
}

/// Hypotheses and constants of the soliton harness.
#[derive(Debug, Clone)]
pub struct SolitonSpec {
    pub kind: SolitonKind,
    /// Translation direction (translator only); must be a unit vector.
    pub v0: Option<DVector<f64>>,
    /// Multiplier in `f_2 = |B|^2 e^{k2 v}`.
    pub k2: f64,
    /// Residual max-norm threshold below which the patch counts as an
    /// (approximate) soliton.
    pub residual_threshold: f64,
}

impl SolitonSpec {
    pub fn shrinker(k2: f64, residual_threshold: f64) -> SolitonSpec {
        SolitonSpec {
            kind: SolitonKind::Shrinker,
            v0: None,
            k2,
            residual_threshold,
        }
    }

    pub fn translator(v0: DVector<f64>, k2: f64, residual_threshold: f64) -> Result<SolitonSpec> {
        if (v0.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "V0 must be a unit vector, |V0| = {}",
                v0.norm()
            )));
        }
        Ok(SolitonSpec {
            kind: SolitonKind::Translator,
            v0: Some(v0),
            k2,
            residual_threshold,
        })
    }
}

/// Project an ambient vector onto the normal space at a node.
fn normal_part(patch: &GraphPatch, node: &[usize], x: &DVector<f64>) -> Result<DVector<f64>> {
    let du = graphgeom::jacobian(patch, node)?;
    let n = patch.n();
    let m = patch.m();
    let g = graphgeom::induced_metric(&du);
    let g_inv = g
        .try_inverse()
        .ok_or_else(|| Error::Domain("induced metric not invertible".into()))?;
    // tangent basis T = [I; Du] (columns), tangential part T g^{-1} T^t x
    let mut t = nalgebra::DMatrix::zeros(n + m, n);
    for k in 0..n {
        t[(k, k)] = 1.0;
    }
    for a in 0..m {
        for k in 0..n {
            t[(n + a, k)] = du[(a, k)];
        }
    }
    let coeff = g_inv * (t.transpose() * x);
    Ok(x - t * coeff)
}

/// Residual of the shrinker equation `H = -(1/2) X^N` at a node:
/// returns `H + (1/2) X^N`.
pub fn shrinker_residual(patch: &GraphPatch, node: &[usize]) -> Result<DVector<f64>> {
    let h = graphgeom::mean_curvature(patch, node)?;
    let x = patch.position(node);
    Ok(h + 0.5 * normal_part(patch, node, &x)?)
}

/// Residual of the translator equation `H = V0^N` at a node:
/// returns `H - V0^N`.
pub fn translator_residual(
    patch: &GraphPatch,
    node: &[usize],
    v0: &DVector<f64>,
) -> Result<DVector<f64>> {
    let h = graphgeom::mean_curvature(patch, node)?;
    Ok(h - normal_part(patch, node, v0)?)
}

fn residual_at(patch: &GraphPatch, node: &[usize], spec: &SolitonSpec) -> Result<DVector<f64>> {
    match spec.kind {
        SolitonKind::Shrinker => shrinker_residual(patch, node),
        SolitonKind::Translator => translator_residual(
            patch,
            node,
            spec.v0
                .as_ref()
                .ok_or_else(|| Error::Domain("translator spec requires V0".into()))?,
        ),
    }
}

/// Drift operator of the shrinker: `L f = Delta_g f - (1/2) <X, grad f>`.
pub fn drift_l(field: &[f64], patch: &GraphPatch, node: &[usize]) -> Result<f64> {
    let metric = fields::metric_field(patch);
    let lap = fields::laplace_beltrami(field, &metric, patch, node)?;
    let grad = fields::ambient_gradient(field, patch, node)?;
    let x = patch.position(node);
    Ok(lap - 0.5 * x.dot(&grad))
}

/// Drift operator of the translator: `L_II f = Delta_g f + <V0, grad f>`.
pub fn drift_lii(
    field: &[f64],
    patch: &GraphPatch,
    node: &[usize],
    v0: &DVector<f64>,
) -> Result<f64> {
    let metric = fields::metric_field(patch);
    let lap = fields::laplace_beltrami(field, &metric, patch, node)?;
    let grad = fields::ambient_gradient(field, patch, node)?;
    Ok(lap + v0.dot(&grad))
}

/// Worst-case margins of the soliton differential inequalities over the
/// interior.
#[derive(Debug, Clone, Serialize)]
pub struct InequalityReport {
    pub kind: SolitonKind,
    /// epsilon-hat used on the right side of the slope inequality.
    pub eps_hat: f64,
    pub residual_max: f64,
    /// Worst of `L v - eps |B|^2` (shrinker) or `L_II v - eps |B|^2`
    /// (translator); nonnegative up to slack certifies (4.39)/(4.41).
    pub slope_margin_min: f64,
    /// Worst of `L |B|^2 - (2 |grad |B||^2 + |B|^2 - 3 |B|^4)` (shrinker)
    /// or `L_II |B|^2 - (2 |grad |B||^2 - 3 |B|^4)` (translator).
    pub simons_margin_min: f64,
    /// Discretization slack the margins are compared against.
    pub slack: f64,
    pub nodes_checked: usize,
}

impl InequalityReport {
    pub fn passes(&self) -> bool {
        self.slope_margin_min >= -self.slack && self.simons_margin_min >= -self.slack
    }
}

/// Interior nodes away from the boundary by `width` in every axis.
fn deep_interior(patch: &GraphPatch, width: usize) -> Vec<Vec<usize>> {
    patch
        .nodes()
        .filter(|nd| patch.is_interior(nd, width))
        .collect()
}

/// Check the drift inequalities (slope and Simons-type) on an approximate
/// soliton patch. `eps_hat` is the quadform-module estimate of the paper's
/// non-constructive epsilon; `slack_coefficient` scales the `spacing^2`
/// discretization slack.
pub fn check_soliton_inequalities(
    patch: &GraphPatch,
    spec: &SolitonSpec,
    eps_hat: f64,
    slack_coefficient: f64,
) -> Result<InequalityReport> {
    // residual gate: inequalities are only claimed on solitons
    let gate_nodes = deep_interior(patch, 2);
    let mut residual_max: f64 = 0.0;
    for node in &gate_nodes {
        residual_max = residual_max.max(residual_at(patch, node, spec)?.norm());
    }
    if residual_max > spec.residual_threshold {
        return Err(Error::NotASoliton {
            residual: residual_max,
            threshold: spec.residual_threshold,
        });
    }

    let v_field = fields::slope_field(patch);
    let metric = fields::metric_field(patch);
    let b_field: Vec<f64> = {
        let mut out = vec![0.0; patch.node_count()];
        for node in patch.nodes() {
            if patch.is_interior(&node, 2) {
                out[patch.flat(&node)] =
                    graphgeom::norm_b_sq_coordinate(patch, &node)?.sqrt();
            }
        }
        out
    };
    let b2_field: Vec<f64> = b_field.iter().map(|b| b * b).collect();

    // |B| and |B|^2 are only defined on the width-2 interior, so their
    // stencils need another layer
    let nodes = deep_interior(patch, 4);
    let spacing = patch.min_spacing();
    let slack = slack_coefficient * spacing * spacing;
    let mut slope_margin_min = f64::INFINITY;
    let mut simons_margin_min = f64::INFINITY;
    for node in &nodes {
        let flat = patch.flat(node);
        let b2 = b2_field[flat];
        let grad_b_sq = fields::grad_norm_sq(&b_field, &metric, patch, node)?;
        let (slope_op, simons_op, simons_rhs) = match spec.kind {
            SolitonKind::Shrinker => (
                drift_l(&v_field, patch, node)?,
                drift_l(&b2_field, patch, node)?,
                2.0 * grad_b_sq + b2 - 3.0 * b2 * b2,
            ),
            SolitonKind::Translator => {
                let v0 = spec.v0.as_ref().unwrap();
                (
                    drift_lii(&v_field, patch, node, v0)?,
                    drift_lii(&b2_field, patch, node, v0)?,
                    2.0 * grad_b_sq - 3.0 * b2 * b2,
                )
            }
        };
        slope_margin_min = slope_margin_min.min(slope_op - eps_hat * b2);
        simons_margin_min = simons_margin_min.min(simons_op - simons_rhs);
    }
    Ok(InequalityReport {
        kind: spec.kind,
        eps_hat,
        residual_max,
        slope_margin_min,
        simons_margin_min,
        slack,
        nodes_checked: nodes.len(),
    })
}

/// Radial cutoff `eta1(x) = eta_tilde(r(x) / R)`: 4th-power C^2 ramp equal
/// to 1 on [0, 1/2] and 0 from 1 on, with its measured ramp constants.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RadialCutoff {
    pub r: f64,
    /// `sup |eta_tilde'|^2 / eta_tilde`, by dense sampling.
    pub c0_grad: f64,
    /// `sup max(0, -eta_tilde'')`, by dense sampling.
    pub c0_convexity: f64,
}

fn ramp4(s: f64) -> f64 {
    let s = s.abs();
    if s <= 0.5 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        let t = 2.0 * (s - 0.5);
        let phi = 1.0 - t * t * t * (t * (6.0 * t - 15.0) + 10.0);
        phi.powi(4)
    }
}

fn ramp4_prime(s: f64) -> f64 {
    if !(0.5..1.0).contains(&s) {
        return 0.0;
    }
    let t = 2.0 * (s - 0.5);
    let phi = 1.0 - t * t * t * (t * (6.0 * t - 15.0) + 10.0);
    let sp = 30.0 * t * t * (t - 1.0) * (t - 1.0);
    -4.0 * phi.powi(3) * sp * 2.0
}

impl RadialCutoff {
    pub fn new(r: f64) -> Result<RadialCutoff> {
        if r <= 0.0 {
            return Err(Error::Domain("cutoff radius must be positive".into()));
        }
        let samples = 200_000;
        let mut c0_grad: f64 = 0.0;
        let mut c0_convexity: f64 = 0.0;
        let ds = 1.0 / samples as f64;
        for i in 0..samples {
            let s = i as f64 * ds;
            let e = ramp4(s);
            if e > 0.0 {
                let d = ramp4_prime(s);
                c0_grad = c0_grad.max(d * d / e);
            }
            let second = (ramp4_prime(s + ds) - ramp4_prime(s.max(ds) - ds)) / (2.0 * ds);
            c0_convexity = c0_convexity.max(-second);
        }
        Ok(RadialCutoff {
            r,
            c0_grad,
            c0_convexity,
        })
    }

    pub fn eta1(&self, radius: f64) -> f64 {
        ramp4(radius / self.r)
    }
}

/// One row of the localized-bound table.
#[derive(Debug, Clone, Serialize)]
pub struct LocalizedRow {
    pub r: f64,
    /// max of `f2_tilde = |B|^2 e^{k2 v} eta1` over nodes inside `B_R`.
    pub max_f2_tilde: f64,
    /// max of plain `|B|^2` over nodes inside `B_R`.
    pub max_b2: f64,
    /// `max_b2 / (1/R + 1/R^2)`.
    pub ratio: f64,
}

/// The localized-bound table with hypothesis bookkeeping.
#[derive(Debug, Clone, Serialize)]
pub struct LocalizedTable {
    pub rows: Vec<LocalizedRow>,
    pub c0_grad: f64,
    pub c0_convexity: f64,
    pub hypothesis_violation: Option<String>,
}

impl LocalizedTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,max_f2_tilde,max_b2,ratio\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{:.17e}\n",
                row.r, row.max_f2_tilde, row.max_b2, row.ratio
            ));
        }
        out
    }
}

/// Tabulate `sup_{B_R} |B|^2 / (1/R + 1/R^2)` for a list of radii on an
/// approximate soliton patch with bounded slope and Gauss image in the
/// pairwise region `sup lambda_i lambda_j <= Lambda < sqrt(2)`. Hypothesis
/// failures are reported in the table rather than erroring.
pub fn localized_soliton_bound(
    patch: &GraphPatch,
    spec: &SolitonSpec,
    big_lambda: f64,
    r_list: &[f64],
) -> Result<LocalizedTable> {
    let gate_nodes = deep_interior(patch, 2);
    let mut residual_max: f64 = 0.0;
    for node in &gate_nodes {
        residual_max = residual_max.max(residual_at(patch, node, spec)?.norm());
    }
    if residual_max > spec.residual_threshold {
        return Err(Error::NotASoliton {
            residual: residual_max,
            threshold: spec.residual_threshold,
        });
    }

    let mut hypothesis_violation = None;
    for node in &gate_nodes {
        let du = graphgeom::jacobian(patch, node)?;
        let frame = graphgeom::adapted_frame(&du);
        let l = &frame.lambdas;
        let mut sup: f64 = 0.0;
        for i in 0..l.len() {
            for j in (i + 1)..l.len() {
                sup = sup.max(l[i] * l[j]);
            }
        }
        if sup > big_lambda + 1e-9 {
            hypothesis_violation = Some(format!(
                "sup lambda_i lambda_j = {sup} exceeds Lambda = {big_lambda} at node {node:?}"
            ));
            break;
        }
    }

    let mut rows = Vec::new();
    let mut c0_grad = 0.0;
    let mut c0_convexity = 0.0;
    for &r in r_list {
        let cutoff = RadialCutoff::new(r)?;
        c0_grad = cutoff.c0_grad;
        c0_convexity = cutoff.c0_convexity;
        let mut max_f2_tilde: f64 = 0.0;
        let mut max_b2: f64 = 0.0;
        for node in &gate_nodes {
            let x = patch.coords(node);
            let radius = x.iter().map(|c| c * c).sum::<f64>().sqrt();
            if radius > r {
                continue;
            }
            let b2 = graphgeom::norm_b_sq_coordinate(patch, node)?;
            let du = graphgeom::jacobian(patch, node)?;
            let v = graphgeom::induced_metric(&du).determinant().sqrt();
            max_b2 = max_b2.max(b2);
            max_f2_tilde = max_f2_tilde.max(b2 * (spec.k2 * v).exp() * cutoff.eta1(radius));
        }
        let denom = 1.0 / r + 1.0 / (r * r);
        rows.push(LocalizedRow {
            r,
            max_f2_tilde,
            max_b2,
            ratio: max_b2 / denom,
        });
    }
    Ok(LocalizedTable {
        rows,
        c0_grad,
        c0_convexity,
        hypothesis_violation,
    })
}
