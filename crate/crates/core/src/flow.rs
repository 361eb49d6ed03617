//! Graphical mean-curvature-flow time stepping with the composition
//! identity residual, maximum-principle monitor, localized test quantity,
//! and the curvature-estimate scaling harness.
//!
//! The solver advances the nonparametric equation
//! `d/dt u^a = g^{ij} d_ij u^a`. At fixed grid coordinates this velocity
//! differs from the mean curvature vector by the tangential vector
//! `g^{ij} Gamma^k_{ij} d_k F`, so every scalar-evolution monitor carries
//! the advection correction `g^{ij} Gamma^k_{ij} d_k v` that restores the
//! normal-gauge composition identity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields;
use crate::graphgeom::{self, Boundary, GraphPatch};
use crate::quadform::{self, LambdaProfile};

/// Time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Euler,
    Rk2,
}

/// Cutoff window parameters `(R, T)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CutoffWindow {
    pub r: f64,
    pub t: f64,
}

fn default_cfl() -> f64 {
    0.2
}

fn default_monitor_every() -> usize {
    1
}

/// Configuration of a flow run and its monitors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowConfig {
    pub dt: f64,
    #[serde(default)]
    pub scheme: Scheme,
    pub steps: usize,
    #[serde(default = "default_monitor_every")]
    pub monitor_every: usize,
    /// Multiplier in the localized test function `f = |B|^2 e^{k v}`.
    pub k: f64,
    /// Slope hypothesis `v <= v0 < 3`.
    pub v0: f64,
    /// Pairwise-angle hypothesis `sup lambda_i lambda_j <= lambda0 < 1`.
    pub lambda0: f64,
    pub cutoff: CutoffWindow,
    /// Radii at which `sup |B|` is tracked per monitored step.
    #[serde(default)]
    pub radii: Vec<f64>,
    /// Parabolic stability factor: require `dt <= cfl min(spacing)^2`.
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default)]
    pub seed: u64,
}

impl FlowConfig {
    pub fn validate(&self, patch: &GraphPatch) -> Result<()> {
        let h = patch.min_spacing();
        if !(self.dt > 0.0) || self.dt > self.cfl * h * h + 1e-15 {
            return Err(Error::Domain(format!(
                "dt = {} violates the stability bound {} * {}^2 = {}",
                self.dt,
                self.cfl,
                h,
                self.cfl * h * h
            )));
        }
        if self.monitor_every == 0 {
            return Err(Error::Domain("monitor_every must be positive".into()));
        }
        if self.steps < 2 {
            return Err(Error::Domain("steps must be at least 2".into()));
        }
        if self.cutoff.r <= 0.0 || self.cutoff.t <= 0.0 {
            return Err(Error::Domain("cutoff window must be positive".into()));
        }
        Ok(())
    }
}

/// Diagnostics recorded at one monitored step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub max_v: f64,
    pub sup_b: f64,
    /// max of `f = |B|^2 e^{k v}` over monitor nodes.
    pub max_f: f64,
    /// max of `phi f` with `phi = eta(|F|, t - t_end)`.
    pub max_phi_f: f64,
    pub residual_max: f64,
    pub residual_l2: f64,
    /// Nodes where `sup lambda_i lambda_j > lambda0`.
    pub region_violations: usize,
    /// Worst of `(d_t - drift - Delta_g) v + (1 - lambda0) |B|^2` over
    /// nodes satisfying the pairwise hypothesis; nonpositive (up to
    /// discretization slack) certifies the differential inequality.
    pub sign_check_worst: f64,
    /// `sup |B|` within each configured radius (same order as config).
    pub sup_b_in_radius: Vec<f64>,
}

/// Time series of monitored diagnostics for a single run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowTrace {
    pub dt: f64,
    pub total_time: f64,
    pub k: f64,
    pub v0: f64,
    pub lambda0: f64,
    pub radii: Vec<f64>,
    pub records: Vec<StepRecord>,
}

impl FlowTrace {
    /// One CSV row per monitored step; fixed column order and formatting
    /// so identical runs are byte-identical.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,time,max_v,sup_b,max_f,max_phi_f,residual_max,residual_l2,region_violations,sign_check_worst");
        for (i, r) in self.radii.iter().enumerate() {
            out.push_str(&format!(",sup_b_r{}_{:.6}", i, r));
        }
        out.push('\n');
        for rec in &self.records {
            out.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{:.17e}",
                rec.step,
                rec.time,
                rec.max_v,
                rec.sup_b,
                rec.max_f,
                rec.max_phi_f,
                rec.residual_max,
                rec.residual_l2,
                rec.region_violations,
                rec.sign_check_worst,
            ));
            for v in &rec.sup_b_in_radius {
                out.push_str(&format!(",{:.17e}", v));
            }
            out.push('\n');
        }
        out
    }

    /// Parabolic rescaling `F -> lambda F(., t / lambda^2)`: times scale by
    /// `lambda^2`, lengths by `lambda`, so `|B|` scales by `1 / lambda` and
    /// second-order scalars by `1 / lambda^2`.
    pub fn parabolic_rescale(&self, lambda: f64) -> FlowTrace {
        let l2 = lambda * lambda;
        FlowTrace {
            dt: self.dt * l2,
            total_time: self.total_time * l2,
            k: self.k,
            v0: self.v0,
            lambda0: self.lambda0,
            radii: self.radii.iter().map(|r| r * lambda).collect(),
            records: self
                .records
                .iter()
                .map(|r| StepRecord {
                    step: r.step,
                    time: r.time * l2,
                    max_v: r.max_v,
                    sup_b: r.sup_b / lambda,
                    max_f: r.max_f / l2,
                    max_phi_f: r.max_phi_f / l2,
                    residual_max: r.residual_max / l2,
                    residual_l2: r.residual_l2 / l2,
                    region_violations: r.region_violations,
                    sign_check_worst: r.sign_check_worst / l2,
                    sup_b_in_radius: r.sup_b_in_radius.iter().map(|b| b / lambda).collect(),
                })
                .collect(),
        }
    }
}

/// One explicit step of `d/dt u^a = g^{ij} d_ij u^a`.
pub fn mcf_step(patch: &GraphPatch, dt: f64, scheme: Scheme) -> Result<GraphPatch> {
    match scheme {
        Scheme::Euler => euler_step(patch, dt),
        Scheme::Rk2 => {
            let half = euler_step(patch, 0.5 * dt)?;
            let vel = velocity(&half)?;
            apply_velocity(patch, &vel, dt)
        }
    }
}

/// `g^{ij} d_ij u^a` at every node, via ghost-extended stencils.
fn velocity(patch: &GraphPatch) -> Result<Vec<f64>> {
    let n = patch.n();
    let m = patch.m();
    let mut vel = vec![0.0; patch.node_count() * m];
    for node in patch.nodes() {
        let du = fields::jacobian_ghost(patch, &node);
        let g = graphgeom::induced_metric(&du);
        let g_inv = g
            .try_inverse()
            .ok_or_else(|| Error::Domain("induced metric not invertible".into()))?;
        let base: Vec<isize> = node.iter().map(|&v| v as isize).collect();
        let flat = patch.flat(&node);
        for a in 0..m {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    acc += g_inv[(i, j)] * second_ghost(patch, &base, a, i, j);
                }
            }
            vel[flat * m + a] = acc;
        }
    }
    Ok(vel)
}

/// Ghost-extended second derivative `d_ij u^a` at a node.
fn second_ghost(patch: &GraphPatch, base: &[isize], a: usize, i: usize, j: usize) -> f64 {
    let sp = patch.spacing();
    let shift = |di: isize, dj: isize| -> f64 {
        let mut nd = base.to_vec();
        nd[i] += di;
        nd[j] += dj;
        patch.value_at(&nd, a)
    };
    if i == j {
        (shift(1, 0) - 2.0 * shift(0, 0) + shift(-1, 0)) / (sp[i] * sp[i])
    } else {
        (shift(1, 1) - shift(1, -1) - shift(-1, 1) + shift(-1, -1)) / (4.0 * sp[i] * sp[j])
    }
}

fn apply_velocity(patch: &GraphPatch, vel: &[f64], dt: f64) -> Result<GraphPatch> {
    let m = patch.m();
    let mut next = patch.clone();
    let values = next.values_mut();
    for (idx, v) in values.iter_mut().enumerate() {
        *v += dt * vel[idx];
        if !v.is_finite() {
            let flat = idx / m;
            let mut node = vec![0usize; patch.n()];
            decode_node(flat, patch.grid(), &mut node);
            return Err(Error::Blowup {
                node,
                component: idx % m,
            });
        }
    }
    Ok(next)
}

fn euler_step(patch: &GraphPatch, dt: f64) -> Result<GraphPatch> {
    let vel = velocity(patch)?;
    apply_velocity(patch, &vel, dt)
}

fn decode_node(mut flat: usize, grid: &[usize], node: &mut [usize]) {
    for k in (0..grid.len()).rev() {
        node[k] = flat % grid[k];
        flat /= grid[k];
    }
}

/// Space-time cutoff `eta(r, t) = psi(|r|/R) psi(-t/T)` with `psi` the 4th
/// power of a C^2 smootherstep ramping 1 -> 0 on [1/2, 1].
#[derive(Debug, Clone, Copy)]
pub struct Cutoff {
    pub r: f64,
    pub t: f64,
}

/// Constants realizing the cutoff derivative properties, measured by dense
/// sampling of the closed-form construction.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CutoffConstants {
    /// `sup |d_r eta| eta^{-1/2} R` over the support.
    pub c_half: f64,
    /// `sup |d_r eta| eta^{-3/4} R` over the support.
    pub c_three_quarters: f64,
    /// `sup |d_t eta| eta^{-3/4} T` over the support.
    pub c_time: f64,
}

/// C^2 smootherstep `6 s^5 - 15 s^4 + 10 s^3` clamped to [0, 1].
fn smootherstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (s * (6.0 * s - 15.0) + 10.0)
}

fn smootherstep_prime(s: f64) -> f64 {
    if !(0.0..=1.0).contains(&s) {
        return 0.0;
    }
    30.0 * s * s * (s - 1.0) * (s - 1.0)
}

/// Base ramp: 1 on [0, 1/2], smooth descent, 0 at and beyond 1.
fn ramp(s: f64) -> f64 {
    let s = s.abs();
    if s <= 0.5 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        let phi = 1.0 - smootherstep(2.0 * (s - 0.5));
        phi.powi(4)
    }
}

/// Derivative of [`ramp`] with respect to `s` (for `s >= 0`).
fn ramp_prime(s: f64) -> f64 {
    if !(0.5..1.0).contains(&s) {
        return 0.0;
    }
    let phi = 1.0 - smootherstep(2.0 * (s - 0.5));
    -4.0 * phi.powi(3) * smootherstep_prime(2.0 * (s - 0.5)) * 2.0
}

impl Cutoff {
    pub fn new(r: f64, t: f64) -> Result<Cutoff> {
        if r <= 0.0 || t <= 0.0 {
            return Err(Error::Domain("cutoff window must be positive".into()));
        }
        Ok(Cutoff { r, t })
    }

    /// `eta(r, t)`: supported on `[-R, R] x [-T, 0]`, identically 1 on
    /// `[-R/2, R/2] x [-T/2, 0]`, nonincreasing in `|r|`.
    pub fn eta(&self, r: f64, t: f64) -> f64 {
        if t > 0.0 || t < -self.t {
            return 0.0;
        }
        ramp(r.abs() / self.r) * ramp(-t / self.t)
    }

    /// `d eta / d r` for `r >= 0`.
    pub fn eta_dr(&self, r: f64, t: f64) -> f64 {
        if t > 0.0 || t < -self.t {
            return 0.0;
        }
        ramp_prime(r.abs() / self.r) / self.r * ramp(-t / self.t)
    }

    /// `d eta / d t`.
    pub fn eta_dt(&self, r: f64, t: f64) -> f64 {
        if t > 0.0 || t < -self.t {
            return 0.0;
        }
        -ramp(r.abs() / self.r) * ramp_prime(-t / self.t) / self.t
    }

    /// Dense-sampling estimate of the derivative-property constants.
    pub fn constants(&self) -> CutoffConstants {
        // the spatial ratios are one-dimensional in s = r / R: for eta > 0,
        // |d_r eta| eta^{-a} R = |ramp'(s)| ramp(s)^{a - 1} ramp_t^{1 - a}
        // <= |ramp'(s)| ramp(s)^{a - 1}, maximized at ramp_t = 1.
        let samples = 200_000;
        let mut c_half: f64 = 0.0;
        let mut c_three_quarters: f64 = 0.0;
        let mut c_time: f64 = 0.0;
        for i in 0..samples {
            let s = i as f64 / samples as f64;
            let p = ramp(s);
            if p <= 0.0 {
                continue;
            }
            let dp = ramp_prime(s).abs();
            c_half = c_half.max(dp * p.powf(-0.5));
            c_three_quarters = c_three_quarters.max(dp * p.powf(-0.75));
            c_time = c_time.max(dp * p.powf(-0.75));
        }
        CutoffConstants {
            c_half,
            c_three_quarters,
            c_time,
        }
    }
}

/// Lambda profile and shape tensor at a node, embedded in codimension
/// `max(n, m)` so the quadratic forms (which pair the first `n` normals
/// with the lambdas) apply in every codimension.
fn node_profile_tensor(
    patch: &GraphPatch,
    node: &[usize],
) -> Result<(LambdaProfile, graphgeom::ShapeTensor)> {
    let h = graphgeom::shape_tensor(patch, node)?;
    let lambdas = h
        .frame()
        .expect("shape_tensor carries its frame")
        .lambdas
        .clone();
    let m_eff = patch.m().max(patch.n());
    let h = if m_eff > patch.m() {
        h.pad_normals(m_eff)
    } else {
        h
    };
    Ok((LambdaProfile::new(lambdas, m_eff)?, h))
}

/// Nodes at which pointwise monitors are evaluated: everything for a
/// periodic patch, the width-2 interior otherwise.
pub fn monitor_nodes(patch: &GraphPatch) -> Vec<Vec<usize>> {
    match patch.boundary() {
        Boundary::Periodic => patch.nodes().collect(),
        Boundary::FixedAffine => patch.interior_nodes(2),
    }
}

/// Per-node residual of the composition identity (normal gauge):
/// `(d_t v - advection) - Delta_g v + q_v(lambda, B)`, with `d_t v` the
/// centered difference of the slope field across three consecutive states.
pub struct ResidualField {
    pub nodes: Vec<Vec<usize>>,
    pub values: Vec<f64>,
    pub max: f64,
    /// Root-mean-square over evaluated nodes.
    pub l2: f64,
}

impl ResidualField {
    /// One JSON object per line: `{"node": [...], "residual": x}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (node, value) in self.nodes.iter().zip(&self.values) {
            out.push_str(&format!(
                "{{\"node\":{:?},\"residual\":{:e}}}\n",
                node, value
            ));
        }
        out
    }
}

/// Evaluate the composition-identity residual from three consecutive flow
/// states. `include_drift = false` is the ablation control that omits the
/// gauge correction (and must not converge).
pub fn residual_evolution_identity(
    prev: &GraphPatch,
    cur: &GraphPatch,
    next: &GraphPatch,
    dt: f64,
    include_drift: bool,
) -> Result<ResidualField> {
    prev.check_same_grid(cur)?;
    next.check_same_grid(cur)?;
    let v_prev = fields::slope_field(prev);
    let v_next = fields::slope_field(next);
    let v_cur = fields::slope_field(cur);
    let metric = fields::metric_field(cur);
    let nodes = monitor_nodes(cur);
    let mut values = Vec::with_capacity(nodes.len());
    let mut max: f64 = 0.0;
    let mut sq = 0.0;
    for node in &nodes {
        let flat = cur.flat(node);
        let dv_dt = (v_next[flat] - v_prev[flat]) / (2.0 * dt);
        let lap = fields::laplace_beltrami(&v_cur, &metric, cur, node)?;
        let drift = if include_drift {
            fields::advection_correction(&v_cur, &metric, cur, node)?
        } else {
            0.0
        };
        let (profile, h) = node_profile_tensor(cur, node)?;
        let qv = quadform::q_v(&profile, &h)?;
        let r = dv_dt - drift - lap + qv;
        max = max.max(r.abs());
        sq += r * r;
        values.push(r);
    }
    let l2 = (sq / values.len().max(1) as f64).sqrt();
    Ok(ResidualField {
        nodes,
        values,
        max,
        l2,
    })
}

/// Localized quantity `phi f = eta(|F|, t) |B|^2 e^{k v}`; returns the max
/// and the lexicographically first arg-max node. `t` is the cutoff time
/// argument (0 at the end of the window, negative inside it).
pub fn localized_quantity(
    patch: &GraphPatch,
    t: f64,
    k: f64,
    cutoff: &Cutoff,
) -> Result<(f64, Vec<usize>)> {
    let mut best = 0.0;
    let mut arg: Vec<usize> = vec![0; patch.n()];
    for node in monitor_nodes(patch) {
        let pos = patch.position(&node);
        let phi = cutoff.eta(pos.norm(), t);
        if phi <= 0.0 {
            continue;
        }
        let b2 = graphgeom::norm_b_sq_coordinate(patch, &node)?;
        let du = graphgeom::jacobian(patch, &node)?;
        let v = graphgeom::induced_metric(&du).determinant().sqrt();
        let value = phi * b2 * (k * v).exp();
        if value > best {
            best = value;
            arg = node;
        }
    }
    Ok((best, arg))
}

/// Verdict of the maximum-principle monitor.
#[derive(Debug, Clone, Serialize)]
pub struct MaxPrincipleVerdict {
    pub passes: bool,
    pub initial_max_v: f64,
    /// Index into the trace records of the first violating step.
    pub first_violation: Option<usize>,
}

/// Check that `max v` is non-increasing along the trace up to per-step
/// slack `1e-6 (1 + max v)`. Requires the initial state to satisfy the
/// hypothesis `max v <= v0 < 3`.
pub fn monitor_max_principle(trace: &FlowTrace, v0: f64) -> Result<MaxPrincipleVerdict> {
    let first = trace
        .records
        .first()
        .ok_or_else(|| Error::Domain("empty trace".into()))?;
    if !(v0 < 3.0) || first.max_v > v0 + 1e-12 {
        return Err(Error::HypothesisViolated(format!(
            "initial max v = {} must satisfy max v <= v0 = {} < 3",
            first.max_v, v0
        )));
    }
    let mut first_violation = None;
    for w in 1..trace.records.len() {
        let prev = trace.records[w - 1].max_v;
        let cur = trace.records[w].max_v;
        if cur > prev + 1e-6 * (1.0 + prev) {
            first_violation = Some(w);
            break;
        }
    }
    Ok(MaxPrincipleVerdict {
        passes: first_violation.is_none(),
        initial_max_v: first.max_v,
        first_violation,
    })
}

/// One row of the Theorem-4.1-style scaling table.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateRow {
    pub r: f64,
    pub t: f64,
    pub sup_b: f64,
    pub c_fit: f64,
}

/// The scaling table plus its summary statistics.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateTable {
    pub rows: Vec<EstimateRow>,
    pub max_c_fit: f64,
    /// For each `T` in the sweep, the max of `C_fit` over the `R` values.
    pub max_c_fit_per_t: Vec<f64>,
    /// Ratio of the largest to the smallest entry of `max_c_fit_per_t`.
    pub variation_factor: f64,
    pub hypothesis_violation: Option<String>,
}

impl EstimateTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,t,sup_b,c_fit\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{:.17e}\n",
                row.r, row.t, row.sup_b, row.c_fit
            ));
        }
        out
    }
}

/// Compute `C_fit = sup_{D_{R/2, T/2}} |B| / (1/R + 1/sqrt(T))` over a
/// sweep of `(R, T)`, reading `sup |B|` in the trailing window of the
/// trace from the per-radius diagnostics. The trace must track radius
/// `R/2` for every `R` in `r_list`.
pub fn estimate_check(trace: &FlowTrace, r_list: &[f64], t_list: &[f64]) -> Result<EstimateTable> {
    let mut rows = Vec::new();
    let mut max_c_fit: f64 = 0.0;
    let mut per_t = Vec::new();
    for &t_win in t_list {
        if t_win <= 0.0 {
            return Err(Error::Domain("T values must be positive".into()));
        }
        if t_win / 2.0 > trace.total_time + 1e-9 {
            return Err(Error::Domain(format!(
                "trace covers {} of time, cannot window T/2 = {}",
                trace.total_time,
                t_win / 2.0
            )));
        }
        let t_start = trace.total_time - t_win / 2.0;
        let mut t_max: f64 = 0.0;
        for &r_win in r_list {
            let idx = trace
                .radii
                .iter()
                .position(|&r| (r - r_win / 2.0).abs() < 1e-9)
                .ok_or_else(|| {
                    Error::Domain(format!("trace does not track radius {}", r_win / 2.0))
                })?;
            let sup_b = trace
                .records
                .iter()
                .filter(|rec| rec.time >= t_start - 1e-12)
                .map(|rec| rec.sup_b_in_radius[idx])
                .fold(0.0, f64::max);
            let c_fit = sup_b / (1.0 / r_win + 1.0 / t_win.sqrt());
            max_c_fit = max_c_fit.max(c_fit);
            t_max = t_max.max(c_fit);
            rows.push(EstimateRow {
                r: r_win,
                t: t_win,
                sup_b,
                c_fit,
            });
        }
        per_t.push(t_max);
    }
    let hi = per_t.iter().cloned().fold(0.0, f64::max);
    let lo = per_t.iter().cloned().fold(f64::INFINITY, f64::min);
    let variation_factor = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let hypothesis_violation = trace
        .records
        .iter()
        .find(|rec| rec.max_v > trace.v0 + 1e-9)
        .map(|rec| {
            format!(
                "max v = {} exceeded v0 = {} at step {}",
                rec.max_v, trace.v0, rec.step
            )
        });
    Ok(EstimateTable {
        rows,
        max_c_fit,
        max_c_fit_per_t: per_t,
        variation_factor,
        hypothesis_violation,
    })
}

/// Result of a complete monitored flow run.
pub struct FlowRun {
    pub trace: FlowTrace,
    pub final_patch: GraphPatch,
}

/// Advance the flow and record diagnostics. Monitored steps are the
/// interior steps `s = 1, 1 + monitor_every, ...` (the centered residual
/// needs both neighbors).
pub fn run_flow(initial: &GraphPatch, config: &FlowConfig) -> Result<FlowRun> {
    config.validate(initial)?;
    let cutoff = Cutoff::new(config.cutoff.r, config.cutoff.t)?;
    let total_time = config.steps as f64 * config.dt;
    let mut records = Vec::new();

    let mut prev = initial.clone();
    let mut cur = mcf_step(&prev, config.dt, config.scheme)?;

    // diagnostics at step 0 reuse the forward state pair; the residual
    // there is reported as the centered value at step 1 later, so step 0
    // carries only the pointwise monitors.
    records.push(monitor_state(
        initial, None, 0, 0.0, total_time, config, &cutoff,
    )?);

    for step in 1..config.steps {
        let next = mcf_step(&cur, config.dt, config.scheme)?;
        if (step - 1) % config.monitor_every == 0 {
            let residual =
                residual_evolution_identity(&prev, &cur, &next, config.dt, true)?;
            records.push(monitor_state(
                &cur,
                Some(&residual),
                step,
                step as f64 * config.dt,
                total_time,
                config,
                &cutoff,
            )?);
        }
        prev = cur;
        cur = next;
    }
    records.push(monitor_state(
        &cur,
        None,
        config.steps,
        total_time,
        total_time,
        config,
        &cutoff,
    )?);

    Ok(FlowRun {
        trace: FlowTrace {
            dt: config.dt,
            total_time,
            k: config.k,
            v0: config.v0,
            lambda0: config.lambda0,
            radii: config.radii.clone(),
            records,
        },
        final_patch: cur,
    })
}

fn monitor_state(
    patch: &GraphPatch,
    residual: Option<&ResidualField>,
    step: usize,
    time: f64,
    total_time: f64,
    config: &FlowConfig,
    cutoff: &Cutoff,
) -> Result<StepRecord> {
    let v_field = fields::slope_field(patch);
    let max_v = v_field.iter().cloned().fold(0.0, f64::max);
    let mut sup_b: f64 = 0.0;
    let mut max_f: f64 = 0.0;
    let mut max_phi_f: f64 = 0.0;
    let mut region_violations = 0usize;
    let mut sign_check_worst = f64::NEG_INFINITY;
    let mut sup_b_in_radius = vec![0.0f64; config.radii.len()];
    let eta_time = time - total_time;

    for node in monitor_nodes(patch) {
        let flat = patch.flat(&node);
        let (profile, h) = node_profile_tensor(patch, &node)?;
        let b2 = h.norm_sq();
        let b = b2.sqrt();
        sup_b = sup_b.max(b);
        let v = v_field[flat];
        let f = b2 * (config.k * v).exp();
        max_f = max_f.max(f);
        let pos = patch.position(&node);
        let phi = cutoff.eta(pos.norm(), eta_time);
        max_phi_f = max_phi_f.max(phi * f);
        for (slot, &r) in config.radii.iter().enumerate() {
            if pos.norm() <= r {
                sup_b_in_radius[slot] = sup_b_in_radius[slot].max(b);
            }
        }
        let sup_pair = profile.sup_pairwise();
        if sup_pair > config.lambda0 + 1e-12 {
            region_violations += 1;
        } else if let Some(res) = residual {
            // (d_t - drift - Delta_g) v = residual - q_v <= -(1 - lambda0) |B|^2
            // rearranged: residual - q_v + (1 - lambda0) |B|^2 <= slack
            if let Some(pos_idx) = res.nodes.iter().position(|nd| nd == &node) {
                let qv = quadform::q_v(&profile, &h)?;
                let lhs = res.values[pos_idx] - qv + (1.0 - config.lambda0) * b2;
                sign_check_worst = sign_check_worst.max(lhs);
            }
        }
    }
    if sign_check_worst == f64::NEG_INFINITY {
        sign_check_worst = 0.0;
    }
    let (residual_max, residual_l2) = residual.map(|r| (r.max, r.l2)).unwrap_or((0.0, 0.0));
    Ok(StepRecord {
        step,
        time,
        max_v,
        sup_b,
        max_f,
        max_phi_f,
        residual_max,
        residual_l2,
        region_violations,
        sign_check_worst,
        sup_b_in_radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patches;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn small_config(patch: &GraphPatch, steps: usize) -> FlowConfig {
        let h = patch.min_spacing();
        FlowConfig {
            dt: 0.2 * h * h,
            scheme: Scheme::Euler,
            steps,
            monitor_every: 1,
            k: 1.0,
            v0: 2.9,
            lambda0: 0.9,
            cutoff: CutoffWindow { r: 10.0, t: 10.0 },
            radii: vec![5.0],
            cfl: 0.2,
            seed: 0,
        }
    }

    #[test]
    fn affine_patch_is_stationary() {
        let p = patches::affine_patch(2, 2, -1.0, 1.0, 11, &[0.1, 0.0], &[
            vec![0.3, -0.2],
            vec![0.0, 0.5],
        ])
        .unwrap();
        let q = mcf_step(&p, 1e-4, Scheme::Euler).unwrap();
        for (a, b) in p.values().iter().zip(q.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn euler_step_matches_hand_stencil_at_critical_point() {
        // u^1 = A sin x1 with n = 1, m = 2; at x1 = pi/2 the gradient
        // vanishes, so the update is dt * (hand central second difference).
        let a = 0.7;
        let grid = 64usize;
        let p = GraphPatch::from_fn(
            1,
            2,
            &[0.0],
            &[2.0 * PI],
            &[grid],
            Boundary::Periodic,
            |x, out| {
                out[0] = a * x[0].sin();
                out[1] = 0.0;
            },
        )
        .unwrap();
        let h = p.spacing()[0];
        let dt = 0.1 * h * h;
        let q = mcf_step(&p, dt, Scheme::Euler).unwrap();
        let node = grid / 4; // x1 = pi / 2
        let x = p.coords(&[node])[0];
        assert_relative_eq!(x, PI / 2.0, epsilon = 1e-12);
        let stencil = (a * (x + h).sin() - 2.0 * a * x.sin() + a * (x - h).sin()) / (h * h);
        let expected = p.value(&[node], 0) + dt * stencil;
        assert_relative_eq!(q.value(&[node], 0), expected, epsilon = 1e-12);
    }

    #[test]
    fn periodic_sine_sup_decreases() {
        let p = patches::sine_patch(2, 1, 24, &[0.4], &[1.0, 1.0], &[0.0]).unwrap();
        let h = p.min_spacing();
        let mut cur = p;
        let mut sup_prev = cur.values().iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
        for _ in 0..100 {
            cur = mcf_step(&cur, 0.2 * h * h, Scheme::Euler).unwrap();
            let sup = cur.values().iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
            assert!(sup < sup_prev);
            sup_prev = sup;
        }
    }

    #[test]
    fn blowup_reports_node() {
        let mut p = patches::sine_patch(1, 1, 8, &[0.4], &[1.0], &[0.0]).unwrap();
        p.values_mut()[3] = f64::NAN;
        match mcf_step(&p, 1e-4, Scheme::Euler) {
            Err(Error::Blowup { .. }) => {}
            other => panic!("expected blowup, got {other:?}"),
        }
    }

    #[test]
    fn cutoff_basic_properties() {
        let c = Cutoff::new(4.0, 9.0).unwrap();
        assert_eq!(c.eta(0.0, 0.0), 1.0);
        assert_eq!(c.eta(1.9, -4.0), 1.0); // inside the half window
        assert_eq!(c.eta(4.0, -1.0), 0.0);
        assert_eq!(c.eta(-4.0, -1.0), 0.0);
        assert_eq!(c.eta(0.0, 0.5), 0.0); // future is outside the support
        assert_eq!(c.eta(0.0, -9.5), 0.0);
        // monotone in |r|
        let mut last = 1.0;
        for i in 0..100 {
            let r = 4.0 * i as f64 / 99.0;
            let e = c.eta(r, 0.0);
            assert!(e <= last + 1e-15);
            last = e;
        }
    }

    #[test]
    fn cutoff_derivative_constant_sampled() {
        let c = Cutoff::new(4.0, 9.0).unwrap();
        let consts = c.constants();
        assert!(consts.c_three_quarters.is_finite());
        // dense sampling of |d_r eta| / eta^{3/4} <= C_{3/4} / R
        for i in 0..5000 {
            let r = 4.0 * i as f64 / 5000.0;
            let e = c.eta(r, -1.0);
            if e <= 1e-300 {
                continue;
            }
            let ratio = c.eta_dr(r, -1.0).abs() / e.powf(0.75);
            assert!(
                ratio <= consts.c_three_quarters / 4.0 + 1e-9,
                "ratio {ratio} exceeds {} at r = {r}",
                consts.c_three_quarters / 4.0
            );
        }
        // the analytic derivative matches finite differences
        let fd = (c.eta(2.7 + 1e-6, -1.0) - c.eta(2.7 - 1e-6, -1.0)) / 2e-6;
        assert_relative_eq!(c.eta_dr(2.7, -1.0), fd, epsilon = 1e-6);
    }

    #[test]
    fn residual_zero_on_affine() {
        let p = patches::affine_patch(2, 1, -1.0, 1.0, 11, &[0.0], &[vec![0.4, 0.1]]).unwrap();
        let res = residual_evolution_identity(&p, &p, &p, 1e-4, true).unwrap();
        assert!(res.max < 1e-11, "residual = {}", res.max);
    }

    #[test]
    fn residual_refines_at_order_one_in_dt_two_in_space() {
        // simultaneous (dt, h^2) halving should shrink the residual norm
        // by about 4
        let norm_at = |grid: usize| -> f64 {
            let p = GraphPatch::from_fn(
                2,
                2,
                &[0.0, 0.0],
                &[2.0 * PI, 2.0 * PI],
                &[grid, grid],
                Boundary::Periodic,
                |x, out| {
                    out[0] = 0.3 * x[0].sin() * x[1].cos();
                    out[1] = 0.0;
                },
            )
            .unwrap();
            let h = p.min_spacing();
            let dt = 0.05 * h * h;
            let cur = mcf_step(&p, dt, Scheme::Euler).unwrap();
            let next = mcf_step(&cur, dt, Scheme::Euler).unwrap();
            residual_evolution_identity(&p, &cur, &next, dt, true)
                .unwrap()
                .l2
        };
        let coarse = norm_at(16);
        let fine = norm_at(32);
        let factor = coarse / fine;
        assert!(
            (3.0..5.0).contains(&factor),
            "refinement factor {factor} outside 4 +- 25%"
        );
    }

    #[test]
    fn residual_ablation_does_not_converge() {
        let norm_at = |grid: usize, drift: bool| -> f64 {
            let p = GraphPatch::from_fn(
                2,
                2,
                &[0.0, 0.0],
                &[2.0 * PI, 2.0 * PI],
                &[grid, grid],
                Boundary::Periodic,
                |x, out| {
                    out[0] = 0.3 * x[0].sin() * x[1].cos();
                    out[1] = 0.0;
                },
            )
            .unwrap();
            let h = p.min_spacing();
            let dt = 0.05 * h * h;
            let cur = mcf_step(&p, dt, Scheme::Euler).unwrap();
            let next = mcf_step(&cur, dt, Scheme::Euler).unwrap();
            residual_evolution_identity(&p, &cur, &next, dt, drift)
                .unwrap()
                .l2
        };
        let coarse = norm_at(32, false);
        let fine = norm_at(64, false);
        // without the gauge correction the defect converges to the nonzero
        // advection term, so the refinement gain stays well below the
        // convergent factor 4
        assert!(
            coarse / fine < 2.0,
            "ablation unexpectedly converged: {} -> {}",
            coarse,
            fine
        );
        // and the ablated residual dwarfs the corrected one
        assert!(fine > 4.0 * norm_at(64, true));
    }

    #[test]
    fn localized_quantity_zero_on_affine_and_outside_support() {
        let p = patches::affine_patch(2, 1, -1.0, 1.0, 11, &[0.0], &[vec![0.4, 0.1]]).unwrap();
        let c = Cutoff::new(10.0, 10.0).unwrap();
        let (max, _) = localized_quantity(&p, -1.0, 1.0, &c).unwrap();
        assert!(max < 1e-18);
        // every node outside B_R contributes 0: a patch shifted 10 units in
        // the graph direction lies entirely outside the R = 5 window
        let s = GraphPatch::from_fn(
            2,
            1,
            &[0.0, 0.0],
            &[2.0 * PI, 2.0 * PI],
            &[16, 16],
            Boundary::Periodic,
            |x, out| out[0] = 10.0 + 0.4 * x[0].sin() * x[1].sin(),
        )
        .unwrap();
        let far = Cutoff::new(5.0, 10.0).unwrap();
        let (max, _) = localized_quantity(&s, -1.0, 1.0, &far).unwrap();
        assert_eq!(max, 0.0);
    }

    #[test]
    fn localized_quantity_matches_brute_force() {
        let p = patches::sine_patch(2, 1, 16, &[0.4], &[1.0, 2.0], &[0.3]).unwrap();
        let c = Cutoff::new(8.0, 10.0).unwrap();
        let (max, arg) = localized_quantity(&p, -1.0, 0.7, &c).unwrap();
        let mut best = 0.0;
        let mut best_node = vec![0, 0];
        for node in p.nodes() {
            let pos = p.position(&node);
            let phi = c.eta(pos.norm(), -1.0);
            let b2 = graphgeom::norm_b_sq_coordinate(&p, &node).unwrap();
            let du = graphgeom::jacobian(&p, &node).unwrap();
            let v = graphgeom::induced_metric(&du).determinant().sqrt();
            let val = phi * b2 * (0.7 * v).exp();
            if val > best {
                best = val;
                best_node = node;
            }
        }
        assert_relative_eq!(max, best, epsilon = 1e-14);
        assert_eq!(arg, best_node);
    }

    #[test]
    fn run_flow_trace_and_monitors() {
        let p = patches::sine_patch(2, 1, 16, &[0.3], &[1.0, 1.0], &[0.0]).unwrap();
        let cfg = small_config(&p, 30);
        let run = run_flow(&p, &cfg).unwrap();
        assert!(run.trace.records.len() >= 3);
        // monotone time stamps
        for w in run.trace.records.windows(2) {
            assert!(w[1].time > w[0].time);
        }
        let verdict = monitor_max_principle(&run.trace, 2.9).unwrap();
        assert!(verdict.passes, "violation at {:?}", verdict.first_violation);
        // region hypothesis holds for this gentle initial data
        for rec in &run.trace.records {
            assert_eq!(rec.region_violations, 0);
        }
    }

    #[test]
    fn max_principle_detects_injected_violation() {
        let p = patches::sine_patch(2, 1, 16, &[0.3], &[1.0, 1.0], &[0.0]).unwrap();
        let cfg = small_config(&p, 10);
        let mut trace = run_flow(&p, &cfg).unwrap().trace;
        let n = trace.records.len();
        trace.records[n / 2].max_v += 0.5;
        let verdict = monitor_max_principle(&trace, 2.9).unwrap();
        assert!(!verdict.passes);
        assert_eq!(verdict.first_violation, Some(n / 2));
    }

    #[test]
    fn determinism_bitwise() {
        let p = patches::sine_patch(2, 1, 12, &[0.3], &[1.0, 1.0], &[0.0]).unwrap();
        let cfg = small_config(&p, 10);
        let a = run_flow(&p, &cfg).unwrap().trace;
        let b = run_flow(&p, &cfg).unwrap().trace;
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn estimate_check_affine_is_zero_and_rescaling_invariant() {
        let p = patches::affine_patch(2, 1, -4.0, 4.0, 17, &[0.0], &[vec![0.2, 0.1]]).unwrap();
        let h = p.min_spacing();
        let cfg = FlowConfig {
            dt: 0.1 * h * h,
            scheme: Scheme::Euler,
            steps: 10,
            monitor_every: 1,
            k: 1.0,
            v0: 2.9,
            lambda0: 0.9,
            cutoff: CutoffWindow { r: 4.0, t: 1.0 },
            radii: vec![1.0, 2.0],
            cfl: 0.2,
            seed: 0,
        };
        let trace = run_flow(&p, &cfg).unwrap().trace;
        let total = trace.total_time;
        let table = estimate_check(&trace, &[2.0, 4.0], &[total, 2.0 * total]).unwrap();
        for row in &table.rows {
            assert!(row.c_fit.abs() < 1e-10);
        }

        // rescaling invariance on a non-trivial trace
        let s = patches::sine_patch(2, 1, 16, &[0.3], &[1.0, 1.0], &[0.0]).unwrap();
        let cfg2 = small_config(&s, 20);
        let trace2 = run_flow(&s, &cfg2).unwrap().trace;
        let table2 = estimate_check(&trace2, &[10.0], &[trace2.total_time]).unwrap();
        let lam = 3.0;
        let scaled = trace2.parabolic_rescale(lam);
        let table3 =
            estimate_check(&scaled, &[lam * 10.0], &[lam * lam * trace2.total_time]).unwrap();
        assert_relative_eq!(table2.max_c_fit, table3.max_c_fit, epsilon = 1e-8);
    }

    #[test]
    fn sign_check_negative_on_pinched_data() {
        // gentle initial data well inside the lambda0 region: the
        // differential-inequality check must come out nonpositive up to
        // discretization slack
        let p = patches::sine_patch(2, 1, 20, &[0.2], &[1.0, 1.0], &[0.0]).unwrap();
        let cfg = small_config(&p, 20);
        let run = run_flow(&p, &cfg).unwrap();
        let h = p.min_spacing();
        for rec in &run.trace.records {
            assert!(
                rec.sign_check_worst <= 10.0 * h * h,
                "sign check {} at step {}",
                rec.sign_check_worst,
                rec.step
            );
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let p = patches::sine_patch(2, 1, 8, &[0.3], &[1.0, 1.0], &[0.0]).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        let q: GraphPatch = serde_json::from_str(&json).unwrap();
        assert_eq!(p.values(), q.values());
        assert_eq!(p.grid(), q.grid());
    }
}
