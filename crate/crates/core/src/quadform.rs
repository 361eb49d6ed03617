//! Hessian quadratic forms of the slope function and its logarithm,
//! evaluated on shape tensors, plus an independent minimum-eigenvalue
//! oracle and the bound-certification scans built on it.
//!
//! Two algebraically equivalent but independently coded evaluation paths
//! are kept for the log-slope form: the fully expanded closed form
//! ([`q_logv`]) and the coframe contraction ([`q_logv_via_coframe`]). The
//! eigen-oracle assembles its matrix from the coframe path, so the two
//! routes cross-check each other.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graphgeom::ShapeTensor;

/// Dimension cap for the eigen-oracle; keeps the form matrix at most
/// 126 x 126.
pub const ORACLE_DIM_CAP: usize = 6;

/// A profile of Jordan-angle tangents `lambda_1..lambda_n >= 0`.
#[derive(Debug, Clone, Serialize)]
pub struct LambdaProfile {
    pub lambdas: Vec<f64>,
    pub n: usize,
    pub m: usize,
}

impl LambdaProfile {
    pub fn new(lambdas: Vec<f64>, m: usize) -> Result<Self> {
        let n = lambdas.len();
        if n > m {
            return Err(Error::Domain(format!(
                "profile requires n <= m, got n = {n}, m = {m}"
            )));
        }
        for &l in &lambdas {
            if !l.is_finite() || l < 0.0 {
                return Err(Error::Domain(format!("lambda must be finite and >= 0, got {l}")));
            }
        }
        Ok(LambdaProfile { lambdas, n, m })
    }

    /// `v(lambda) = prod sqrt(1 + lambda_j^2)`.
    pub fn slope(&self) -> f64 {
        self.lambdas.iter().map(|l| (1.0 + l * l).sqrt()).product()
    }

    /// Largest pairwise product over distinct indices (0 when n < 2).
    pub fn sup_pairwise(&self) -> f64 {
        let mut sup: f64 = 0.0;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                sup = sup.max(self.lambdas[i] * self.lambdas[j]);
            }
        }
        sup
    }

    fn check_tensor(&self, h: &ShapeTensor) -> Result<()> {
        if h.n() != self.n || h.m() != self.m {
            return Err(Error::DimensionMismatch {
                expected_ambient: self.m + self.n,
                expected_tangent: self.n,
                got_ambient: h.m() + h.n(),
                got_tangent: h.n(),
            });
        }
        Ok(())
    }
}

/// Which quadratic form the eigen-oracle should assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FormKind {
    LogV,
    V,
}

/// Result of a certification or estimation scan.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub threshold: f64,
    pub samples: usize,
    pub min_rayleigh: f64,
    pub claimed_bound: f64,
    /// `min_rayleigh - claimed_bound`; negative margins are reported, not
    /// silenced.
    pub margin: f64,
    pub worst_profile: LambdaProfile,
}

impl BoundReport {
    pub fn passes(&self) -> bool {
        self.margin >= -1e-9
    }
}

/// The expanded closed form of
/// `sum_i Hess(log v)(dgamma(e_i), dgamma(e_i))`.
pub fn q_logv(profile: &LambdaProfile, h: &ShapeTensor) -> Result<f64> {
    profile.check_tensor(h)?;
    let n = profile.n;
    let m = profile.m;
    let l = &profile.lambdas;
    let mut q = 0.0;
    for alpha in n..m {
        for i in 0..n {
            for j in 0..n {
                let x = h.get(alpha, i, j);
                q += x * x;
            }
        }
    }
    for i in 0..n {
        let x = h.get(i, i, i);
        q += (1.0 + l[i] * l[i]) * x * x;
    }
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let a = h.get(j, i, i);
            q += a * a;
            let b = h.get(i, i, j);
            q += (2.0 + l[i] * l[i]) * b * b;
            q += 2.0 * l[i] * l[j] * h.get(i, j, i) * h.get(j, i, i);
        }
    }
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if i == j || j == k || i == k {
                    continue;
                }
                let x = h.get(k, i, j);
                q += x * x + l[i] * l[j] * h.get(i, j, k) * h.get(j, i, k);
            }
        }
    }
    Ok(q)
}

/// The same quantity contracted directly from the coframe tensor:
/// `|B|^2 + sum_{i,j} lambda_j^2 h_{j,ij}^2
///        + sum_{i, j != k} lambda_j lambda_k h_{k,ij} h_{j,ik}`.
pub fn q_logv_via_coframe(profile: &LambdaProfile, h: &ShapeTensor) -> Result<f64> {
    profile.check_tensor(h)?;
    let n = profile.n;
    let l = &profile.lambdas;
    let mut q = h.norm_sq();
    for i in 0..n {
        for j in 0..n {
            let x = h.get(j, i, j);
            q += l[j] * l[j] * x * x;
        }
    }
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if j == k {
                    continue;
                }
                q += l[j] * l[k] * h.get(k, i, j) * h.get(j, i, k);
            }
        }
    }
    Ok(q)
}

/// `sum_i Hess(v)(dgamma(e_i), dgamma(e_i))` through the identity
/// `Hess v = v (Hess log v + d log v (x) d log v)`:
/// `q_v = v(lambda) (q_logv + sum_i (sum_j lambda_j h_{j,ij})^2)`.
pub fn q_v(profile: &LambdaProfile, h: &ShapeTensor) -> Result<f64> {
    let base = q_logv(profile, h)?;
    let n = profile.n;
    let l = &profile.lambdas;
    let mut grad = 0.0;
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            s += l[j] * h.get(j, i, j);
        }
        grad += s * s;
    }
    Ok(profile.slope() * (base + grad))
}

/// Index of coordinate (alpha, i <= j) in the packed layout used by the
/// form matrix, restricted to alpha < n (the alpha >= n block is diagonal).
fn coord(n: usize, alpha: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    let pairs = n * (n + 1) / 2;
    alpha * pairs + i * n - i * (i + 1) / 2 + j
}

fn coord_scale(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        std::f64::consts::FRAC_1_SQRT_2
    }
}

/// Assemble the symmetric matrix of the chosen form over the coupled
/// `alpha < n` block, in coordinates where `|B|^2` is the identity form
/// (off-diagonal slots carry weight sqrt(2)).
fn form_matrix(profile: &LambdaProfile, form: FormKind) -> DMatrix<f64> {
    let n = profile.n;
    let l = &profile.lambdas;
    let dim = n * n * (n + 1) / 2;
    let mut mat = DMatrix::identity(dim, dim);

    let add = |mat: &mut DMatrix<f64>, a: (usize, usize, usize), b: (usize, usize, usize), c: f64| {
        let ia = coord(n, a.0, a.1, a.2);
        let ib = coord(n, b.0, b.1, b.2);
        let w = c * coord_scale(a.1, a.2) * coord_scale(b.1, b.2);
        if ia == ib {
            mat[(ia, ia)] += w;
        } else {
            mat[(ia, ib)] += w / 2.0;
            mat[(ib, ia)] += w / 2.0;
        }
    };

    // sum_{i,j} lambda_j^2 h_{j,ij}^2
    for i in 0..n {
        for j in 0..n {
            add(&mut mat, (j, i, j), (j, i, j), l[j] * l[j]);
        }
    }
    // sum_i sum_{j != k} lambda_j lambda_k h_{k,ij} h_{j,ik}
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if j == k {
                    continue;
                }
                add(&mut mat, (k, i, j), (j, i, k), l[j] * l[k]);
            }
        }
    }
    if form == FormKind::V {
        // gradient term sum_i (sum_j lambda_j h_{j,ij})^2
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    add(&mut mat, (j, i, j), (k, i, k), l[j] * l[k]);
                }
            }
        }
        mat *= profile.slope();
    }
    mat
}

/// Minimum Rayleigh quotient `inf_{|h| = 1} Q(h)` of the chosen form, via
/// the minimum eigenvalue of the assembled form matrix.
pub fn rayleigh_min(profile: &LambdaProfile, form: FormKind) -> Result<f64> {
    if profile.n > ORACLE_DIM_CAP || profile.m > ORACLE_DIM_CAP {
        return Err(Error::Cap {
            n: profile.n,
            m: profile.m,
            cap: ORACLE_DIM_CAP,
        });
    }
    let mat = form_matrix(profile, form);
    let min_block = mat
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    // the decoupled alpha >= n block is the identity (log v) or v times the
    // identity (v form)
    if profile.m > profile.n {
        let extra = match form {
            FormKind::LogV => 1.0,
            FormKind::V => profile.slope(),
        };
        Ok(min_block.min(extra))
    } else {
        Ok(min_block)
    }
}

/// Admissibility constraint for a profile scan.
#[derive(Debug, Clone, Copy)]
enum Constraint {
    /// `sup_{i != j} lambda_i lambda_j <= bound`
    PairwiseSup(f64),
    /// `prod sqrt(1 + lambda_j^2) <= bound`
    SlopeMax(f64),
}

/// Scale a nonnegative ray onto the constraint boundary. Returns `None`
/// when the ray cannot reach the boundary (all zeros, or n = 1 for a
/// pairwise constraint, where the constraint is vacuous).
fn scale_to_boundary(raw: &[f64], constraint: Constraint) -> Option<Vec<f64>> {
    match constraint {
        Constraint::PairwiseSup(bound) => {
            let n = raw.len();
            if n < 2 {
                return None;
            }
            let mut sup: f64 = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    sup = sup.max(raw[i] * raw[j]);
                }
            }
            if sup <= 0.0 {
                return None;
            }
            let s = (bound / sup).sqrt();
            Some(raw.iter().map(|&x| x * s).collect())
        }
        Constraint::SlopeMax(bound) => {
            if raw.iter().all(|&x| x <= 0.0) || bound <= 1.0 {
                return None;
            }
            let slope = |t: f64| -> f64 {
                raw.iter()
                    .map(|&x| (1.0 + t * t * x * x).sqrt())
                    .product::<f64>()
            };
            let mut hi = 1.0;
            while slope(hi) < bound {
                hi *= 2.0;
                if hi > 1e12 {
                    return None;
                }
            }
            let mut lo = 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if slope(mid) < bound {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let t = 0.5 * (lo + hi);
            Some(raw.iter().map(|&x| x * t).collect())
        }
    }
}

/// Deterministic boundary-saturating profiles for a constraint; infima of
/// these forms typically sit on the constraint boundary, so these anchor
/// the scan independently of the random draws.
fn deterministic_profiles(n: usize, constraint: Constraint) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; n]];
    match constraint {
        Constraint::PairwiseSup(bound) => {
            if n >= 2 {
                // all pairs saturated
                out.push(vec![bound.sqrt(); n]);
                // skewed pairs (L, bound / L, 0, ...)
                for &l in &[1.0, 2.0, 5.0, 10.0, 100.0] {
                    let mut p = vec![0.0; n];
                    p[0] = l;
                    p[1] = bound / l;
                    out.push(p);
                }
            } else {
                // vacuous constraint; probe a few magnitudes anyway
                for &l in &[0.5, 1.0, 10.0] {
                    out.push(vec![l]);
                }
            }
        }
        Constraint::SlopeMax(bound) => {
            if bound > 1.0 {
                // all-equal boundary profile
                let t = (bound.powf(2.0 / n as f64) - 1.0).max(0.0).sqrt();
                out.push(vec![t; n]);
                // single-direction boundary profile
                let t1 = (bound * bound - 1.0).sqrt();
                let mut p = vec![0.0; n];
                p[0] = t1;
                out.push(p);
                if n >= 2 {
                    // two-direction boundary profile
                    let t2 = (bound - 1.0).max(0.0).sqrt();
                    let mut p = vec![0.0; n];
                    p[0] = t2;
                    p[1] = t2;
                    out.push(p);
                }
            }
        }
    }
    out
}

fn scan(
    constraint: Constraint,
    threshold: f64,
    claimed_bound: f64,
    form: FormKind,
    trials: usize,
    dims: &[(usize, usize)],
    seed: u64,
) -> Result<BoundReport> {
    let mut min_rayleigh = f64::INFINITY;
    let mut worst: Option<LambdaProfile> = None;
    let mut samples = 0usize;

    for &(n, m) in dims {
        // a graph R^n -> R^m has at most min(n, m) nonzero lambdas; for
        // m < n the form is evaluated in the embedding codimension
        // max(n, m), which lower-bounds the restricted minimum
        let active = n.min(m);
        let m_eff = n.max(m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((n as u64) << 32) ^ (m as u64));
        let mut candidates: Vec<Vec<f64>> = deterministic_profiles(active, constraint);
        let mut drawn = 0usize;
        while drawn < trials {
            let raw: Vec<f64> = (0..active).map(|_| rng.gen_range(0.0..1.0)).collect();
            drawn += 1;
            if let Some(p) = scale_to_boundary(&raw, constraint) {
                candidates.push(p);
            }
        }
        for mut lambdas in candidates {
            lambdas.resize(n, 0.0);
            let profile = LambdaProfile::new(lambdas, m_eff)?;
            let value = rayleigh_min(&profile, form)?;
            samples += 1;
            if value < min_rayleigh {
                min_rayleigh = value;
                worst = Some(profile);
            }
        }
    }

    let worst_profile = worst.expect("scan produced no samples");
    Ok(BoundReport {
        threshold,
        samples,
        min_rayleigh,
        claimed_bound,
        margin: min_rayleigh - claimed_bound,
        worst_profile,
    })
}

/// Certify the lower bound `(1 - lambda0) |B|^2` of the log-slope Hessian
/// form over profiles with `sup_{i != j} lambda_i lambda_j <= lambda0 < 1`.
pub fn certify_bjx_bound(
    lambda0: f64,
    trials: usize,
    dims: &[(usize, usize)],
    seed: u64,
) -> Result<BoundReport> {
    if !(0.0..1.0).contains(&lambda0) {
        return Err(Error::Domain(format!(
            "lambda0 must lie in (0, 1), got {lambda0}"
        )));
    }
    scan(
        Constraint::PairwiseSup(lambda0),
        lambda0,
        1.0 - lambda0,
        FormKind::LogV,
        trials,
        dims,
        seed,
    )
}

/// Numerical estimate of `eps_0(v_0)`: the infimum of the slope-Hessian
/// Rayleigh quotient over profiles with `v(lambda) <= v_0`.
pub fn estimate_eps0(
    v0: f64,
    trials: usize,
    dims: &[(usize, usize)],
    seed: u64,
) -> Result<BoundReport> {
    if v0 < 1.0 {
        return Err(Error::Domain(format!("v0 must be >= 1, got {v0}")));
    }
    scan(
        Constraint::SlopeMax(v0),
        v0,
        0.0,
        FormKind::V,
        trials,
        dims,
        seed,
    )
}

/// Numerical estimate of `eps(Lambda)`: the infimum of the log-slope
/// Rayleigh quotient over profiles with
/// `sup_{i != j} lambda_i lambda_j <= Lambda < sqrt(2)`.
pub fn estimate_eps_t2(
    big_lambda: f64,
    trials: usize,
    dims: &[(usize, usize)],
    seed: u64,
) -> Result<BoundReport> {
    if big_lambda <= 0.0 || big_lambda >= std::f64::consts::SQRT_2 {
        return Err(Error::Domain(format!(
            "Lambda must lie in (0, sqrt(2)), got {big_lambda}"
        )));
    }
    scan(
        Constraint::PairwiseSup(big_lambda),
        big_lambda,
        0.0,
        FormKind::LogV,
        trials,
        dims,
        seed,
    )
}

/// Random shape tensor with independent standard-normal components; test
/// helper shared with the acceptance suite.
pub fn random_shape_tensor(n: usize, m: usize, rng: &mut impl Rng) -> ShapeTensor {
    use rand_distr::StandardNormal;
    ShapeTensor::from_components(n, m, |_, _, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random profile with entries uniform in [0, cap]; test helper.
pub fn random_profile(n: usize, m: usize, cap: f64, rng: &mut impl Rng) -> LambdaProfile {
    let lambdas: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..cap)).collect();
    LambdaProfile::new(lambdas, m).unwrap()
}
