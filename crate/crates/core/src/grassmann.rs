//! Oriented planes in Euclidean space and the Grassmannian structures built
//! on them: the w-pairing, Jordan angles, the slope function `v` and the
//! convexity-region membership tests.
//!
//! A plane is stored as an orthonormal basis matrix; the pairing of two
//! planes is `w(P, Q) = det(P^T Q)` and the Jordan angles come from the
//! singular values of the same product. No Pluecker coordinates are ever
//! formed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Saturation cap for `lambda = tan(theta)` as `theta` approaches pi/2.
pub const LAMBDA_CAP: f64 = 1e12;

const ORTHO_TOL: f64 = 1e-10;

/// An oriented n-dimensional subspace of (m+n)-space, held as an
/// orthonormal basis matrix of shape (m+n) x n.
#[derive(Debug, Clone)]
pub struct Plane {
    basis: DMatrix<f64>,
    n: usize,
    m: usize,
}

impl Plane {
    /// Build a plane from a matrix that is already orthonormal.
    ///
    /// Checks `basis^T basis = I` to 1e-12 and the standing assumption
    /// `m >= n`.
    pub fn from_orthonormal(basis: DMatrix<f64>) -> Result<Self> {
        let ambient = basis.nrows();
        let n = basis.ncols();
        if ambient < 2 * n {
            return Err(Error::Domain(format!(
                "codimension must satisfy m >= n: ambient {ambient}, tangent {n}"
            )));
        }
        let gram = basis.transpose() * &basis;
        let dev = (&gram - DMatrix::identity(n, n)).amax();
        if dev > ORTHO_TOL {
            return Err(Error::Domain(format!(
                "basis not orthonormal: Gram deviation {dev:.3e}"
            )));
        }
        Ok(Plane {
            m: ambient - n,
            basis,
            n,
        })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn tangent_dim(&self) -> usize {
        self.n
    }

    pub fn codim(&self) -> usize {
        self.m
    }

    pub fn ambient_dim(&self) -> usize {
        self.n + self.m
    }

    /// The reference plane spanned by the first n coordinate directions.
    pub fn reference(n: usize, m: usize) -> Self {
        let mut basis = DMatrix::zeros(m + n, n);
        for i in 0..n {
            basis[(i, i)] = 1.0;
        }
        Plane { basis, n, m }
    }

    /// The plane of the graph of a linear map with Jacobian `du` (m x n),
    /// i.e. the column span of `[I_n; du]`.
    pub fn from_graph_jacobian(du: &DMatrix<f64>) -> Result<Self> {
        let m = du.nrows();
        let n = du.ncols();
        let mut raw = DMatrix::zeros(m + n, n);
        for i in 0..n {
            raw[(i, i)] = 1.0;
        }
        for a in 0..m {
            for i in 0..n {
                raw[(n + a, i)] = du[(a, i)];
            }
        }
        orthonormalize(&raw)
    }

    fn check_compatible(&self, other: &Plane) -> Result<()> {
        if self.n != other.n || self.m != other.m {
            return Err(Error::DimensionMismatch {
                expected_ambient: self.ambient_dim(),
                expected_tangent: self.n,
                got_ambient: other.ambient_dim(),
                got_tangent: other.n,
            });
        }
        Ok(())
    }
}

/// The mu/theta/lambda triple of principal-angle data between two planes,
/// sorted by descending mu (ascending theta), padded to length n.
#[derive(Debug, Clone)]
pub struct JordanSpectrum {
    pub mus: Vec<f64>,
    pub thetas: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// True where theta is numerically pi/2 and lambda saturated to the cap.
    pub saturated: Vec<bool>,
}

impl JordanSpectrum {
    fn from_mus(mut mus: Vec<f64>) -> Self {
        // descending mu; nalgebra returns singular values descending already,
        // but keep the sort as a contract.
        mus.sort_by(|a, b| b.partial_cmp(a).unwrap());
        // snap near-unit values: arccos turns O(1e-16) SVD noise into
        // O(1e-8) spurious angles, breaking identity-of-indiscernibles
        for mu in mus.iter_mut() {
            if 1.0 - *mu < 5e-14 {
                *mu = 1.0;
            }
        }
        let thetas: Vec<f64> = mus.iter().map(|&mu| mu.acos()).collect();
        let mut lambdas = Vec::with_capacity(mus.len());
        let mut saturated = Vec::with_capacity(mus.len());
        for (&mu, &theta) in mus.iter().zip(&thetas) {
            if mu <= 1.0 / LAMBDA_CAP {
                lambdas.push(LAMBDA_CAP);
                saturated.push(true);
            } else {
                lambdas.push(theta.tan());
                saturated.push(false);
            }
        }
        JordanSpectrum {
            mus,
            thetas,
            lambdas,
            saturated,
        }
    }

    /// sqrt(sum theta_i^2).
    pub fn distance(&self) -> f64 {
        self.thetas.iter().map(|t| t * t).sum::<f64>().sqrt()
    }

    /// prod sec(theta_i) = prod 1/mu_i; +inf when some angle is pi/2.
    pub fn slope(&self) -> f64 {
        if self.saturated.iter().any(|&s| s) {
            return f64::INFINITY;
        }
        self.mus.iter().map(|&mu| 1.0 / mu).product()
    }

    /// Largest pairwise product lambda_i * lambda_j over i != j.
    /// Zero when fewer than two angles exist.
    pub fn sup_pairwise_lambda(&self) -> f64 {
        let l = &self.lambdas;
        if l.len() < 2 {
            return 0.0;
        }
        // lambdas sorted ascending with mu descending, so the two largest
        // are the last two.
        l[l.len() - 1] * l[l.len() - 2]
    }
}

/// Which membership test a [`RegionSpec`] encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    /// w(P, P0) > 0.
    U,
    /// v(P, P0) < 2.
    U2,
    /// lambda_i lambda_j < 1 for every i != j.
    Bjx,
    /// sup_{i != j} lambda_i lambda_j <= lambda0.
    BjxLambda0,
    /// sup_{i != j} lambda_i lambda_j <= Lambda.
    T2Lambda,
}

/// A convexity-region membership query.
#[derive(Debug, Clone, Copy)]
pub struct RegionSpec {
    pub kind: RegionKind,
    pub lambda0: f64,
    pub big_lambda: f64,
}

impl RegionSpec {
    pub fn u() -> Self {
        RegionSpec {
            kind: RegionKind::U,
            lambda0: 0.0,
            big_lambda: 0.0,
        }
    }

    pub fn u2() -> Self {
        RegionSpec {
            kind: RegionKind::U2,
            lambda0: 0.0,
            big_lambda: 0.0,
        }
    }

    pub fn bjx() -> Self {
        RegionSpec {
            kind: RegionKind::Bjx,
            lambda0: 0.0,
            big_lambda: 0.0,
        }
    }

    pub fn bjx_lambda0(lambda0: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda0) {
            return Err(Error::Domain(format!(
                "lambda0 must lie in (0, 1), got {lambda0}"
            )));
        }
        Ok(RegionSpec {
            kind: RegionKind::BjxLambda0,
            lambda0,
            big_lambda: 0.0,
        })
    }

    pub fn t2_lambda(big_lambda: f64) -> Result<Self> {
        if big_lambda <= 0.0 || big_lambda > std::f64::consts::SQRT_2 {
            return Err(Error::Domain(format!(
                "Lambda must lie in (0, sqrt(2)], got {big_lambda}"
            )));
        }
        Ok(RegionSpec {
            kind: RegionKind::T2Lambda,
            lambda0: 0.0,
            big_lambda,
        })
    }
}

/// Two-pass modified Gram-Schmidt; preserves the orientation of the
/// ordered column set.
fn gram_schmidt(raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = raw.ncols();
    let mut q = raw.clone();
    for j in 0..n {
        for _ in 0..2 {
            for k in 0..j {
                let proj = q.column(k).dot(&q.column(j));
                let col_k = q.column(k).clone_owned();
                let mut col_j = q.column_mut(j);
                col_j.axpy(-proj, &col_k, 1.0);
            }
        }
        let norm = q.column(j).norm();
        let col_norm = raw.column(j).norm();
        if norm <= 1e-12 * col_norm.max(1.0) {
            return Err(Error::DegeneratePlane { column: j });
        }
        q.column_mut(j).scale_mut(1.0 / norm);
    }
    Ok(q)
}

/// Orthonormalize the columns of `raw`, preserving orientation.
pub fn orthonormalize(raw: &DMatrix<f64>) -> Result<Plane> {
    Plane::from_orthonormal(gram_schmidt(raw)?)
}

/// The pairing `w(P, Q) = det(P^T Q)` restricted to the Euclidean inner
/// product of the two n-vectors; lies in [-1, 1] up to rounding.
pub fn w_pairing(p: &Plane, q: &Plane) -> Result<f64> {
    p.check_compatible(q)?;
    let w = p.basis.transpose() * &q.basis;
    Ok(w.determinant())
}

/// Jordan angles between two planes from the singular values of `P^T Q`,
/// clamped to [0, 1].
pub fn jordan_spectrum(p: &Plane, q: &Plane) -> Result<JordanSpectrum> {
    p.check_compatible(q)?;
    let w = p.basis.transpose() * &q.basis;
    let svd = w.svd(false, false);
    let mus: Vec<f64> = svd
        .singular_values
        .iter()
        .map(|&s| s.clamp(0.0, 1.0))
        .collect();
    Ok(JordanSpectrum::from_mus(mus))
}

/// Grassmannian distance `d(P, Q) = sqrt(sum theta_i^2)`.
pub fn distance(p: &Plane, q: &Plane) -> Result<f64> {
    Ok(jordan_spectrum(p, q)?.distance())
}

/// The slope function `v(P, P0) = prod sec(theta_alpha)`; `+inf` when some
/// Jordan angle reaches pi/2.
pub fn slope_v(p: &Plane, p0: &Plane) -> Result<f64> {
    Ok(jordan_spectrum(p, p0)?.slope())
}

/// Membership of `P` (relative to `P0`) in one of the regions of the
/// Grassmannian. All regions live inside the chart `w > 0`; an infinite
/// lambda therefore yields `false` rather than an error.
pub fn region_test(p: &Plane, p0: &Plane, spec: &RegionSpec) -> Result<bool> {
    let w = w_pairing(p, p0)?;
    if w <= 0.0 {
        return Ok(false);
    }
    if spec.kind == RegionKind::U {
        return Ok(true);
    }
    let spectrum = jordan_spectrum(p, p0)?;
    Ok(match spec.kind {
        RegionKind::U => unreachable!(),
        RegionKind::U2 => spectrum.slope() < 2.0,
        RegionKind::Bjx => spectrum.sup_pairwise_lambda() < 1.0,
        RegionKind::BjxLambda0 => spectrum.sup_pairwise_lambda() <= spec.lambda0,
        RegionKind::T2Lambda => spectrum.sup_pairwise_lambda() <= spec.big_lambda,
    })
}

/// Construct a plane with prescribed Jordan angles to `p0`.
///
/// Each angle must lie in [0, pi/2). The seed picks the normal directions
/// along which the plane tilts, so different seeds give different planes
/// with identical spectra.
pub fn plane_with_angles(p0: &Plane, thetas: &[f64], seed: u64) -> Result<Plane> {
    let n = p0.n;
    let m = p0.m;
    if thetas.len() > n {
        return Err(Error::Domain(format!(
            "at most {n} angles allowed, got {}",
            thetas.len()
        )));
    }
    for &t in thetas {
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&t) {
            return Err(Error::Domain(format!(
                "angle {t} outside [0, pi/2)"
            )));
        }
    }
    let normal = normal_complement(p0);
    // random orthonormal set of n directions in the normal space
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let nu_coeff = gram_schmidt(&gauss)?;
    let nu = &normal * nu_coeff;

    let mut basis = DMatrix::zeros(p0.ambient_dim(), n);
    for i in 0..n {
        let theta = thetas.get(i).copied().unwrap_or(0.0);
        let col = p0.basis.column(i) * theta.cos() + nu.column(i) * theta.sin();
        basis.set_column(i, &col);
    }
    Plane::from_orthonormal(basis)
}

/// Orthonormal basis of the normal space of `p0`, (m+n) x m, obtained by
/// Gram-Schmidt of the ambient coordinate directions against the basis.
fn normal_complement(p0: &Plane) -> DMatrix<f64> {
    let dim = p0.ambient_dim();
    let m = p0.m;
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(m);
    for k in 0..dim {
        if cols.len() == m {
            break;
        }
        let mut v = DVector::zeros(dim);
        v[k] = 1.0;
        for _ in 0..2 {
            for j in 0..p0.n {
                let proj = p0.basis.column(j).dot(&v);
                v.axpy(-proj, &p0.basis.column(j).clone_owned(), 1.0);
            }
            for c in cols.iter() {
                let proj = c.dot(&v);
                v.axpy(-proj, c, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            cols.push(v / norm);
        }
    }
    debug_assert_eq!(cols.len(), m);
    DMatrix::from_columns(&cols)
}

/// Sample a uniformly random plane (Haar on the Stiefel manifold, projected).
pub fn random_plane(n: usize, m: usize, rng: &mut impl Rng) -> Plane {
    loop {
        let gauss = DMatrix::from_fn(m + n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        if let Ok(p) = orthonormalize(&gauss) {
            return p;
        }
    }
}
