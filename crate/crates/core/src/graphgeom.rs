//! Discrete differential geometry of graph submanifolds `F(x) = (x, u(x))`
//! on a regular grid: Jacobian stencils, Gauss map, induced metric,
//! second fundamental form in an adapted frame, mean curvature.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grassmann::Plane;

/// Boundary treatment of a [`GraphPatch`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Values wrap around; every node is interior.
    Periodic,
    /// Ghost nodes are extrapolated affinely from the boundary layer.
    FixedAffine,
}

/// A discretized graph map `u: Omega in R^n -> R^m` on an axis-aligned box.
///
/// Node data is stored row-major over the axes with the `m` components of
/// `u` contiguous per node. Under a periodic boundary the node at `hi` is
/// identified with the node at `lo` and not stored.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GraphPatch {
    n: usize,
    m: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    grid: Vec<usize>,
    spacing: Vec<f64>,
    values: Vec<f64>,
    boundary: Boundary,
}

impl GraphPatch {
    /// Build a patch by sampling `u` at the grid nodes.
    ///
    /// `u(x, out)` fills the `m` components at domain point `x`.
    pub fn from_fn(
        n: usize,
        m: usize,
        lo: &[f64],
        hi: &[f64],
        grid: &[usize],
        boundary: Boundary,
        mut u: impl FnMut(&[f64], &mut [f64]),
    ) -> Result<Self> {
        if lo.len() != n || hi.len() != n || grid.len() != n {
            return Err(Error::Domain(
                "domain and grid must have one entry per axis".into(),
            ));
        }
        for k in 0..n {
            if grid[k] < 5 {
                return Err(Error::Domain(format!(
                    "grid count on axis {k} must be >= 5, got {}",
                    grid[k]
                )));
            }
            if hi[k] <= lo[k] {
                return Err(Error::Domain(format!("empty domain on axis {k}")));
            }
        }
        let spacing: Vec<f64> = (0..n)
            .map(|k| match boundary {
                Boundary::Periodic => (hi[k] - lo[k]) / grid[k] as f64,
                Boundary::FixedAffine => (hi[k] - lo[k]) / (grid[k] - 1) as f64,
            })
            .collect();
        let count: usize = grid.iter().product();
        let mut values = vec![0.0; count * m];
        let mut x = vec![0.0; n];
        let mut idx = vec![0usize; n];
        for node in 0..count {
            decode(node, grid, &mut idx);
            for k in 0..n {
                x[k] = lo[k] + idx[k] as f64 * spacing[k];
            }
            u(&x, &mut values[node * m..(node + 1) * m]);
        }
        Ok(GraphPatch {
            n,
            m,
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            grid: grid.to_vec(),
            spacing: spacing.clone(),
            values,
            boundary,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn grid(&self) -> &[usize] {
        &self.grid
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Error unless `other` discretizes the same domain with the same grid
    /// and codomain dimension.
    pub fn check_same_grid(&self, other: &GraphPatch) -> Result<()> {
        if self.n != other.n
            || self.m != other.m
            || self.grid != other.grid
            || self.lo != other.lo
            || self.hi != other.hi
            || self.boundary != other.boundary
        {
            return Err(Error::DimensionMismatch {
                expected_ambient: self.n + self.m,
                expected_tangent: self.n,
                got_ambient: other.n + other.m,
                got_tangent: other.n,
            });
        }
        Ok(())
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn node_count(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Domain coordinates of a node.
    pub fn coords(&self, node: &[usize]) -> Vec<f64> {
        (0..self.n)
            .map(|k| self.lo[k] + node[k] as f64 * self.spacing[k])
            .collect()
    }

    /// Ambient position `F(x) = (x, u(x))` of a node.
    pub fn position(&self, node: &[usize]) -> DVector<f64> {
        let x = self.coords(node);
        let mut f = DVector::zeros(self.n + self.m);
        for k in 0..self.n {
            f[k] = x[k];
        }
        let base = self.flat(node) * self.m;
        for a in 0..self.m {
            f[self.n + a] = self.values[base + a];
        }
        f
    }

    pub fn value(&self, node: &[usize], component: usize) -> f64 {
        self.values[self.flat(node) * self.m + component]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn flat(&self, node: &[usize]) -> usize {
        let mut acc = 0;
        for k in 0..self.n {
            debug_assert!(node[k] < self.grid[k]);
            acc = acc * self.grid[k] + node[k];
        }
        acc
    }

    pub fn decode(&self, flat: usize, node: &mut [usize]) {
        decode(flat, &self.grid, node);
    }

    /// Value at a possibly out-of-range multi-index: wraps under a periodic
    /// boundary, extrapolates affinely from the outermost two layers under
    /// a fixed-affine boundary.
    pub fn value_at(&self, node: &[isize], component: usize) -> f64 {
        match self.boundary {
            Boundary::Periodic => {
                let mut wrapped = vec![0usize; self.n];
                for k in 0..self.n {
                    let g = self.grid[k] as isize;
                    wrapped[k] = node[k].rem_euclid(g) as usize;
                }
                self.value(&wrapped, component)
            }
            Boundary::FixedAffine => {
                // affine extension applied axis by axis; recursion handles
                // corner ghosts where several axes leave the grid
                for k in 0..self.n {
                    let g = self.grid[k] as isize;
                    if node[k] < 0 {
                        let mut edge = node.to_vec();
                        let mut inner = node.to_vec();
                        edge[k] = 0;
                        inner[k] = 1;
                        let e = -node[k] as f64;
                        let ve = self.value_at(&edge, component);
                        let vi = self.value_at(&inner, component);
                        return ve + e * (ve - vi);
                    } else if node[k] >= g {
                        let mut edge = node.to_vec();
                        let mut inner = node.to_vec();
                        edge[k] = g - 1;
                        inner[k] = g - 2;
                        let e = (node[k] - g + 1) as f64;
                        let ve = self.value_at(&edge, component);
                        let vi = self.value_at(&inner, component);
                        return ve + e * (ve - vi);
                    }
                }
                let idx: Vec<usize> = node.iter().map(|&v| v as usize).collect();
                self.value(&idx, component)
            }
        }
    }

    /// True when every stencil of half-width `width` around `node` stays on
    /// the grid (always true under a periodic boundary).
    pub fn is_interior(&self, node: &[usize], width: usize) -> bool {
        match self.boundary {
            Boundary::Periodic => true,
            Boundary::FixedAffine => (0..self.n)
                .all(|k| node[k] >= width && node[k] + width < self.grid[k]),
        }
    }

    /// Iterate all nodes in lexicographic order.
    pub fn nodes(&self) -> NodeIter {
        NodeIter {
            grid: self.grid.clone(),
            next: Some(vec![0; self.n]),
        }
    }

    /// Nodes with full stencils of half-width `width`.
    pub fn interior_nodes(&self, width: usize) -> Vec<Vec<usize>> {
        self.nodes()
            .filter(|nd| self.is_interior(nd, width))
            .collect()
    }
}

fn decode(mut flat: usize, grid: &[usize], node: &mut [usize]) {
    for k in (0..grid.len()).rev() {
        node[k] = flat % grid[k];
        flat /= grid[k];
    }
}

pub struct NodeIter {
    grid: Vec<usize>,
    next: Option<Vec<usize>>,
}

impl Iterator for NodeIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.next.take()?;
        let mut bump = current.clone();
        for k in (0..self.grid.len()).rev() {
            bump[k] += 1;
            if bump[k] < self.grid[k] {
                self.next = Some(bump);
                return Some(current);
            }
            bump[k] = 0;
        }
        Some(current)
    }
}

/// The adapted tangent/normal frames at a node, aligned with the singular
/// directions of `Du` so that the Jordan angle `lambda_i` pairs with frame
/// index `i`.
#[derive(Debug, Clone)]
pub struct AdaptedFrame {
    /// (m+n) x n, orthonormal tangents.
    pub tangent: DMatrix<f64>,
    /// (m+n) x m, orthonormal normals; the first n pair with the lambdas.
    pub normal: DMatrix<f64>,
    /// Singular values of `Du`, descending.
    pub lambdas: Vec<f64>,
}

/// Second-fundamental-form components `h_{alpha,ij}` in an adapted frame,
/// stored once per unordered pair (i <= j).
#[derive(Debug, Clone)]
pub struct ShapeTensor {
    n: usize,
    m: usize,
    h: Vec<f64>,
    frame: Option<AdaptedFrame>,
}

impl ShapeTensor {
    pub fn from_components(n: usize, m: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let pairs = n * (n + 1) / 2;
        let mut h = vec![0.0; m * pairs];
        for alpha in 0..m {
            let mut slot = 0;
            for i in 0..n {
                for j in i..n {
                    h[alpha * pairs + slot] = f(alpha, i, j);
                    slot += 1;
                }
            }
        }
        ShapeTensor { n, m, h, frame: None }
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        ShapeTensor::from_components(n, m, |_, _, _| 0.0)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn frame(&self) -> Option<&AdaptedFrame> {
        self.frame.as_ref()
    }

    /// Reinterpret the tensor in a larger codimension by appending zero
    /// components for the extra normal directions (embedding the graph in
    /// a bigger ambient space with trailing zero components).
    pub fn pad_normals(&self, m_new: usize) -> ShapeTensor {
        assert!(m_new >= self.m);
        let old_m = self.m;
        ShapeTensor::from_components(self.n, m_new, |alpha, i, j| {
            if alpha < old_m {
                self.get(alpha, i, j)
            } else {
                0.0
            }
        })
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        // offset of row i in the packed upper triangle
        i * self.n - i * (i + 1) / 2 + j
    }

    /// `h_{alpha,ij}` (symmetric in i, j).
    #[inline]
    pub fn get(&self, alpha: usize, i: usize, j: usize) -> f64 {
        let pairs = self.n * (self.n + 1) / 2;
        self.h[alpha * pairs + self.slot(i, j)]
    }

    /// `|B|^2 = sum h_{alpha,ij}^2` over all (alpha, i, j) with i, j free.
    pub fn norm_sq(&self) -> f64 {
        let mut acc = 0.0;
        for alpha in 0..self.m {
            for i in 0..self.n {
                for j in 0..self.n {
                    let x = self.get(alpha, i, j);
                    acc += x * x;
                }
            }
        }
        acc
    }
}

/// Order of a finite-difference stencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffOrder {
    Second,
    Fourth,
}

fn stencil_width(order: DiffOrder) -> usize {
    match order {
        DiffOrder::Second => 1,
        DiffOrder::Fourth => 2,
    }
}

/// Central-difference Jacobian `Du` (m x n) at a node; 2nd order.
pub fn jacobian(patch: &GraphPatch, node: &[usize]) -> Result<DMatrix<f64>> {
    jacobian_with_order(patch, node, DiffOrder::Second)
}

/// Central-difference Jacobian at a selectable order.
pub fn jacobian_with_order(
    patch: &GraphPatch,
    node: &[usize],
    order: DiffOrder,
) -> Result<DMatrix<f64>> {
    let width = stencil_width(order);
    if !patch.is_interior(node, width) {
        let axis = (0..patch.n())
            .find(|&k| node[k] < width || node[k] + width >= patch.grid()[k])
            .unwrap_or(0);
        return Err(Error::Stencil {
            node: node.to_vec(),
            axis,
        });
    }
    let n = patch.n();
    let m = patch.m();
    let mut du = DMatrix::zeros(m, n);
    let base: Vec<isize> = node.iter().map(|&v| v as isize).collect();
    for k in 0..n {
        let h = patch.spacing()[k];
        for a in 0..m {
            let shifted = |offset: isize| {
                let mut idx = base.clone();
                idx[k] += offset;
                patch.value_at(&idx, a)
            };
            du[(a, k)] = match order {
                DiffOrder::Second => (shifted(1) - shifted(-1)) / (2.0 * h),
                DiffOrder::Fourth => {
                    (-shifted(2) + 8.0 * shifted(1) - 8.0 * shifted(-1) + shifted(-2))
                        / (12.0 * h)
                }
            };
        }
    }
    Ok(du)
}

/// Second derivatives `d^2 u^a / dx_i dx_j` at a node, 2nd-order central
/// stencils, mixed terms by the 4-point cross stencil. Returns one n x n
/// matrix per component.
pub fn second_derivatives(patch: &GraphPatch, node: &[usize]) -> Result<Vec<DMatrix<f64>>> {
    if !patch.is_interior(node, 1) {
        return Err(Error::Stencil {
            node: node.to_vec(),
            axis: 0,
        });
    }
    let n = patch.n();
    let m = patch.m();
    let base: Vec<isize> = node.iter().map(|&v| v as isize).collect();
    let mut out = Vec::with_capacity(m);
    for a in 0..m {
        let mut dd = DMatrix::zeros(n, n);
        let at = |offs: &[(usize, isize)]| {
            let mut idx = base.clone();
            for &(k, o) in offs {
                idx[k] += o;
            }
            patch.value_at(&idx, a)
        };
        for i in 0..n {
            let h = patch.spacing()[i];
            dd[(i, i)] = (at(&[(i, 1)]) - 2.0 * at(&[]) + at(&[(i, -1)])) / (h * h);
            for j in (i + 1)..n {
                let hj = patch.spacing()[j];
                let mixed = (at(&[(i, 1), (j, 1)]) - at(&[(i, 1), (j, -1)])
                    - at(&[(i, -1), (j, 1)])
                    + at(&[(i, -1), (j, -1)]))
                    / (4.0 * h * hj);
                dd[(i, j)] = mixed;
                dd[(j, i)] = mixed;
            }
        }
        out.push(dd);
    }
    Ok(out)
}

/// Induced metric `g = I + Du^T Du` of the graph.
pub fn induced_metric(du: &DMatrix<f64>) -> DMatrix<f64> {
    let n = du.ncols();
    DMatrix::identity(n, n) + du.transpose() * du
}

/// The Gauss map at a node: the plane spanned by the columns of `[I; Du]`.
pub fn gauss_plane(patch: &GraphPatch, node: &[usize]) -> Result<Plane> {
    let du = jacobian(patch, node)?;
    Plane::from_graph_jacobian(&du)
}

/// Adapted frame from the singular decomposition of `Du`; deterministic
/// up to column signs, which are fixed by making the largest-magnitude
/// entry of each right-singular vector positive.
///
/// The right factor comes from the symmetric eigendecomposition of the
/// Gram matrix `Du^T Du` and the left factor is rebuilt as
/// `u_i = Du v_i / sigma_i`, so the tangent columns lie in the tangent
/// space exactly (up to roundoff in `Du v_i` itself) even when `Du` is
/// nearly rank-deficient, where general-purpose SVD left factors can
/// lose several digits.
pub fn adapted_frame(du: &DMatrix<f64>) -> AdaptedFrame {
    let m = du.nrows();
    let n = du.ncols();
    let k = m.min(n); // at most this many nonzero singular values

    let gram = du.transpose() * du; // n x n symmetric PSD
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    // full orthonormal right factor, descending sigma, sign-fixed
    let mut v_full = DMatrix::zeros(n, n);
    let mut sigma = vec![0.0; n];
    for (i, &src) in order.iter().enumerate() {
        sigma[i] = eig.eigenvalues[src].max(0.0).sqrt();
        let mut best = 0;
        let mut mag = 0.0;
        for r in 0..n {
            let a = eig.eigenvectors[(r, src)].abs();
            if a > mag {
                mag = a;
                best = r;
            }
        }
        let flip = if eig.eigenvectors[(best, src)] < 0.0 {
            -1.0
        } else {
            1.0
        };
        for r in 0..n {
            v_full[(r, i)] = flip * eig.eigenvectors[(r, src)];
        }
    }

    // left factor: u_i = Du v_i / sigma_i where sigma_i is significant,
    // completed deterministically on the (near-)kernel. The floor sits at
    // sqrt(machine epsilon) relative because the Gram route cannot
    // resolve singular values below that; such directions are treated as
    // exact kernel, which perturbs the frame by at most the floor itself.
    let sig_floor = 1e-8 * (1.0 + sigma[0]);
    let mut u_full = DMatrix::zeros(m, m);
    let mut filled = 0;
    for i in 0..k {
        let mut w = (du * v_full.column(i)).clone_owned();
        if w.norm() <= sig_floor {
            break;
        }
        // insurance Gram-Schmidt against earlier columns
        for _ in 0..2 {
            for c in 0..filled {
                let proj: f64 = (0..m).map(|r| u_full[(r, c)] * w[r]).sum();
                for r in 0..m {
                    w[r] -= proj * u_full[(r, c)];
                }
            }
        }
        sigma[i] = w.norm();
        for r in 0..m {
            u_full[(r, filled)] = w[r] / sigma[i];
        }
        filled += 1;
    }
    for i in filled..n.min(k) {
        sigma[i] = 0.0;
    }
    complete_orthonormal(&mut u_full, filled);

    let dim = m + n;
    let mut tangent = DMatrix::zeros(dim, n);
    let mut normal = DMatrix::zeros(dim, m);
    let mut lambdas = vec![0.0; n];
    for i in 0..n {
        let s = if i < k { sigma[i] } else { 0.0 };
        lambdas[i] = s;
        let scale = 1.0 / (1.0 + s * s).sqrt();
        for r in 0..n {
            tangent[(r, i)] = v_full[(r, i)] * scale;
        }
        // graph part Du v_i, expressed through sigma_i u_i; for sigma
        // below the floor the column is treated as exactly horizontal
        if i < m && s > 0.0 {
            for r in 0..m {
                tangent[(n + r, i)] = s * u_full[(r, i)] * scale;
            }
        }
    }
    for alpha in 0..m {
        let s = if alpha < k { sigma[alpha] } else { 0.0 };
        let scale = 1.0 / (1.0 + s * s).sqrt();
        if alpha < n {
            for r in 0..n {
                normal[(r, alpha)] = -s * v_full[(r, alpha)] * scale;
            }
        }
        for r in 0..m {
            normal[(n + r, alpha)] = u_full[(r, alpha)] * scale;
        }
    }
    AdaptedFrame {
        tangent,
        normal,
        lambdas,
    }
}

/// Extend the first `have` orthonormal columns of `mat` to a full
/// orthonormal basis, deterministically, by orthogonalizing coordinate
/// vectors.
fn complete_orthonormal(mat: &mut DMatrix<f64>, have: usize) {
    let d = mat.nrows();
    let mut filled = have;
    for cand in 0..d {
        if filled == mat.ncols() {
            break;
        }
        let mut v = DVector::zeros(d);
        v[cand] = 1.0;
        for _ in 0..2 {
            for c in 0..filled {
                let proj: f64 = (0..d).map(|r| mat[(r, c)] * v[r]).sum();
                for r in 0..d {
                    v[r] -= proj * mat[(r, c)];
                }
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            for r in 0..d {
                mat[(r, filled)] = v[r] / norm;
            }
            filled += 1;
        }
    }
    debug_assert_eq!(filled, mat.ncols());
}

/// Second fundamental form at a node, in the adapted frame.
pub fn shape_tensor(patch: &GraphPatch, node: &[usize]) -> Result<ShapeTensor> {
    let du = jacobian(patch, node)?;
    let dd = second_derivatives(patch, node)?;
    let frame = adapted_frame(&du);
    let n = patch.n();
    let m = patch.m();

    // domain parts of the orthonormal tangent frame: v_i / sqrt(1 + s_i^2)
    let domain_dirs = frame.tangent.rows(0, n).clone_owned(); // n x n

    // hess[(a)] contracted with domain directions: H_a(i,j) =
    // sum_{kl} dd^a_{kl} (e_i)_k (e_j)_l
    let mut st = ShapeTensor::from_components(n, m, |_, _, _| 0.0);
    let pairs = n * (n + 1) / 2;
    for alpha in 0..m {
        // ambient normal vector nu_alpha; only its graph components pair
        // with d^2 F = (0, d^2 u)
        let mut slot = 0;
        for i in 0..n {
            for j in i..n {
                let mut acc = 0.0;
                for a in 0..m {
                    let nu_comp = frame.normal[(n + a, alpha)];
                    if nu_comp == 0.0 {
                        continue;
                    }
                    let mut contracted = 0.0;
                    for k in 0..n {
                        for l in 0..n {
                            contracted += dd[a][(k, l)] * domain_dirs[(k, i)] * domain_dirs[(l, j)];
                        }
                    }
                    acc += nu_comp * contracted;
                }
                st.h[alpha * pairs + slot] = acc;
                slot += 1;
            }
        }
    }
    st.frame = Some(frame);
    Ok(st)
}

/// `|B|^2` computed in the coordinate frame by metric contraction,
/// independent of the adapted-frame path.
pub fn norm_b_sq_coordinate(patch: &GraphPatch, node: &[usize]) -> Result<f64> {
    let du = jacobian(patch, node)?;
    let dd = second_derivatives(patch, node)?;
    let n = patch.n();
    let m = patch.m();
    let g = induced_metric(&du);
    let g_inv = g
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Domain("induced metric not invertible".into()))?;

    // B_ij = (0, dd_ij)^N; with the normal projector P = I - T g^{-1} T^T
    // the ambient inner product <B_ij, B_kl> = dd_ij^T (I - Du g^{-1} Du^T) dd_kl
    // restricted to graph components (the domain components of d^2F vanish).
    let proj = DMatrix::identity(m, m) - &du * &g_inv * du.transpose();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mut inner = 0.0;
                    for a in 0..m {
                        for b in 0..m {
                            inner += dd[a][(i, j)] * proj[(a, b)] * dd[b][(k, l)];
                        }
                    }
                    acc += g_inv[(i, k)] * g_inv[(j, l)] * inner;
                }
            }
        }
    }
    Ok(acc)
}

/// Mean curvature vector `H = g^{ij} (d_ij F)^N` at a node.
pub fn mean_curvature(patch: &GraphPatch, node: &[usize]) -> Result<DVector<f64>> {
    let du = jacobian(patch, node)?;
    let dd = second_derivatives(patch, node)?;
    let n = patch.n();
    let m = patch.m();
    let g = induced_metric(&du);
    let g_inv = g
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Domain("induced metric not invertible".into()))?;

    // trace of the graph Hessian: w^a = g^{ij} d_ij u^a
    let mut w = DVector::zeros(m);
    for a in 0..m {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += g_inv[(i, j)] * dd[a][(i, j)];
            }
        }
        w[a] = acc;
    }
    // normal projection of (0, w): subtract T g^{-1} T^T (0, w) with
    // T = [I; Du], T^T (0, w) = Du^T w
    let coeff = &g_inv * (du.transpose() * &w);
    let mut h = DVector::zeros(n + m);
    for k in 0..n {
        h[k] = -coeff[k];
    }
    let graph_part = &w - du * &coeff;
    for a in 0..m {
        h[n + a] = graph_part[a];
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grassmann::{self, Plane};
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_3, FRAC_PI_4, PI};

    fn affine_patch() -> GraphPatch {
        GraphPatch::from_fn(
            2,
            2,
            &[-1.0, -1.0],
            &[1.0, 1.0],
            &[9, 9],
            Boundary::FixedAffine,
            |x, out| {
                out[0] = 0.5 + 0.3 * x[0] - 0.2 * x[1];
                out[1] = -1.0 + 0.1 * x[0] + 0.7 * x[1];
            },
        )
        .unwrap()
    }

    #[test]
    fn jacobian_exact_on_affine_data() {
        let patch = affine_patch();
        let du = jacobian(&patch, &[4, 4]).unwrap();
        assert_relative_eq!(du[(0, 0)], 0.3, epsilon = 1e-13);
        assert_relative_eq!(du[(0, 1)], -0.2, epsilon = 1e-13);
        assert_relative_eq!(du[(1, 0)], 0.1, epsilon = 1e-13);
        assert_relative_eq!(du[(1, 1)], 0.7, epsilon = 1e-13);
    }

    #[test]
    fn jacobian_boundary_node_errors_under_fixed_affine() {
        let patch = affine_patch();
        assert!(matches!(
            jacobian(&patch, &[0, 4]),
            Err(Error::Stencil { .. })
        ));
    }

    #[test]
    fn jacobian_sine_second_order() {
        // u1 = sin(x1) on a periodic grid; du at x1 = 0 is 1 + O(h^2)
        let run = |count: usize| -> f64 {
            let patch = GraphPatch::from_fn(
                1,
                1,
                &[-PI],
                &[PI],
                &[count],
                Boundary::Periodic,
                |x, out| out[0] = x[0].sin(),
            )
            .unwrap();
            // node at x = 0 is count/2
            let du = jacobian(&patch, &[count / 2]).unwrap();
            (du[(0, 0)] - 1.0).abs()
        };
        let e1 = run(32);
        let e2 = run(64);
        let ratio = e1 / e2;
        assert!((3.2..5.0).contains(&ratio), "ratio = {ratio}");
    }

    #[test]
    fn gauss_plane_of_flat_graph_is_reference() {
        let patch = GraphPatch::from_fn(
            2,
            2,
            &[-1.0, -1.0],
            &[1.0, 1.0],
            &[7, 7],
            Boundary::FixedAffine,
            |_, out| {
                out[0] = 0.0;
                out[1] = 0.0;
            },
        )
        .unwrap();
        let p = gauss_plane(&patch, &[3, 3]).unwrap();
        let p0 = Plane::reference(2, 2);
        assert!(grassmann::distance(&p, &p0).unwrap() < 1e-12);
    }

    #[test]
    fn gauss_plane_angles_of_diagonal_jacobian() {
        let patch = GraphPatch::from_fn(
            2,
            2,
            &[-1.0, -1.0],
            &[1.0, 1.0],
            &[9, 9],
            Boundary::FixedAffine,
            |x, out| {
                out[0] = x[0];
                out[1] = 3.0f64.sqrt() * x[1];
            },
        )
        .unwrap();
        let p = gauss_plane(&patch, &[4, 4]).unwrap();
        let p0 = Plane::reference(2, 2);
        let s = grassmann::jordan_spectrum(&p, &p0).unwrap();
        assert_relative_eq!(s.thetas[0], FRAC_PI_4, epsilon = 1e-10);
        assert_relative_eq!(s.thetas[1], FRAC_PI_3, epsilon = 1e-10);
    }

    #[test]
    fn slope_matches_metric_determinant() {
        let patch = GraphPatch::from_fn(
            2,
            2,
            &[-1.0, -1.0],
            &[1.0, 1.0],
            &[17, 17],
            Boundary::Periodic,
            |x, out| {
                out[0] = 0.3 * (PI * x[0]).sin() * (PI * x[1]).cos();
                out[1] = 0.2 * (PI * x[1]).sin();
            },
        )
        .unwrap();
        let p0 = Plane::reference(2, 2);
        for node in [[3usize, 5], [8, 8], [12, 2]] {
            let du = jacobian(&patch, &node).unwrap();
            let p = gauss_plane(&patch, &node).unwrap();
            let v = grassmann::slope_v(&p, &p0).unwrap();
            let det = induced_metric(&du).determinant();
            assert_relative_eq!(v, det.sqrt(), epsilon = 1e-10);
        }
    }

    #[test]
    fn induced_metric_examples() {
        let du0 = DMatrix::zeros(2, 2);
        assert_relative_eq!(induced_metric(&du0), DMatrix::identity(2, 2));
        let du1 = DMatrix::identity(2, 2);
        let g = induced_metric(&du1);
        assert_relative_eq!(g, DMatrix::identity(2, 2) * 2.0, epsilon = 1e-14);
        assert_relative_eq!(g.determinant(), 4.0, epsilon = 1e-14);
    }

    #[test]
    fn metric_eigenvalues_from_svd_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        for _ in 0..20 {
            let du = DMatrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
            let g = induced_metric(&du);
            let mut eigs: Vec<f64> = g.symmetric_eigen().eigenvalues.iter().cloned().collect();
            eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let svals = du.clone().svd(false, false).singular_values;
            for (i, &s) in svals.iter().enumerate() {
                assert_relative_eq!(eigs[i], 1.0 + s * s, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn shape_tensor_vanishes_on_affine_patch() {
        let patch = affine_patch();
        let st = shape_tensor(&patch, &[4, 4]).unwrap();
        assert!(st.norm_sq() < 1e-24);
    }

    fn circle_arc_patch(radius: f64, count: usize) -> GraphPatch {
        GraphPatch::from_fn(
            1,
            2,
            &[-0.3 * radius],
            &[0.3 * radius],
            &[count],
            Boundary::FixedAffine,
            |x, out| {
                out[0] = (radius * radius - x[0] * x[0]).sqrt() - radius;
                out[1] = 0.0;
            },
        )
        .unwrap()
    }

    #[test]
    fn circle_arc_curvature() {
        let radius = 2.0;
        let run = |count: usize| -> f64 {
            let patch = circle_arc_patch(radius, count);
            let st = shape_tensor(&patch, &[count / 2]).unwrap();
            (st.norm_sq().sqrt() - 1.0 / radius).abs()
        };
        let e1 = run(41);
        let e2 = run(81);
        assert!(e1 < 1e-3);
        let ratio = e1 / e2;
        assert!((3.0..5.5).contains(&ratio), "ratio = {ratio}");
    }

    #[test]
    fn norm_b_adapted_vs_coordinate_paths() {
        let patch = GraphPatch::from_fn(
            2,
            2,
            &[-1.0, -1.0],
            &[1.0, 1.0],
            &[33, 33],
            Boundary::Periodic,
            |x, out| {
                out[0] = 0.3 * (PI * x[0]).sin() * (PI * x[1]).cos();
                out[1] = 0.15 * (PI * x[0]).cos();
            },
        )
        .unwrap();
        for node in [[5usize, 7], [16, 16], [25, 10]] {
            let st = shape_tensor(&patch, &node).unwrap();
            let direct = norm_b_sq_coordinate(&patch, &node).unwrap();
            let adapted = st.norm_sq();
            assert_relative_eq!(adapted, direct, max_relative = 1e-8);
        }
    }

    #[test]
    fn mean_curvature_circle_arc() {
        let radius = 1.5;
        let patch = circle_arc_patch(radius, 81);
        let h = mean_curvature(&patch, &[40]).unwrap();
        assert_relative_eq!(h.norm(), 1.0 / radius, epsilon = 2e-4);
    }

    #[test]
    fn mean_curvature_zero_on_affine() {
        let patch = affine_patch();
        let h = mean_curvature(&patch, &[4, 4]).unwrap();
        assert!(h.norm() < 1e-13);
    }

    #[test]
    fn mean_curvature_is_normal() {
        let patch = GraphPatch::from_fn(
            2,
            2,
            &[-1.0, -1.0],
            &[1.0, 1.0],
            &[17, 17],
            Boundary::Periodic,
            |x, out| {
                out[0] = 0.4 * (PI * x[0]).sin();
                out[1] = 0.2 * (PI * x[1]).cos();
            },
        )
        .unwrap();
        let node = [6usize, 9];
        let du = jacobian(&patch, &node).unwrap();
        let h = mean_curvature(&patch, &node).unwrap();
        for i in 0..2 {
            // tangent t_i = (e_i, du column i)
            let mut dot = h[i];
            for a in 0..2 {
                dot += du[(a, i)] * h[2 + a];
            }
            assert!(dot.abs() <= 1e-9 * h.norm().max(1e-30), "dot = {dot}");
        }
    }

    #[test]
    fn mean_curvature_matches_shape_tensor_trace() {
        let patch = GraphPatch::from_fn(
            2,
            2,
            &[-1.0, -1.0],
            &[1.0, 1.0],
            &[33, 33],
            Boundary::Periodic,
            |x, out| {
                out[0] = 0.3 * (PI * x[0]).sin() * (PI * x[1]).cos();
                out[1] = 0.25 * (PI * x[1]).sin();
            },
        )
        .unwrap();
        let node = [10usize, 21];
        let st = shape_tensor(&patch, &node).unwrap();
        let frame = st.frame().unwrap();
        let h = mean_curvature(&patch, &node).unwrap();
        // trace of shape tensor contracted with the normal frame
        let mut reconstructed = DVector::zeros(4);
        for alpha in 0..2 {
            let mut trace = 0.0;
            for i in 0..2 {
                trace += st.get(alpha, i, i);
            }
            reconstructed += frame.normal.column(alpha) * trace;
        }
        assert_relative_eq!(reconstructed, h, epsilon = 1e-9 * (1.0 + h.norm()));
    }
}
