//! Dense symmetric matrices, node partitions, empirical moments and the
//! handful of dense Gaussian primitives everything else is built from.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Dense symmetric matrix. Symmetry holds exactly: every constructor and
/// mutator writes both (i, j) and (j, i).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "SymMatrix dimension must be >= 1");
        SymMatrix { m: DMatrix::zeros(dim, dim) }
    }

    pub fn identity(dim: usize) -> Self {
        assert!(dim >= 1, "SymMatrix dimension must be >= 1");
        SymMatrix { m: DMatrix::identity(dim, dim) }
    }

    /// Builds from `f(i, j)`, called once per pair with i <= j and mirrored.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(dim >= 1, "SymMatrix dimension must be >= 1");
        let mut m = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix { m }
    }

    /// Accepts a square matrix that is symmetric up to `tol` (absolute,
    /// relative to the largest entry) and makes it exactly symmetric by
    /// averaging mirrored entries.
    pub fn from_dense(m: DMatrix<f64>, tol: f64) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::DimensionMismatch { expected: m.nrows().max(1), actual: m.ncols() });
        }
        let scale = m.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1.0);
        let mut max_asym = 0.0f64;
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                max_asym = max_asym.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        if max_asym > tol * scale {
            return Err(Error::NotSymmetric { max_asymmetry: max_asym });
        }
        Ok(Self::from_fn(m.nrows(), |i, j| {
            if i == j { m[(i, i)] } else { 0.5 * (m[(i, j)] + m[(j, i)]) }
        }))
    }

    /// Wraps a matrix that is symmetric by construction.
    pub(crate) fn from_dense_symmetric(m: DMatrix<f64>) -> Self {
        debug_assert!(m.nrows() == m.ncols() && m.nrows() >= 1);
        debug_assert!({
            let mut ok = true;
            for i in 0..m.nrows() {
                for j in 0..i {
                    ok &= m[(i, j)] == m[(j, i)];
                }
            }
            ok
        });
        SymMatrix { m }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.m[(i, j)] = v;
        self.m[(j, i)] = v;
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    /// Principal submatrix on `idx` (in the given order).
    pub fn select(&self, idx: &[usize]) -> SymMatrix {
        assert!(!idx.is_empty());
        SymMatrix::from_fn(idx.len(), |a, b| self.m[(idx[a], idx[b])])
    }

    /// Rectangular block rows×cols (either may be empty).
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |a, b| self.m[(rows[a], cols[b])])
    }

    pub fn cholesky(&self, context: &'static str) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.m.clone()).ok_or(Error::NotPositiveDefinite { context })
    }

    pub fn is_positive_definite(&self) -> bool {
        Cholesky::new(self.m.clone()).is_some()
    }

    /// ln det via Cholesky; errors if not positive definite.
    pub fn log_det(&self, context: &'static str) -> Result<f64> {
        let chol = self.cholesky(context)?;
        Ok(2.0 * chol.l_dirty().diagonal().iter().map(|&d| d.ln()).sum::<f64>())
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        self.m.clone().symmetric_eigenvalues()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().iter().fold(f64::INFINITY, |a, &v| a.min(v))
    }
}

/// Splits {0..n-1} into an ordered feedback set and the remaining nodes.
///
/// `fvs` keeps caller order (greedy selection order is meaningful);
/// `tree_nodes` is the ascending complement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    n: usize,
    fvs: Vec<usize>,
    tree_nodes: Vec<usize>,
}

impl Partition {
    pub fn new(n: usize, fvs: &[usize]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidPartition("n must be >= 1".into()));
        }
        let mut seen = vec![false; n];
        for &v in fvs {
            if v >= n {
                return Err(Error::InvalidPartition(format!("node {v} out of range for n = {n}")));
            }
            if seen[v] {
                return Err(Error::InvalidPartition(format!("node {v} listed twice")));
            }
            seen[v] = true;
        }
        let tree_nodes: Vec<usize> = (0..n).filter(|&v| !seen[v]).collect();
        if tree_nodes.is_empty() {
            return Err(Error::InvalidPartition("feedback set must leave at least one node".into()));
        }
        Ok(Partition { n, fvs: fvs.to_vec(), tree_nodes })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.fvs.len()
    }

    pub fn fvs(&self) -> &[usize] {
        &self.fvs
    }

    pub fn tree_nodes(&self) -> &[usize] {
        &self.tree_nodes
    }

    pub fn is_feedback(&self, v: usize) -> bool {
        self.fvs.contains(&v)
    }
}

/// Sample count, mean and biased covariance of an observed data matrix.
#[derive(Debug, Clone)]
pub struct EmpiricalStats {
    pub samples: usize,
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
}

impl EmpiricalStats {
    /// Builds from precomputed moments, checking that `cov` is positive
    /// semidefinite within 1e-10 (relative) on its smallest eigenvalue.
    pub fn from_moments(samples: usize, mean: DVector<f64>, cov: SymMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimensionMismatch { expected: cov.dim(), actual: mean.len() });
        }
        let eigs = cov.eigenvalues();
        let max_eig = eigs.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let min_eig = eigs.iter().fold(f64::INFINITY, |a, &v| a.min(v));
        if min_eig < -1e-10 * max_eig.max(1.0) {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min_eig });
        }
        Ok(EmpiricalStats { samples, mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.cov.dim()
    }
}

/// Moment parameterization N(mean, cov) with cov positive definite.
#[derive(Debug, Clone)]
pub struct GaussianDensity {
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
}

impl GaussianDensity {
    pub fn new(mean: DVector<f64>, cov: SymMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimensionMismatch { expected: cov.dim(), actual: mean.len() });
        }
        cov.cholesky("GaussianDensity covariance")?;
        Ok(GaussianDensity { mean, cov })
    }

    pub fn zero_mean(cov: SymMatrix) -> Result<Self> {
        let n = cov.dim();
        Self::new(DVector::zeros(n), cov)
    }

    pub fn dim(&self) -> usize {
        self.cov.dim()
    }
}

/// Mean and biased covariance of `samples` (one observation per row):
/// mean = (1/s) Σ xᵢ, cov = (1/s) Σ xᵢxᵢᵀ − mean meanᵀ.
pub fn empirical_stats(samples: &DMatrix<f64>) -> Result<EmpiricalStats> {
    let s = samples.nrows();
    let n = samples.ncols();
    if s < 2 {
        return Err(Error::InsufficientSamples(s));
    }
    if n == 0 {
        return Err(Error::DimensionMismatch { expected: 1, actual: 0 });
    }
    let mut sum = DVector::zeros(n);
    let mut outer = DMatrix::zeros(n, n);
    for r in 0..s {
        let row = samples.row(r).transpose();
        sum += &row;
        outer.syger(1.0, &row, &row, 1.0);
    }
    let mean = sum / s as f64;
    // syger fills the lower triangle only; mirror while normalizing.
    let cov = SymMatrix::from_fn(n, |i, j| outer[(j, i)] / s as f64 - mean[i] * mean[j]);
    EmpiricalStats::from_moments(s, mean, cov)
}

/// KL divergence D(p̂ ‖ q) between Gaussians, p̂ = N(μ̂, Σ̂), q = N(μ, Σ):
///
///   ½ ( tr(Σ⁻¹Σ̂) + (μ − μ̂)ᵀ Σ⁻¹ (μ − μ̂) − n − ln det(Σ⁻¹Σ̂) )
///
/// Zero when the arguments coincide.
pub fn kl_gaussian(p_hat: &GaussianDensity, q: &GaussianDensity) -> Result<f64> {
    let n = p_hat.dim();
    if q.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: q.dim() });
    }
    let chol_q = q.cov.cholesky("kl_gaussian second argument")?;
    let solved = chol_q.solve(p_hat.cov.as_matrix());
    let trace = solved.trace();
    let diff = &q.mean - &p_hat.mean;
    let quad = diff.dot(&chol_q.solve(&diff));
    let log_det_q = 2.0 * chol_q.l_dirty().diagonal().iter().map(|&d| d.ln()).sum::<f64>();
    let log_det_p = p_hat.cov.log_det("kl_gaussian first argument")?;
    Ok(0.5 * (trace + quad - n as f64 - (log_det_p - log_det_q)))
}

/// Conditional covariance of the tree block given the feedback block:
/// Σ_T − Σ_M Σ_F⁻¹ Σ_Mᵀ, indexed by position in `part.tree_nodes()`.
/// With an empty feedback set this is just the tree block.
pub fn schur_conditional(cov: &SymMatrix, part: &Partition) -> Result<SymMatrix> {
    if cov.dim() != part.n() {
        return Err(Error::DimensionMismatch { expected: part.n(), actual: cov.dim() });
    }
    let t = part.tree_nodes();
    let sigma_t = cov.select(t);
    if part.k() == 0 {
        return Ok(sigma_t);
    }
    let f = part.fvs();
    let sigma_f = cov.select(f);
    let sigma_m = cov.block(t, f);
    let chol_f = sigma_f.cholesky("schur_conditional feedback block")?;
    let x = chol_f.solve(&sigma_m.transpose()); // Σ_F⁻¹ Σ_Mᵀ
    let correction = &sigma_m * &x;
    Ok(SymMatrix::from_fn(t.len(), |a, b| {
        sigma_t.get(a, b) - 0.5 * (correction[(a, b)] + correction[(b, a)])
    }))
}

/// Inverse of a positive definite matrix assembled from the block identity
///
///   [A B; Bᵀ D]⁻¹ = [A⁻¹ + A⁻¹B S⁻¹ BᵀA⁻¹,  −A⁻¹B S⁻¹;
///                    −S⁻¹BᵀA⁻¹,              S⁻¹],   S = D − BᵀA⁻¹B,
///
/// with A the feedback block and D the tree block of `part`. Entries are
/// returned in the original index order.
pub fn block_inverse(m: &SymMatrix, part: &Partition) -> Result<SymMatrix> {
    if m.dim() != part.n() {
        return Err(Error::DimensionMismatch { expected: part.n(), actual: m.dim() });
    }
    let n = part.n();
    let f = part.fvs();
    let t = part.tree_nodes();

    let d = m.select(t);
    if part.k() == 0 {
        let chol = d.cholesky("block_inverse")?;
        let inv = chol.inverse();
        let mut out = SymMatrix::zeros(n);
        for a in 0..t.len() {
            for b in a..t.len() {
                out.set(t[a], t[b], 0.5 * (inv[(a, b)] + inv[(b, a)]));
            }
        }
        return Ok(out);
    }

    let a = m.select(f);
    let b = m.block(f, t); // k × (n-k)
    let chol_a = a.cholesky("block_inverse feedback block")?;
    let a_inv_b = chol_a.solve(&b); // A⁻¹B
    let schur = d.as_matrix() - b.transpose() * &a_inv_b;
    let schur = SymMatrix::from_dense(schur, 1e-9)?;
    let chol_s = schur.cholesky("block_inverse Schur complement")?;
    let s_inv = chol_s.inverse();
    let a_inv = chol_a.inverse();

    let cross = -&a_inv_b * &s_inv; // −A⁻¹B S⁻¹, k × (n-k)
    let top = a_inv + &a_inv_b * &s_inv * a_inv_b.transpose();

    let mut out = SymMatrix::zeros(n);
    for p in 0..f.len() {
        for q in p..f.len() {
            out.set(f[p], f[q], 0.5 * (top[(p, q)] + top[(q, p)]));
        }
        for b_i in 0..t.len() {
            out.set(f[p], t[b_i], cross[(p, b_i)]);
        }
    }
    for a_i in 0..t.len() {
        for b_i in a_i..t.len() {
            out.set(t[a_i], t[b_i], 0.5 * (s_inv[(a_i, b_i)] + s_inv[(b_i, a_i)]));
        }
    }
    Ok(out)
}

/// Draws `s` rows from `model` with a ChaCha stream seeded by `seed`:
/// x = μ + Lz, Σ = LLᵀ, z standard normal.
pub fn sample_gaussian(model: &GaussianDensity, s: usize, seed: u64) -> Result<DMatrix<f64>> {
    let n = model.dim();
    let chol = model.cov.cholesky("sample_gaussian covariance")?;
    let l = chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut out = DMatrix::zeros(s, n);
    let mut z = DVector::zeros(n);
    for r in 0..s {
        for i in 0..n {
            z[i] = normal.sample(&mut rng);
        }
        let x = &model.mean + &l * &z;
        for i in 0..n {
            out[(r, i)] = x[i];
        }
    }
    Ok(out)
}
