//! Models whose information matrix is a tree block plus a small dense
//! feedback block, and exact inference on them in O(k²n).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::gaussian::{Partition, SymMatrix};
use crate::tree::{tree_bp, tree_log_det_inv, TreeBpResult, TreeMatrix};

/// Information-form Gaussian x ~ N⁻¹(h, J) where removing the feedback
/// nodes leaves a tree:
///
///   J = [ J_F   J_Mᵀ ]   J_F  k×k dense (feedback block)
///       [ J_M   J_T  ]   J_T  tree-structured over the remaining nodes
///
/// Rows of `j_m` follow `part.tree_nodes()` order, columns follow
/// `part.fvs()` order; `h` (optional, defaults to zero) is in global node
/// order. Construction verifies J ≻ 0 in O(k²n): the tree block must pass
/// belief propagation and the subsidiary matrix J_F − J_Mᵀ J_T⁻¹ J_M must
/// admit a Cholesky factor.
#[derive(Debug, Clone)]
pub struct FvsModel {
    part: Partition,
    j_f: DMatrix<f64>,
    j_m: DMatrix<f64>,
    j_t: TreeMatrix,
    h: Option<DVector<f64>>,
}

impl FvsModel {
    pub fn new(
        part: Partition,
        j_f: DMatrix<f64>,
        j_m: DMatrix<f64>,
        j_t: TreeMatrix,
        h: Option<DVector<f64>>,
    ) -> Result<Self> {
        let k = part.k();
        let m = part.n() - k;
        if j_f.nrows() != k || j_f.ncols() != k {
            return Err(Error::DimensionMismatch { expected: k, actual: j_f.nrows() });
        }
        if j_m.nrows() != m || j_m.ncols() != k {
            return Err(Error::DimensionMismatch { expected: m, actual: j_m.nrows() });
        }
        if j_t.tree().nodes() != part.tree_nodes() {
            return Err(Error::InvalidTree(
                "tree block nodes must equal the partition's tree nodes".into(),
            ));
        }
        if let Some(h) = &h {
            if h.len() != part.n() {
                return Err(Error::DimensionMismatch { expected: part.n(), actual: h.len() });
            }
        }
        let mut max_asym = 0.0f64;
        for p in 0..k {
            for q in (p + 1)..k {
                max_asym = max_asym.max((j_f[(p, q)] - j_f[(q, p)]).abs());
            }
        }
        if max_asym > 1e-9 {
            return Err(Error::NotSymmetric { max_asymmetry: max_asym });
        }
        let model = FvsModel { part, j_f, j_m, j_t, h };
        model.subsidiary()?;
        Ok(model)
    }

    pub fn part(&self) -> &Partition {
        &self.part
    }

    pub fn n(&self) -> usize {
        self.part.n()
    }

    pub fn k(&self) -> usize {
        self.part.k()
    }

    pub fn j_f(&self) -> &DMatrix<f64> {
        &self.j_f
    }

    pub fn j_m(&self) -> &DMatrix<f64> {
        &self.j_m
    }

    pub fn j_t(&self) -> &TreeMatrix {
        &self.j_t
    }

    pub fn h(&self) -> Option<&DVector<f64>> {
        self.h.as_ref()
    }

    pub fn with_h(mut self, h: Option<DVector<f64>>) -> Result<Self> {
        if let Some(v) = &h {
            if v.len() != self.n() {
                return Err(Error::DimensionMismatch { expected: self.n(), actual: v.len() });
            }
        }
        self.h = h;
        Ok(self)
    }

    /// Potential restricted to the feedback nodes (zeros when h is unset).
    pub fn h_f(&self) -> DVector<f64> {
        match &self.h {
            Some(h) => DVector::from_fn(self.k(), |p, _| h[self.part.fvs()[p]]),
            None => DVector::zeros(self.k()),
        }
    }

    /// Potential restricted to the tree nodes (zeros when h is unset).
    pub fn h_t(&self) -> DVector<f64> {
        let t = self.part.tree_nodes();
        match &self.h {
            Some(h) => DVector::from_fn(t.len(), |p, _| h[t[p]]),
            None => DVector::zeros(t.len()),
        }
    }

    /// Full information matrix in original node order.
    pub fn assemble(&self) -> SymMatrix {
        let n = self.n();
        let f = self.part.fvs();
        let t = self.part.tree_nodes();
        let mut out = SymMatrix::zeros(n);
        for p in 0..f.len() {
            for q in p..f.len() {
                out.set(f[p], f[q], 0.5 * (self.j_f[(p, q)] + self.j_f[(q, p)]));
            }
            for r in 0..t.len() {
                out.set(t[r], f[p], self.j_m[(r, p)]);
            }
        }
        for (r, &d) in self.j_t.diag().iter().enumerate() {
            out.set(t[r], t[r], d);
        }
        for (e, &(a, b)) in self.j_t.tree().edges().iter().enumerate() {
            out.set(a, b, self.j_t.off()[e]);
        }
        out
    }

    /// Belief propagation with the columns of J_M as right-hand sides,
    /// plus the subsidiary matrix J_F − J_Mᵀ J_T⁻¹ J_M and its Cholesky
    /// factor. The workhorse shared by the log-determinant, marginal and
    /// partition-function routines.
    pub(crate) fn subsidiary(&self) -> Result<Subsidiary> {
        let k = self.k();
        let m = self.n() - k;
        let rhs: Vec<DVector<f64>> = (0..k).map(|c| self.j_m.column(c).into_owned()).collect();
        let bp = tree_bp(&self.j_t, &rhs)?;
        let mut g = DMatrix::zeros(m, k);
        for (c, sol) in bp.solves.iter().enumerate() {
            g.set_column(c, sol);
        }
        let prod = self.j_m.transpose() * &g;
        let jf_hat = DMatrix::from_fn(k, k, |p, q| {
            self.j_f[(p, q)] - 0.5 * (prod[(p, q)] + prod[(q, p)])
        });
        let chol = if k > 0 {
            Some(Cholesky::new(jf_hat).ok_or(Error::NotPositiveDefinite {
                context: "feedback subsidiary matrix",
            })?)
        } else {
            None
        };
        Ok(Subsidiary { bp, g, chol })
    }
}

pub(crate) struct Subsidiary {
    /// BP pass over J_T with J_M's columns as right-hand sides.
    pub bp: TreeBpResult,
    /// J_T⁻¹ J_M, (n-k) × k.
    pub g: DMatrix<f64>,
    /// Cholesky of J_F − J_Mᵀ J_T⁻¹ J_M; None only when k = 0.
    pub chol: Option<Cholesky<f64, Dyn>>,
}

impl Subsidiary {
    pub fn log_det_jf_hat(&self) -> f64 {
        match &self.chol {
            Some(c) => 2.0 * c.l_dirty().diagonal().iter().map(|&d| d.ln()).sum::<f64>(),
            None => 0.0,
        }
    }
}

/// ln det J, split as ln det J_T + ln det(J_F − J_Mᵀ J_T⁻¹ J_M). The tree
/// factor comes from belief propagation, the feedback factor from a k×k
/// Cholesky, so the whole thing is O(k²n).
pub fn fvs_log_det(model: &FvsModel) -> Result<f64> {
    let sub = model.subsidiary()?;
    let tree_part = -tree_log_det_inv(&sub.bp, model.j_t().tree())?;
    Ok(tree_part + sub.log_det_jf_hat())
}

/// Marginal means and variances for every node, global order.
#[derive(Debug, Clone)]
pub struct Marginals {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
}

/// Exact marginals in O(k²n): k+1 tree solves, then k×k algebra for the
/// feedback block, then a rank-k correction per tree node:
///
///   Σ_F  = (J_F − J_Mᵀ J_T⁻¹ J_M)⁻¹
///   μ_F  = Σ_F (h_F − J_Mᵀ J_T⁻¹ h_T)
///   μ_T  = J_T⁻¹ h_T − (J_T⁻¹ J_M) μ_F
///   var_i = (J_T⁻¹)_ii + row_i(J_T⁻¹J_M) Σ_F row_i(J_T⁻¹J_M)ᵀ,  i ∈ T.
pub fn fvs_marginals(model: &FvsModel) -> Result<Marginals> {
    let n = model.n();
    let k = model.k();
    let m = n - k;
    let sub = model.subsidiary()?;
    let h_t = model.h_t();
    let g0 = tree_bp(model.j_t(), &[h_t])?.solves.pop_front_or_zero(m);

    let f = model.part().fvs();
    let t = model.part().tree_nodes();
    let mut mean = DVector::zeros(n);
    let mut variance = DVector::zeros(n);

    if k == 0 {
        for (p, &node) in t.iter().enumerate() {
            mean[node] = g0[p];
            variance[node] = sub.bp.node_variance[p];
        }
        return Ok(Marginals { mean, variance });
    }

    let chol = sub.chol.as_ref().unwrap();
    let sigma_f = chol.inverse();
    let rhs_f = model.h_f() - model.j_m().transpose() * &g0;
    let mu_f = chol.solve(&rhs_f);
    let mu_t = &g0 - &sub.g * &mu_f;

    for (p, &node) in f.iter().enumerate() {
        mean[node] = mu_f[p];
        variance[node] = sigma_f[(p, p)];
    }
    for (p, &node) in t.iter().enumerate() {
        mean[node] = mu_t[p];
        let row = sub.g.row(p);
        variance[node] = sub.bp.node_variance[p] + (row * &sigma_f * row.transpose())[(0, 0)];
    }
    Ok(Marginals { mean, variance })
}

trait PopFront {
    fn pop_front_or_zero(self, m: usize) -> DVector<f64>;
}

impl PopFront for Vec<DVector<f64>> {
    fn pop_front_or_zero(mut self, m: usize) -> DVector<f64> {
        if self.is_empty() {
            DVector::zeros(m)
        } else {
            self.swap_remove(0)
        }
    }
}

/// Log partition function of p(x) ∝ exp{-½ xᵀJx + hᵀx}:
///
///   ln Z = (n/2) ln 2π − ½ ln det J + ½ hᵀ J⁻¹ h.
pub fn log_partition(model: &FvsModel) -> Result<f64> {
    let n = model.n() as f64;
    let log_det = fvs_log_det(model)?;
    let quad = match model.h() {
        None => 0.0,
        Some(h) if h.iter().all(|&v| v == 0.0) => 0.0,
        Some(h) => {
            let marg = fvs_marginals(model)?;
            h.dot(&marg.mean)
        }
    };
    Ok(0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det + 0.5 * quad)
}
