//! Maximum-likelihood fitting with observed feedback nodes: the
//! conditioned Chow-Liu projection (exact for a fixed feedback set),
//! recovery of the sparse information matrix, and exact or greedy search
//! over feedback sets.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fvs::FvsModel;
use crate::gaussian::{
    kl_gaussian, schur_conditional, EmpiricalStats, GaussianDensity, Partition, SymMatrix,
};
use crate::tree::{chow_liu, mi_weight, tree_information_matrix, SpanningTree};

pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// Result of projecting an empirical covariance onto the family of models
/// that are tree-structured conditioned on a fixed feedback set.
#[derive(Debug, Clone)]
pub struct ObservedFit {
    /// Feedback set (caller order) and its complement.
    pub part: Partition,
    /// Optimal tree over the non-feedback nodes, global node ids.
    pub tree: SpanningTree,
    /// Fitted covariance, full n×n in original node order. Matches the
    /// input on the feedback block, the cross block, the tree-node
    /// diagonal and the tree edges (moment matching).
    pub sigma_ml: SymMatrix,
    /// Fitted information matrix; inverse of `sigma_ml` in sparse form.
    pub j_ml: FvsModel,
    /// D( N(0, Σ̂) ‖ N(0, Σ_ML) ).
    pub divergence: f64,
}

/// Exact maximum-likelihood projection for feedback set `fvs`:
///
/// 1. condition the remaining nodes on the feedback block
///    (Σ̂_{T|F} via [`schur_conditional`]),
/// 2. Chow-Liu on the conditional covariance,
/// 3. add the conditioning correction back and surround with the
///    empirical feedback/cross blocks.
///
/// Cost O(kn² + n² log n).
pub fn conditioned_chow_liu(stats: &EmpiricalStats, fvs: &[usize]) -> Result<ObservedFit> {
    conditioned_chow_liu_cov(&stats.cov, fvs)
}

/// [`conditioned_chow_liu`] on a covariance matrix directly.
pub fn conditioned_chow_liu_cov(cov: &SymMatrix, fvs: &[usize]) -> Result<ObservedFit> {
    let n = cov.dim();
    let part = Partition::new(n, fvs)?;
    let t = part.tree_nodes().to_vec();

    let s_cond = schur_conditional(cov, &part)?;
    let sigma_t = cov.select(&t);
    let (sigma_cl, tree_local) = chow_liu(&s_cond)?;
    let tree = tree_local.relabel(|p| t[p])?;

    let mut sigma_ml = cov.clone();
    for a in 0..t.len() {
        for b in a..t.len() {
            // Σ_CL plus the conditioning correction Σ̂_M Σ̂_F⁻¹ Σ̂_Mᵀ; on
            // matched entries the correction cancels against Σ̂_{T|F}.
            let corr = sigma_t.get(a, b) - s_cond.get(a, b);
            sigma_ml.set(t[a], t[b], sigma_cl.get(a, b) + corr);
        }
    }

    let j_ml = information_from_blocks(&part, &sigma_cl, &tree, &sigma_ml)?;
    let p_hat = GaussianDensity::zero_mean(cov.clone())?;
    let q = GaussianDensity::zero_mean(sigma_ml.clone())?;
    let divergence = kl_gaussian(&p_hat, &q)?;
    Ok(ObservedFit { part, tree, sigma_ml, j_ml, divergence })
}

/// Sparse information matrix of a fitted covariance, in O(k²n) given the
/// blocks:
///
///   J_T = tree inversion of Σ_CL = (Σ_ML)_{T|F}
///   J_M = −J_T Σ_M Σ_F⁻¹
///   J_F = Σ_F⁻¹ (I + (Σ_Mᵀ J_T)(Σ_M Σ_F⁻¹))
pub fn ml_information_matrix(fit: &ObservedFit) -> Result<FvsModel> {
    let sigma_cl = schur_conditional(&fit.sigma_ml, &fit.part)?;
    information_from_blocks(&fit.part, &sigma_cl, &fit.tree, &fit.sigma_ml)
}

fn information_from_blocks(
    part: &Partition,
    sigma_cl: &SymMatrix,
    tree: &SpanningTree,
    sigma_ml: &SymMatrix,
) -> Result<FvsModel> {
    let k = part.k();
    let m = part.n() - k;
    let j_t = tree_information_matrix(sigma_cl, tree)?;
    if k == 0 {
        return FvsModel::new(part.clone(), DMatrix::zeros(0, 0), DMatrix::zeros(m, 0), j_t, None);
    }
    let f = part.fvs();
    let t = part.tree_nodes();
    let sigma_f = sigma_ml.select(f);
    let sigma_m = sigma_ml.block(t, f);
    let chol_f = sigma_f.cholesky("fitted feedback covariance")?;

    let jt_sigma_m = j_t.mul_dense(&sigma_m); // J_T Σ_M, m×k
    let j_m = -chol_f.solve(&jt_sigma_m.transpose()).transpose();
    let sigma_m_sigma_f_inv = chol_f.solve(&sigma_m.transpose()).transpose(); // m×k
    let inner = DMatrix::identity(k, k) + jt_sigma_m.transpose() * &sigma_m_sigma_f_inv;
    let j_f_raw = chol_f.solve(&inner);
    let j_f = DMatrix::from_fn(k, k, |p, q| 0.5 * (j_f_raw[(p, q)] + j_f_raw[(q, p)]));
    FvsModel::new(part.clone(), j_f, j_m, j_t, None)
}

/// Working state for conditioning a covariance on one node at a time.
///
/// Conditioning on v is the rank-one Schur update
/// s_ab ← s_ab − s_av s_bv / s_vv restricted to the still-active nodes.
/// Applying the updates in feedback-list order makes every d(F)
/// evaluation bit-for-bit reproducible, which the greedy and exact
/// searches rely on when they compare scores.
#[derive(Clone)]
struct CondState {
    s: DMatrix<f64>,
    active: Vec<usize>,
    logdet_f: f64,
}

impl CondState {
    fn new(cov: &SymMatrix) -> Self {
        CondState {
            s: cov.as_matrix().clone(),
            active: (0..cov.dim()).collect(),
            logdet_f: 0.0,
        }
    }

    fn downdate(&mut self, v: usize) -> Result<()> {
        let pos = self
            .active
            .binary_search(&v)
            .map_err(|_| Error::InvalidPartition(format!("node {v} conditioned twice")))?;
        let svv = self.s[(v, v)];
        if svv <= 0.0 {
            return Err(Error::NotPositiveDefinite { context: "conditioning pivot" });
        }
        self.logdet_f += svv.ln();
        self.active.remove(pos);
        let piv = 1.0 / svv;
        for ai in 0..self.active.len() {
            let a = self.active[ai];
            for bi in ai..self.active.len() {
                let b = self.active[bi];
                let delta = self.s[(a, v)] * self.s[(b, v)] * piv;
                let val = self.s[(a, b)] - delta;
                self.s[(a, b)] = val;
                self.s[(b, a)] = val;
            }
        }
        Ok(())
    }

    /// d(F) from entropies of the conditioned state:
    ///
    ///   ½( ln det Σ̂_F + Σ_i ln Σ̂_{i|F} − ln det Σ̂ ) − Σ_E I(x_i; x_j | x_F)
    ///
    /// where the edge sum runs over the maximum-weight spanning tree under
    /// conditional mutual-information weights.
    fn d_value(&self, logdet_sigma: f64) -> Result<f64> {
        let mut sum_ln = 0.0;
        for &i in &self.active {
            let sii = self.s[(i, i)];
            if sii <= 0.0 {
                return Err(Error::NotPositiveDefinite { context: "conditional variance" });
            }
            sum_ln += sii.ln();
        }
        let mi = self.mst_mi_sum();
        Ok(0.5 * (self.logdet_f + sum_ln - logdet_sigma) - mi)
    }

    /// Total weight of the maximum-weight spanning tree over the active
    /// nodes; same candidate ordering as [`chow_liu`].
    fn mst_mi_sum(&self) -> f64 {
        let m = self.active.len();
        if m < 2 {
            return 0.0;
        }
        let mut cand = Vec::with_capacity(m * (m - 1) / 2);
        for ai in 0..m {
            let a = self.active[ai];
            for bi in (ai + 1)..m {
                let b = self.active[bi];
                cand.push((mi_weight(self.s[(a, b)], self.s[(a, a)], self.s[(b, b)]), ai, bi));
            }
        }
        cand.sort_unstable_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let mut parent: Vec<usize> = (0..m).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut total = 0.0;
        let mut taken = 0;
        for (w, a, b) in cand {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra] = rb;
                total += w;
                taken += 1;
                if taken == m - 1 {
                    break;
                }
            }
        }
        total
    }
}

/// The divergence d(F) = min over models tree-structured beyond F of
/// D(N(0, Σ̂) ‖ ·), evaluated without building the fitted model. Agrees
/// with [`conditioned_chow_liu`]'s divergence within 1e-10; adding nodes
/// to F never increases it.
pub fn fvs_cost(stats: &EmpiricalStats, fvs: &[usize]) -> Result<f64> {
    fvs_cost_cov(&stats.cov, fvs)
}

/// [`fvs_cost`] on a covariance matrix directly.
pub fn fvs_cost_cov(cov: &SymMatrix, fvs: &[usize]) -> Result<f64> {
    Partition::new(cov.dim(), fvs)?;
    let logdet_sigma = cov.log_det("fvs_cost covariance")?;
    let mut st = CondState::new(cov);
    for &v in fvs {
        st.downdate(v)?;
    }
    st.d_value(logdet_sigma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyStep {
    pub node: usize,
    pub d_value: f64,
}

#[derive(Debug, Clone)]
pub struct GreedyTrace {
    /// Chosen node and d(F_t) after adding it, in selection order.
    pub steps: Vec<GreedyStep>,
    /// Projection for the final feedback set.
    pub final_fit: ObservedFit,
}

/// Greedy feedback-set selection: at each step add the node minimizing
/// d(F ∪ {v}), ties to the smallest node index. Candidate evaluations
/// reuse the running conditioned covariance, one rank-one update each, so
/// a step costs O(n) evaluations of O(n²) work.
pub fn learn_greedy_fvs(stats: &EmpiricalStats, k: usize) -> Result<GreedyTrace> {
    learn_greedy_fvs_cov(&stats.cov, k)
}

/// [`learn_greedy_fvs`] on a covariance matrix directly.
pub fn learn_greedy_fvs_cov(cov: &SymMatrix, k: usize) -> Result<GreedyTrace> {
    let n = cov.dim();
    if n < 2 || k > n - 2 {
        return Err(Error::InvalidParameter(format!(
            "greedy selection needs k <= n - 2, got k = {k}, n = {n}"
        )));
    }
    let logdet_sigma = cov.log_det("learn_greedy_fvs covariance")?;
    let mut st = CondState::new(cov);
    let mut steps = Vec::with_capacity(k);
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let scored: Vec<(f64, usize)> = st
            .active
            .par_iter()
            .map(|&v| {
                let mut c = st.clone();
                c.downdate(v)?;
                Ok((c.d_value(logdet_sigma)?, v))
            })
            .collect::<Result<Vec<_>>>()?;
        let &(d, node) = scored
            .iter()
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .expect("at least two active nodes remain");
        st.downdate(node)?;
        chosen.push(node);
        steps.push(GreedyStep { node, d_value: d });
    }
    let final_fit = conditioned_chow_liu_cov(cov, &chosen)?;
    Ok(GreedyTrace { steps, final_fit })
}

/// Exhaustive feedback-set search: minimizes d(F) over all size-k subsets
/// (lexicographic enumeration, first minimum wins, so ties resolve to the
/// lexicographically smallest subset). Refuses to enumerate more than
/// `cap` subsets (default 10⁶).
pub fn learn_exact_fvs(stats: &EmpiricalStats, k: usize, cap: Option<u128>) -> Result<ObservedFit> {
    learn_exact_fvs_cov(&stats.cov, k, cap)
}

/// [`learn_exact_fvs`] on a covariance matrix directly.
pub fn learn_exact_fvs_cov(cov: &SymMatrix, k: usize, cap: Option<u128>) -> Result<ObservedFit> {
    let n = cov.dim();
    if n < 2 || k > n - 2 {
        return Err(Error::InvalidParameter(format!(
            "exact selection needs k <= n - 2, got k = {k}, n = {n}"
        )));
    }
    let cap = cap.unwrap_or(DEFAULT_ENUMERATION_CAP);
    let count = binomial(n, k);
    if count > cap {
        return Err(Error::EnumerationTooLarge { n, k, count, cap });
    }
    if k == 0 {
        return conditioned_chow_liu_cov(cov, &[]);
    }

    let logdet_sigma = cov.log_det("learn_exact_fvs covariance")?;
    // Flat buffer of all subsets in lexicographic order.
    let mut subsets: Vec<usize> = Vec::with_capacity(count as usize * k);
    let mut idx: Vec<usize> = (0..k).collect();
    'outer: loop {
        subsets.extend_from_slice(&idx);
        // Advance to the next combination: bump the rightmost index that
        // has room (position i may not exceed i + n - k), reset the rest.
        let mut i = k - 1;
        loop {
            if idx[i] < i + n - k {
                idx[i] += 1;
                for j in (i + 1)..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
            if i == 0 {
                break 'outer;
            }
            i -= 1;
        }
    }

    let best = subsets
        .par_chunks(k)
        .enumerate()
        .map(|(rank, fvs)| {
            let mut st = CondState::new(cov);
            for &v in fvs {
                st.downdate(v)?;
            }
            Ok((st.d_value(logdet_sigma)?, rank))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("at least one subset");
    let fvs = &subsets[best.1 * k..(best.1 + 1) * k];
    conditioned_chow_liu_cov(cov, fvs)
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}
