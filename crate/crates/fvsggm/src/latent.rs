//! Learning with unobserved feedback nodes.
//!
//! Only the tree variables x_T carry data; the k feedback variables are
//! latent and exist to put long-range dependencies back into an otherwise
//! tree-structured model. Given an empirical covariance Σ̂_T of the
//! observed block, [`latent_chow_liu`] minimizes
//!
//!   D( N(0, Σ̂_T) ‖ N(0, Σ_T) ),   Σ_T = (J_T − J_M J_F⁻¹ J_Mᵀ)⁻¹,
//!
//! over the family of feedback models by alternating two projections:
//!
//!   P1  complete the latent block: Σ̂ = cov of p̂(x_T) · q(x_F | x_T),
//!   P2  re-fit the family: conditioned Chow-Liu on the completed Σ̂.
//!
//! P1 never inverts anything bigger than k×k — the completed covariance
//! follows from Y = J_M J_F⁻¹ as
//!
//!   Σ̂_T-block = Σ̂_T (copied),   Σ̂_M = −Σ̂_T Y,   Σ̂_F = J_F⁻¹ + Yᵀ Σ̂_T Y,
//!
//! so one iteration costs O(kn²) plus the O(n² log n) spanning-tree sort.
//! Each iteration provably does not increase the objective; the loop
//! enforces that at runtime and reports any violation as an error.

use std::collections::BTreeSet;

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fvs::FvsModel;
use crate::gaussian::{Partition, SymMatrix};
use crate::observed::{conditioned_chow_liu_cov, ObservedFit};
use crate::tree::{chow_liu, tree_information_matrix, tree_log_det_inv};

/// One accepted iterate of the alternating projection.
#[derive(Debug, Clone)]
pub struct LatentState {
    /// The model after this many iterations (iteration 0 = the init).
    pub model: FvsModel,
    pub iteration: usize,
    /// D( N(0, Σ̂_T) ‖ N(0, Σ_T) ) of `model`'s observed marginal.
    pub objective: f64,
}

/// Per-iteration record kept by [`latent_chow_liu`]; cheap enough to
/// store for every step (the model itself is only kept for the last).
#[derive(Debug, Clone)]
pub struct LatentIteration {
    pub iteration: usize,
    pub objective: f64,
    /// Tree edges over the observed nodes, canonical (min, max) pairs.
    pub tree_edges: BTreeSet<(usize, usize)>,
}

/// Full run record: objective/structure per iteration plus the final model.
#[derive(Debug, Clone)]
pub struct LatentTrace {
    /// Iteration 0 (the init) through the last accepted iterate.
    pub states: Vec<LatentIteration>,
    /// True when the run stopped because the objective decrease fell
    /// below tolerance, false when it ran into the iteration cap.
    pub converged: bool,
    pub final_state: LatentState,
}

fn chol_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|&d| d.ln()).sum::<f64>()
}

fn chol_j_f(model: &FvsModel, context: &'static str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(model.j_f().clone()).ok_or(Error::NotPositiveDefinite { context })
}

/// D( N(0, Σ̂_T) ‖ N(0, Σ_T) ) where Σ_T = (J_T − J_M J_F⁻¹ J_Mᵀ)⁻¹ is the
/// model's marginal covariance over the observed nodes.
///
/// Nothing dense of size m is ever inverted. Writing J̃ = J_T − J_M J_F⁻¹ J_Mᵀ
/// for the marginal precision,
///
///   2 D = tr(J̃ Σ̂_T) − m − ln det J̃ − ln det Σ̂_T,
///   tr(J̃ Σ̂_T) = tr(J_T Σ̂_T) − tr(J_F⁻¹ · J_Mᵀ Σ̂_T J_M),
///   ln det J̃ = ln det J_T + ln det Ĵ_F − ln det J_F,
///
/// with Ĵ_F = J_F − J_Mᵀ J_T⁻¹ J_M from k tree solves. The divergence is
/// clamped at zero: it is nonnegative by definition, and rounding can
/// push an exact match a few ulp below.
pub fn latent_objective(sigma_t_hat: &SymMatrix, model: &FvsModel) -> Result<f64> {
    let logdet_sigma = sigma_t_hat.log_det("latent objective input covariance")?;
    objective_with_logdet(sigma_t_hat, logdet_sigma, model)
}

/// Body of [`latent_objective`] with ln det Σ̂_T precomputed, so the
/// iteration loop pays for that factorization once instead of per step.
fn objective_with_logdet(
    sigma_t_hat: &SymMatrix,
    logdet_sigma: f64,
    model: &FvsModel,
) -> Result<f64> {
    let k = model.k();
    let m = model.n() - k;
    if sigma_t_hat.dim() != m {
        return Err(Error::DimensionMismatch { expected: m, actual: sigma_t_hat.dim() });
    }
    let sub = model.subsidiary()?;
    let logdet_j_t = -tree_log_det_inv(&sub.bp, model.j_t().tree())?;
    let mut logdet_marginal = logdet_j_t + sub.log_det_jf_hat();
    let mut trace = model.j_t().sparse_trace_product(sigma_t_hat);
    if k > 0 {
        let chol_f = chol_j_f(model, "latent objective feedback block")?;
        logdet_marginal -= chol_log_det(&chol_f);
        let coupled = model.j_m().transpose() * (sigma_t_hat.as_matrix() * model.j_m());
        trace -= chol_f.solve(&coupled).trace();
    }
    let divergence = 0.5 * (trace - m as f64 - logdet_marginal - logdet_sigma);
    Ok(divergence.max(0.0))
}

/// First projection: complete the latent block of the covariance under
/// the current model, i.e. the covariance of p̂(x_T) · q(x_F | x_T).
///
/// Returns the full (k+m)×(k+m) covariance in the model's global node
/// order. The observed block is `sigma_t_hat` copied verbatim; with
/// Y = J_M J_F⁻¹ the remaining blocks are Σ̂_M = −Σ̂_T Y and
/// Σ̂_F = J_F⁻¹ + Yᵀ Σ̂_T Y. Cost O(kn²); no m×m or (k+m)×(k+m) inverse.
pub fn project_p1(model: &FvsModel, sigma_t_hat: &SymMatrix) -> Result<SymMatrix> {
    let k = model.k();
    let m = model.n() - k;
    if sigma_t_hat.dim() != m {
        return Err(Error::DimensionMismatch { expected: m, actual: sigma_t_hat.dim() });
    }
    let part = model.part();
    let mut full = DMatrix::zeros(model.n(), model.n());
    for (a, &ga) in part.tree_nodes().iter().enumerate() {
        for (b, &gb) in part.tree_nodes().iter().enumerate() {
            full[(ga, gb)] = sigma_t_hat.get(a, b);
        }
    }
    if k > 0 {
        let chol_f = chol_j_f(model, "latent completion feedback block")?;
        let y = chol_f.solve(&model.j_m().transpose()).transpose();
        let sigma_y = sigma_t_hat.as_matrix() * &y;
        let f_raw = chol_f.inverse() + y.transpose() * &sigma_y;
        for (a, &ga) in part.fvs().iter().enumerate() {
            for (b, &gb) in part.fvs().iter().enumerate() {
                full[(ga, gb)] = 0.5 * (f_raw[(a, b)] + f_raw[(b, a)]);
            }
        }
        for (t, &gt) in part.tree_nodes().iter().enumerate() {
            for (f, &gf) in part.fvs().iter().enumerate() {
                full[(gt, gf)] = -sigma_y[(t, f)];
                full[(gf, gt)] = -sigma_y[(t, f)];
            }
        }
    }
    Ok(SymMatrix::from_dense_symmetric(full))
}

/// Second projection: maximum-likelihood re-fit of the feedback family
/// to a completed covariance — conditioned Chow-Liu with the latent
/// block as the conditioning set, then the sparse information recovery.
pub fn project_p2(sigma_full: &SymMatrix, part: &Partition) -> Result<(FvsModel, ObservedFit)> {
    if sigma_full.dim() != part.n() {
        return Err(Error::DimensionMismatch { expected: part.n(), actual: sigma_full.dim() });
    }
    let fit = conditioned_chow_liu_cov(sigma_full, part.fvs())?;
    Ok((fit.j_ml.clone(), fit))
}

/// Re-express the model so J_F = I. The observed marginal only sees
/// J_M J_F⁻¹ J_Mᵀ, so with J_F = L Lᵀ the substitution J_M ← J_M L⁻ᵀ,
/// J_F ← I changes nothing measurable while pinning the latent basis —
/// iterates from different runs stay directly comparable.
fn fix_gauge(model: FvsModel) -> Result<FvsModel> {
    let k = model.k();
    if k == 0 {
        return Ok(model);
    }
    let chol = chol_j_f(&model, "gauge normalization")?;
    let j_m = chol
        .l()
        .solve_lower_triangular(&model.j_m().transpose())
        .ok_or(Error::NotPositiveDefinite { context: "gauge normalization" })?
        .transpose();
    FvsModel::new(
        model.part().clone(),
        DMatrix::identity(k, k),
        j_m,
        model.j_t().clone(),
        None,
    )
}

/// Alternating-projection fit of a k-feedback-node model to the observed
/// covariance `sigma_t_hat`.
///
/// Starts from `init` (or [`default_init`] with seed 0), records the
/// objective and tree structure at iteration 0 and after every P1→P2
/// step, and stops when the per-iteration decrease drops below `tol` or
/// after `max_iters` iterations, whichever comes first. After every P2
/// the latent basis is normalized to J_F = I.
///
/// The objective can provably never increase; an increase beyond 1e-10
/// aborts the run with [`Error::MonotonicityViolation`] carrying the
/// iteration index.
pub fn latent_chow_liu(
    sigma_t_hat: &SymMatrix,
    k: usize,
    init: Option<FvsModel>,
    max_iters: usize,
    tol: f64,
) -> Result<LatentTrace> {
    if k == 0 {
        return Err(Error::InvalidParameter(
            "latent learning needs at least one feedback node (k >= 1)".into(),
        ));
    }
    if max_iters == 0 {
        return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
    }
    if !tol.is_finite() || tol < 0.0 {
        return Err(Error::InvalidParameter(format!("tolerance must be >= 0, got {tol}")));
    }
    let m = sigma_t_hat.dim();
    let logdet_sigma = sigma_t_hat.log_det("latent input covariance")?;
    let mut current = match init {
        Some(model) => {
            if model.k() != k || model.n() != k + m {
                return Err(Error::DimensionMismatch { expected: k + m, actual: model.n() });
            }
            model
        }
        None => default_init(sigma_t_hat, k, 0)?,
    };
    let part = current.part().clone();
    let mut objective = objective_with_logdet(sigma_t_hat, logdet_sigma, &current)?;
    let mut states = vec![LatentIteration {
        iteration: 0,
        objective,
        tree_edges: current.j_t().tree().edge_set(),
    }];
    let mut converged = false;
    let mut iteration = 0;
    for t in 1..=max_iters {
        let completed = project_p1(&current, sigma_t_hat)?;
        let (next, _) = project_p2(&completed, &part)?;
        let next = fix_gauge(next)?;
        let next_objective = objective_with_logdet(sigma_t_hat, logdet_sigma, &next)?;
        if next_objective > objective + 1e-10 {
            return Err(Error::MonotonicityViolation {
                iteration: t,
                delta: next_objective - objective,
            });
        }
        let decrease = objective - next_objective;
        current = next;
        iteration = t;
        objective = next_objective;
        states.push(LatentIteration {
            iteration: t,
            objective,
            tree_edges: current.j_t().tree().edge_set(),
        });
        if decrease < tol {
            converged = true;
            break;
        }
    }
    Ok(LatentTrace {
        states,
        converged,
        final_state: LatentState { model: current, iteration, objective },
    })
}

/// Deterministic starting point: nodes 0..k are latent, the observed
/// tree is the plain Chow-Liu fit of Σ̂_T, J_F = I, and J_M is filled
/// i.i.d. uniform[−σ, σ] with σ = 0.1 √(min diag J_T) / √k, halving σ
/// until the assembled matrix is positive definite (at most 50 times).
pub fn default_init(sigma_t_hat: &SymMatrix, k: usize, seed: u64) -> Result<FvsModel> {
    if k == 0 {
        return Err(Error::InvalidParameter(
            "a latent init needs at least one feedback node (k >= 1)".into(),
        ));
    }
    let m = sigma_t_hat.dim();
    let part = Partition::new(k + m, &(0..k).collect::<Vec<_>>())?;
    let (sigma_cl, tree_local) = chow_liu(sigma_t_hat)?;
    let tree = tree_local.relabel(|p| p + k)?;
    let j_t = tree_information_matrix(&sigma_cl, &tree)?;
    let min_diag = j_t.diag().iter().fold(f64::INFINITY, |acc, &d| acc.min(d));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = DMatrix::from_fn(m, k, |_, _| rng.gen_range(-1.0..=1.0));
    let mut sigma = 0.1 * min_diag.sqrt() / (k as f64).sqrt();
    for _ in 0..=50 {
        match FvsModel::new(
            part.clone(),
            DMatrix::identity(k, k),
            &base * sigma,
            j_t.clone(),
            None,
        ) {
            Ok(model) => return Ok(model),
            Err(Error::NotPositiveDefinite { .. }) | Err(Error::BpBreakdown { .. }) => {
                sigma *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::InitFailure(format!(
        "latent coupling block stayed indefinite after 50 halvings (m = {m}, k = {k})"
    )))
}
