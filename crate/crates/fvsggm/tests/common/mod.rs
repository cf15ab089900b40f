//! Brute-force reference implementations for the acceptance suite,
//! deliberately independent of the library's algorithmic shortcuts:
//! spanning trees are enumerated exhaustively, every matrix operation is
//! dense, log-determinants go through LU instead of Cholesky, and the
//! spanning-tree fit uses Prim's algorithm instead of Kruskal's. Slow on
//! purpose — these exist to be obviously correct, not fast.

use nalgebra::DMatrix;

/// Visit every labeled tree on `m` nodes as an edge list by decoding all
/// m^(m−2) Prüfer sequences. The decoder re-scans for the smallest leaf
/// each round rather than keeping a priority queue.
pub fn for_each_tree(m: usize, mut visit: impl FnMut(&[(usize, usize)])) {
    assert!(m >= 1 && m <= 8, "enumeration is only sane for tiny trees");
    if m == 1 {
        visit(&[]);
        return;
    }
    if m == 2 {
        visit(&[(0, 1)]);
        return;
    }
    let len = m - 2;
    let total = (m as u64).pow(len as u32);
    let mut seq = vec![0usize; len];
    let mut edges = Vec::with_capacity(m - 1);
    for code in 0..total {
        let mut c = code;
        for s in seq.iter_mut() {
            *s = (c % m as u64) as usize;
            c /= m as u64;
        }
        edges.clear();
        decode_prufer(m, &seq, &mut edges);
        visit(&edges);
    }
}

fn decode_prufer(m: usize, seq: &[usize], edges: &mut Vec<(usize, usize)>) {
    let mut degree = vec![1usize; m];
    for &s in seq {
        degree[s] += 1;
    }
    let mut used = vec![false; m];
    for &s in seq {
        let leaf = (0..m).find(|&v| !used[v] && degree[v] == 1).unwrap();
        used[leaf] = true;
        degree[s] -= 1;
        edges.push((leaf, s));
    }
    let mut rest = (0..m).filter(|&v| !used[v]);
    let a = rest.next().unwrap();
    let b = rest.next().unwrap();
    edges.push((a, b));
}

/// ln det of a positive-definite matrix via LU, summing logs of the
/// pivot magnitudes so nothing overflows.
pub fn lu_log_det(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let lu = m.clone().lu();
    lu.u().diagonal().iter().map(|&d| d.abs().ln()).sum()
}

/// D( N(0, p) ‖ N(0, q) ) with dense inverses.
pub fn dense_kl(p: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    let prod = q.clone().try_inverse().unwrap() * p;
    0.5 * (prod.trace() - p.nrows() as f64 - lu_log_det(&prod))
}

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Reference evaluator for the divergence of the best model with a given
/// feedback set F and a *given* tree over the remaining nodes.
///
/// With moments matched on every free entry, the divergence collapses to
/// a determinant gap: writing S for the covariance of T conditioned on F,
///
///   d(F, tree) = ½ [ ln det Σ_F + Σ_i ln S_ii + Σ_{(i,j)} ln(1 − ρ_ij²)
///                    − ln det Σ ],
///
/// because the fitted covariance has ln det = ln det Σ_F + ln det S_CL
/// and the trace term equals n exactly at a moment-matched optimum.
pub struct FvsOracle {
    s: DMatrix<f64>,
    base: f64,
}

impl FvsOracle {
    pub fn new(cov: &DMatrix<f64>, fvs: &[usize]) -> Self {
        let n = cov.nrows();
        let t: Vec<usize> = (0..n).filter(|v| !fvs.contains(v)).collect();
        let (s, logdet_f) = if fvs.is_empty() {
            (cov.clone(), 0.0)
        } else {
            let sigma_f = submatrix(cov, fvs, fvs);
            let sigma_m = submatrix(cov, &t, fvs);
            let s = submatrix(cov, &t, &t)
                - &sigma_m * sigma_f.clone().try_inverse().unwrap() * sigma_m.transpose();
            (s, lu_log_det(&sigma_f))
        };
        let mut base = logdet_f - lu_log_det(cov);
        for i in 0..s.nrows() {
            base += s[(i, i)].ln();
        }
        FvsOracle { s, base }
    }

    pub fn tree_nodes(&self) -> usize {
        self.s.nrows()
    }

    /// d(F, tree) for one tree, edges in conditional-local indices.
    pub fn tree_divergence(&self, edges: &[(usize, usize)]) -> f64 {
        let mut acc = self.base;
        for &(a, b) in edges {
            let rho2 = self.s[(a, b)] * self.s[(a, b)] / (self.s[(a, a)] * self.s[(b, b)]);
            acc += (1.0 - rho2).ln();
        }
        0.5 * acc
    }

    /// The exhaustive minimum over every spanning tree.
    pub fn min_over_trees(&self) -> f64 {
        let mut best = f64::INFINITY;
        for_each_tree(self.tree_nodes(), |edges| {
            let d = self.tree_divergence(edges);
            if d < best {
                best = d;
            }
        });
        best
    }
}

/// Prim's algorithm for the maximum-mutual-information spanning tree,
/// returning canonical (min, max) edges.
fn prim_mi_tree(s: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let m = s.nrows();
    let mi = |i: usize, j: usize| {
        let rho2 = s[(i, j)] * s[(i, j)] / (s[(i, i)] * s[(j, j)]);
        -0.5 * (1.0 - rho2).ln()
    };
    let mut in_tree = vec![false; m];
    in_tree[0] = true;
    let mut best_w = vec![f64::NEG_INFINITY; m];
    let mut best_to = vec![0usize; m];
    for v in 1..m {
        best_w[v] = mi(0, v);
    }
    let mut edges = Vec::with_capacity(m.saturating_sub(1));
    for _ in 1..m {
        let mut v = usize::MAX;
        for u in 0..m {
            if !in_tree[u] && (v == usize::MAX || best_w[u] > best_w[v]) {
                v = u;
            }
        }
        edges.push((best_to[v].min(v), best_to[v].max(v)));
        in_tree[v] = true;
        for u in 0..m {
            if !in_tree[u] && mi(v, u) > best_w[u] {
                best_w[u] = mi(v, u);
                best_to[u] = v;
            }
        }
    }
    edges
}

/// Project a covariance onto a fixed tree: keep diagonal and edge
/// entries, fill everything else with √(S_ii S_jj) times the product of
/// correlations along the tree path.
fn tree_project(s: &DMatrix<f64>, edges: &[(usize, usize)]) -> DMatrix<f64> {
    let m = s.nrows();
    let mut adj = vec![Vec::new(); m];
    for &(a, b) in edges {
        let rho = s[(a, b)] / (s[(a, a)] * s[(b, b)]).sqrt();
        adj[a].push((b, rho));
        adj[b].push((a, rho));
    }
    let mut out = DMatrix::zeros(m, m);
    for i in 0..m {
        let mut prod = vec![0.0f64; m];
        let mut seen = vec![false; m];
        prod[i] = 1.0;
        seen[i] = true;
        let mut stack = vec![i];
        while let Some(u) = stack.pop() {
            for &(v, rho) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    prod[v] = prod[u] * rho;
                    stack.push(v);
                }
            }
        }
        for j in 0..m {
            out[(i, j)] = (s[(i, i)] * s[(j, j)]).sqrt() * prod[j];
        }
    }
    let mut out = 0.5 * (&out + out.transpose());
    for i in 0..m {
        out[(i, i)] = s[(i, i)];
    }
    for &(a, b) in edges {
        out[(a, b)] = s[(a, b)];
        out[(b, a)] = s[(a, b)];
    }
    out
}

/// One iterate of the literal latent-learning recursion, dense everywhere.
pub struct NaiveEmState {
    /// Assembled information matrix, latent block first.
    pub j: DMatrix<f64>,
    pub objective: f64,
    /// Tree edges (local observed indices) chosen this iteration; empty
    /// for the initial state.
    pub tree_edges: Vec<(usize, usize)>,
}

fn naive_objective(sigma_t_hat: &DMatrix<f64>, k: usize, j: &DMatrix<f64>) -> f64 {
    let m = sigma_t_hat.nrows();
    let j_f = j.view((0, 0), (k, k)).into_owned();
    let j_m = j.view((k, 0), (m, k)).into_owned();
    let j_t = j.view((k, k), (m, m)).into_owned();
    let marginal_prec = if k == 0 {
        j_t
    } else {
        j_t - &j_m * j_f.try_inverse().unwrap() * j_m.transpose()
    };
    dense_kl(sigma_t_hat, &marginal_prec.try_inverse().unwrap())
}

/// Textbook implementation of the alternating projection with k latent
/// nodes leading the index order: complete the covariance by inverting a
/// dense patched information matrix, re-fit by conditioning, Prim's tree,
/// path-product projection and one more dense inverse, then normalize
/// the latent block to the identity. Returns the initial state plus one
/// state per iteration.
pub fn naive_em(
    sigma_t_hat: &DMatrix<f64>,
    k: usize,
    j0: &DMatrix<f64>,
    iters: usize,
) -> Vec<NaiveEmState> {
    let m = sigma_t_hat.nrows();
    let mut j = j0.clone();
    let mut out = vec![NaiveEmState {
        j: j.clone(),
        objective: naive_objective(sigma_t_hat, k, &j),
        tree_edges: Vec::new(),
    }];
    for _ in 0..iters {
        // Completion: the patched precision has the model's conditional
        // q(x_F | x_T) but the empirical observed marginal.
        let j_f = j.view((0, 0), (k, k)).into_owned();
        let j_m = j.view((k, 0), (m, k)).into_owned();
        let coupling = &j_m * j_f.clone().try_inverse().unwrap() * j_m.transpose();
        let mut patched = j.clone();
        patched
            .view_mut((k, k), (m, m))
            .copy_from(&(sigma_t_hat.clone().try_inverse().unwrap() + coupling));
        let sigma_full = patched.try_inverse().unwrap();
        let sigma_full = 0.5 * (&sigma_full + sigma_full.transpose());

        // Re-fit: condition on the latent block, tree fit, reassemble.
        let all_f: Vec<usize> = (0..k).collect();
        let all_t: Vec<usize> = (k..k + m).collect();
        let sf = submatrix(&sigma_full, &all_f, &all_f);
        let sm = submatrix(&sigma_full, &all_t, &all_f);
        let st = submatrix(&sigma_full, &all_t, &all_t);
        let correction = if k == 0 {
            DMatrix::zeros(m, m)
        } else {
            &sm * sf.clone().try_inverse().unwrap() * sm.transpose()
        };
        let s_cond = &st - &correction;
        let edges = prim_mi_tree(&s_cond);
        let mut sigma_ml = sigma_full.clone();
        sigma_ml
            .view_mut((k, k), (m, m))
            .copy_from(&(tree_project(&s_cond, &edges) + &correction));
        let next = sigma_ml.try_inverse().unwrap();
        let mut next = 0.5 * (&next + next.transpose());

        // Same latent-basis normalization the library applies: J_F = LLᵀ
        // becomes I, with the coupling rotated to compensate.
        if k > 0 {
            let j_f = next.view((0, 0), (k, k)).into_owned();
            let chol = nalgebra::Cholesky::new(j_f).unwrap();
            let j_m = next.view((k, 0), (m, k)).into_owned();
            let rotated = chol
                .l()
                .solve_lower_triangular(&j_m.transpose())
                .unwrap()
                .transpose();
            next.view_mut((0, 0), (k, k)).copy_from(&DMatrix::identity(k, k));
            next.view_mut((k, 0), (m, k)).copy_from(&rotated);
            next.view_mut((0, k), (k, m)).copy_from(&rotated.transpose());
        }
        j = next;
        out.push(NaiveEmState {
            j: j.clone(),
            objective: naive_objective(sigma_t_hat, k, &j),
            tree_edges: edges,
        });
    }
    out
}
