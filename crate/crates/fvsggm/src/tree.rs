//! Spanning trees over node subsets, the Chow-Liu projection for Gaussians,
//! and exact O(m) inference on tree-structured information matrices.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::SymMatrix;

/// Correlation magnitudes are clamped to this before log/MI transforms so
/// nearly deterministic pairs stay finite.
pub(crate) const RHO_CLAMP: f64 = 1.0 - 1e-12;

/// Mutual information of a bivariate Gaussian pair, -½ ln(1 - ρ²), from
/// covariance entries. Every tree-weight computation in the crate goes
/// through here so learners and projectors agree bit for bit.
pub(crate) fn mi_weight(s_ij: f64, s_ii: f64, s_jj: f64) -> f64 {
    let rho = correlation(s_ij, s_ii, s_jj);
    -0.5 * (-rho * rho).ln_1p()
}

pub(crate) fn correlation(s_ij: f64, s_ii: f64, s_jj: f64) -> f64 {
    let rho = s_ij / (s_ii * s_jj).sqrt();
    rho.clamp(-RHO_CLAMP, RHO_CLAMP)
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// A spanning tree over an explicit node list. Edges are stored as
/// canonical (min, max) pairs in lexicographic order; each edge may carry
/// a weight. Matrix-valued companions (covariances, [`TreeMatrix`] blocks)
/// are indexed by *position* in `nodes`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanningTree {
    nodes: Vec<usize>,
    edges: Vec<(usize, usize)>,
    weights: Option<Vec<f64>>,
    pos: HashMap<usize, usize>,
}

impl SpanningTree {
    pub fn new(nodes: Vec<usize>, edges: Vec<(usize, usize)>) -> Result<Self> {
        Self::build(nodes, edges, None)
    }

    pub fn with_weights(
        nodes: Vec<usize>,
        edges: Vec<(usize, usize)>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        Self::build(nodes, edges, Some(weights))
    }

    fn build(
        nodes: Vec<usize>,
        edges: Vec<(usize, usize)>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let m = nodes.len();
        if m == 0 {
            return Err(Error::InvalidTree("node list is empty".into()));
        }
        let mut pos = HashMap::with_capacity(m);
        for (i, &v) in nodes.iter().enumerate() {
            if pos.insert(v, i).is_some() {
                return Err(Error::InvalidTree(format!("node {v} listed twice")));
            }
        }
        if edges.len() != m - 1 {
            return Err(Error::InvalidTree(format!(
                "{} nodes need {} edges, got {}",
                m,
                m - 1,
                edges.len()
            )));
        }
        if let Some(w) = &weights {
            if w.len() != edges.len() {
                return Err(Error::InvalidTree(format!(
                    "{} edges but {} weights",
                    edges.len(),
                    w.len()
                )));
            }
        }

        // Canonicalize pairs, keep weights aligned while sorting.
        let mut order: Vec<usize> = (0..edges.len()).collect();
        let canon: Vec<(usize, usize)> = edges
            .iter()
            .map(|&(a, b)| (a.min(b), a.max(b)))
            .collect();
        order.sort_unstable_by_key(|&e| canon[e]);
        let edges: Vec<(usize, usize)> = order.iter().map(|&e| canon[e]).collect();
        let weights = weights.map(|w| order.iter().map(|&e| w[e]).collect::<Vec<f64>>());

        let mut uf = UnionFind::new(m);
        for &(a, b) in &edges {
            if a == b {
                return Err(Error::InvalidTree(format!("self-loop at node {a}")));
            }
            let (pa, pb) = match (pos.get(&a), pos.get(&b)) {
                (Some(&pa), Some(&pb)) => (pa, pb),
                _ => return Err(Error::InvalidTree(format!("edge ({a}, {b}) leaves the node set"))),
            };
            if !uf.union(pa, pb) {
                return Err(Error::InvalidTree(format!("edge ({a}, {b}) closes a cycle")));
            }
        }
        Ok(SpanningTree { nodes, edges, weights, pos })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn position(&self, node: usize) -> Option<usize> {
        self.pos.get(&node).copied()
    }

    /// Rewrites node ids through `map` (e.g. block-local to global).
    pub fn relabel(&self, map: impl Fn(usize) -> usize) -> Result<SpanningTree> {
        let nodes: Vec<usize> = self.nodes.iter().map(|&v| map(v)).collect();
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|&(a, b)| (map(a), map(b))).collect();
        Self::build(nodes, edges, self.weights.clone())
    }

    /// Edge set as canonical pairs, for structure comparisons.
    pub fn edge_set(&self) -> std::collections::BTreeSet<(usize, usize)> {
        self.edges.iter().copied().collect()
    }

    /// Adjacency over positions: adj[p] = (neighbor position, edge index).
    pub(crate) fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.len()];
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            let pa = self.pos[&a];
            let pb = self.pos[&b];
            adj[pa].push((pb, e));
            adj[pb].push((pa, e));
        }
        adj
    }

    /// Pre-order traversal with parents, one component per root, roots
    /// chosen as the lowest unvisited node id. Returns (order, parent,
    /// parent_edge) over positions; roots have parent == usize::MAX.
    pub(crate) fn traversal(&self) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let m = self.len();
        let adj = self.adjacency();
        let mut by_id: Vec<usize> = (0..m).collect();
        by_id.sort_unstable_by_key(|&p| self.nodes[p]);
        let mut visited = vec![false; m];
        let mut parent = vec![usize::MAX; m];
        let mut parent_edge = vec![usize::MAX; m];
        let mut order = Vec::with_capacity(m);
        let mut stack = Vec::new();
        for &root in &by_id {
            if visited[root] {
                continue;
            }
            visited[root] = true;
            stack.push(root);
            while let Some(u) = stack.pop() {
                order.push(u);
                for &(v, e) in &adj[u] {
                    if !visited[v] {
                        visited[v] = true;
                        parent[v] = u;
                        parent_edge[v] = e;
                        stack.push(v);
                    }
                }
            }
        }
        (order, parent, parent_edge)
    }
}

/// Symmetric matrix whose off-diagonal support is exactly the edge set of
/// a spanning tree. `diag` is indexed by position in `tree.nodes()`, `off`
/// by edge index.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeMatrix {
    tree: SpanningTree,
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl TreeMatrix {
    pub fn new(tree: SpanningTree, diag: Vec<f64>, off: Vec<f64>) -> Result<Self> {
        if diag.len() != tree.len() {
            return Err(Error::DimensionMismatch { expected: tree.len(), actual: diag.len() });
        }
        if off.len() != tree.edges().len() {
            return Err(Error::DimensionMismatch {
                expected: tree.edges().len(),
                actual: off.len(),
            });
        }
        Ok(TreeMatrix { tree, diag, off })
    }

    pub fn tree(&self) -> &SpanningTree {
        &self.tree
    }

    pub fn dim(&self) -> usize {
        self.tree.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn off(&self) -> &[f64] {
        &self.off
    }

    pub fn to_dense(&self) -> SymMatrix {
        let mut m = SymMatrix::zeros(self.dim());
        for (p, &d) in self.diag.iter().enumerate() {
            m.set(p, p, d);
        }
        for (e, &(a, b)) in self.tree.edges().iter().enumerate() {
            let pa = self.tree.position(a).unwrap();
            let pb = self.tree.position(b).unwrap();
            m.set(pa, pb, self.off[e]);
        }
        m
    }

    /// Sparse product self · x, O(m · cols).
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.dim());
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for c in 0..x.ncols() {
            for p in 0..self.dim() {
                out[(p, c)] = self.diag[p] * x[(p, c)];
            }
            for (e, &(a, b)) in self.tree.edges().iter().enumerate() {
                let pa = self.tree.position(a).unwrap();
                let pb = self.tree.position(b).unwrap();
                out[(pa, c)] += self.off[e] * x[(pb, c)];
                out[(pb, c)] += self.off[e] * x[(pa, c)];
            }
        }
        out
    }

    /// tr(self · s) using only the tree-sparse entries, O(m).
    pub fn sparse_trace_product(&self, s: &SymMatrix) -> f64 {
        let mut acc = 0.0;
        for (p, &d) in self.diag.iter().enumerate() {
            acc += d * s.get(p, p);
        }
        for (e, &(a, b)) in self.tree.edges().iter().enumerate() {
            let pa = self.tree.position(a).unwrap();
            let pb = self.tree.position(b).unwrap();
            acc += 2.0 * self.off[e] * s.get(pa, pb);
        }
        acc
    }
}

/// Maximum-weight spanning tree of the complete graph on `0..dim` under
/// Gaussian mutual-information weights, together with the covariance of
/// the projected tree model.
///
/// The projection keeps diagonal and tree-edge entries of `cov` untouched
/// and fills every other pair (i, j) with √(Σ_ii Σ_jj) · Π ρ along the
/// tree path between i and j.
///
/// Kruskal order: weights descending, exact ties by (i, j) ascending, so
/// the result is deterministic (a diagonal covariance yields the path
/// 0-1, 1-2, ...).
pub fn chow_liu(cov: &SymMatrix) -> Result<(SymMatrix, SpanningTree)> {
    let n = cov.dim();
    for i in 0..n {
        if cov.get(i, i) <= 0.0 {
            return Err(Error::NotPositiveDefinite { context: "chow_liu covariance diagonal" });
        }
    }
    if n == 1 {
        return Ok((cov.clone(), SpanningTree::new(vec![0], vec![])?));
    }

    let mut cand: Vec<(f64, usize, usize)> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            cand.push((mi_weight(cov.get(i, j), cov.get(i, i), cov.get(j, j)), i, j));
        }
    }
    cand.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut uf = UnionFind::new(n);
    let mut edges = Vec::with_capacity(n - 1);
    let mut weights = Vec::with_capacity(n - 1);
    for (w, i, j) in cand {
        if uf.union(i, j) {
            edges.push((i, j));
            weights.push(w);
            if edges.len() == n - 1 {
                break;
            }
        }
    }
    let tree = SpanningTree::with_weights((0..n).collect(), edges, weights)?;

    // Path products of edge correlations, rooted at each i in turn.
    let adj = tree.adjacency();
    let rho: Vec<f64> = tree
        .edges()
        .iter()
        .map(|&(a, b)| correlation(cov.get(a, b), cov.get(a, a), cov.get(b, b)))
        .collect();
    let mut cl = cov.clone();
    let mut prod = vec![0.0f64; n];
    let mut stack: Vec<usize> = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for i in 0..n {
        seen.iter_mut().for_each(|s| *s = false);
        prod[i] = 1.0;
        seen[i] = true;
        stack.push(i);
        while let Some(u) = stack.pop() {
            for &(v, e) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    prod[v] = prod[u] * rho[e];
                    stack.push(v);
                }
            }
        }
        for j in (i + 1)..n {
            if tree.edges().binary_search(&(i, j)).is_err() {
                cl.set(i, j, (cov.get(i, i) * cov.get(j, j)).sqrt() * prod[j]);
            }
        }
    }
    Ok((cl, tree))
}

/// Inverts a tree-structured covariance in O(m):
///
///   J_ii = (1 − deg(i)) / Σ_ii + Σ_{j ~ i} (Σ_ii − Σ_ij Σ_jj⁻¹ Σ_ji)⁻¹
///   J_ij = Σ_ij / (Σ_ij² − Σ_ii Σ_jj)   on tree edges, zero elsewhere.
///
/// `cov` is indexed by position in `tree.nodes()`.
pub fn tree_information_matrix(cov: &SymMatrix, tree: &SpanningTree) -> Result<TreeMatrix> {
    let m = tree.len();
    if cov.dim() != m {
        return Err(Error::DimensionMismatch { expected: m, actual: cov.dim() });
    }
    for p in 0..m {
        if cov.get(p, p) <= 0.0 {
            return Err(Error::NotPositiveDefinite { context: "tree_information_matrix diagonal" });
        }
    }
    let mut diag: Vec<f64> = (0..m).map(|p| 1.0 / cov.get(p, p)).collect();
    let mut off = Vec::with_capacity(tree.edges().len());
    for &(a, b) in tree.edges() {
        let pa = tree.position(a).unwrap();
        let pb = tree.position(b).unwrap();
        let (s_aa, s_bb, s_ab) = (cov.get(pa, pa), cov.get(pb, pb), cov.get(pa, pb));
        let det = s_ab * s_ab - s_aa * s_bb;
        if det >= 0.0 {
            return Err(Error::DegenerateCorrelation { i: a, j: b });
        }
        off.push(s_ab / det);
        // Pairwise conditional precisions replace the marginal ones.
        diag[pa] += 1.0 / (s_aa - s_ab / s_bb * s_ab) - 1.0 / s_aa;
        diag[pb] += 1.0 / (s_bb - s_ab / s_aa * s_ab) - 1.0 / s_bb;
    }
    TreeMatrix::new(tree.clone(), diag, off)
}

/// Exact Gaussian belief propagation on a tree-structured information
/// matrix: two O(m) sweeps per quantity, rooted at the lowest node id.
#[derive(Debug, Clone)]
pub struct TreeBpResult {
    /// Marginal variances (J_T⁻¹)_ii by position in `tree.nodes()`.
    pub node_variance: Vec<f64>,
    /// Pairwise covariances (J_T⁻¹)_ij by edge index.
    pub edge_covariance: Vec<f64>,
    /// One solution J_T⁻¹ h per right-hand side, by position.
    pub solves: Vec<DVector<f64>>,
}

/// Runs the two-pass schedule on `j_tree`, which must be positive
/// definite; a nonpositive elimination precision aborts with the offending
/// node. Cost O(m · (1 + rhs.len())).
pub fn tree_bp(j_tree: &TreeMatrix, rhs: &[DVector<f64>]) -> Result<TreeBpResult> {
    let m = j_tree.dim();
    let tree = j_tree.tree();
    for (r, h) in rhs.iter().enumerate() {
        if h.len() != m {
            let _ = r;
            return Err(Error::DimensionMismatch { expected: m, actual: h.len() });
        }
    }
    let (order, parent, parent_edge) = tree.traversal();
    let adj = tree.adjacency();
    let diag = j_tree.diag();
    let off = j_tree.off();

    // Leaves-to-root: eliminate each node into its parent.
    let mut jhat = vec![0.0f64; m];
    for &u in order.iter().rev() {
        let mut v = diag[u];
        for &(c, e) in &adj[u] {
            if parent[c] == u {
                v -= off[e] * off[e] / jhat[c];
            }
        }
        if v <= 0.0 || !v.is_finite() {
            return Err(Error::BpBreakdown { node: tree.nodes()[u] });
        }
        jhat[u] = v;
    }

    // Root-to-leaves: variances and edge covariances.
    let mut node_variance = vec![0.0f64; m];
    let mut edge_covariance = vec![0.0f64; tree.edges().len()];
    for &u in &order {
        if parent[u] == usize::MAX {
            node_variance[u] = 1.0 / jhat[u];
        } else {
            let e = parent_edge[u];
            let p_par = node_variance[parent[u]];
            edge_covariance[e] = -off[e] * p_par / jhat[u];
            node_variance[u] = 1.0 / jhat[u] + off[e] * off[e] * p_par / (jhat[u] * jhat[u]);
        }
    }

    // Same sweeps per right-hand side.
    let mut solves = Vec::with_capacity(rhs.len());
    let mut hhat = vec![0.0f64; m];
    for h in rhs {
        for &u in order.iter().rev() {
            let mut v = h[u];
            for &(c, e) in &adj[u] {
                if parent[c] == u {
                    v -= off[e] * hhat[c] / jhat[c];
                }
            }
            hhat[u] = v;
        }
        let mut g = DVector::zeros(m);
        for &u in &order {
            g[u] = if parent[u] == usize::MAX {
                hhat[u] / jhat[u]
            } else {
                (hhat[u] - off[parent_edge[u]] * g[parent[u]]) / jhat[u]
            };
        }
        solves.push(g);
    }

    Ok(TreeBpResult { node_variance, edge_covariance, solves })
}

/// ln det(J_T⁻¹) from belief propagation output:
///
///   Σ_i ln P_ii + Σ_{(i,j)∈E} ln( (P_ii P_jj − P_ij²) / (P_ii P_jj) ).
pub fn tree_log_det_inv(bp: &TreeBpResult, tree: &SpanningTree) -> Result<f64> {
    if bp.node_variance.len() != tree.len() || bp.edge_covariance.len() != tree.edges().len() {
        return Err(Error::DimensionMismatch {
            expected: tree.len(),
            actual: bp.node_variance.len(),
        });
    }
    let mut acc = 0.0;
    for (p, &v) in bp.node_variance.iter().enumerate() {
        if v <= 0.0 {
            return Err(Error::NonpositiveVariance { node: tree.nodes()[p] });
        }
        acc += v.ln();
    }
    for (e, &(a, b)) in tree.edges().iter().enumerate() {
        let pa = tree.position(a).unwrap();
        let pb = tree.position(b).unwrap();
        let pii = bp.node_variance[pa];
        let pjj = bp.node_variance[pb];
        let pij = bp.edge_covariance[e];
        let num = pii * pjj - pij * pij;
        if num <= 0.0 {
            return Err(Error::DegenerateCorrelation { i: a, j: b });
        }
        acc += (num / (pii * pjj)).ln();
    }
    Ok(acc)
}
