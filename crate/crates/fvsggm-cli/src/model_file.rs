//! On-disk model format.
//!
//! A model file is JSON with a fixed field order, so serializing a parsed
//! file reproduces it byte for byte. Matrix blocks are stored as sparse
//! coordinate triplets `[i, j, value]` using global node indices:
//!
//! * `j_f` — feedback-block entries with `i <= j` (the block is symmetric);
//! * `j_m` — coupling entries as `[tree node, feedback node, value]`;
//! * `j_t` — tree-block diagonal as `[v, v, value]` plus one triplet per
//!   tree edge, kept even when the value is zero so the sparsity pattern
//!   always matches `tree_edges`.
//!
//! Absent off-diagonal triplets mean zero. The optional `sigma` section
//! records the covariance entries the fit matched: every pair involving a
//! feedback node, plus the tree-block diagonal and tree-edge pairs.
//!
//! Loading a file re-validates everything a freshly constructed model
//! would: the edge list must be a spanning tree on the non-feedback
//! nodes, blocks must have consistent dimensions, and the assembled
//! matrix must be positive definite. Violations exit with code 3 and a
//! message naming the offending entry.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use fvsggm::{FvsModel, ObservedFit, Partition, SpanningTree, TreeMatrix};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: String,
    pub n: usize,
    pub k: usize,
    pub fvs: Vec<usize>,
    pub tree_edges: Vec<(usize, usize)>,
    pub j_blocks: JBlocks,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<SigmaBlocks>,
    pub metadata: Metadata,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JBlocks {
    pub j_f: Vec<(usize, usize, f64)>,
    pub j_m: Vec<(usize, usize, f64)>,
    pub j_t: Vec<(usize, usize, f64)>,
}

/// Covariance entries the fit matched, in the same triplet layout as the
/// information blocks.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaBlocks {
    pub sigma_f: Vec<(usize, usize, f64)>,
    pub sigma_m: Vec<(usize, usize, f64)>,
    pub sigma_t: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub algorithm: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
}

impl ModelFile {
    /// Captures a model (and optionally its matched moments) for writing.
    pub fn from_model(model: &FvsModel, sigma: Option<SigmaBlocks>, metadata: Metadata) -> Self {
        let part = model.part();
        let fvs = part.fvs().to_vec();
        let k = part.k();
        let tree = model.j_t().tree();

        let mut j_f = Vec::new();
        for a in 0..k {
            for b in a..k {
                let v = model.j_f()[(a, b)];
                if a == b || v != 0.0 {
                    let (i, j) = (fvs[a].min(fvs[b]), fvs[a].max(fvs[b]));
                    j_f.push((i, j, v));
                }
            }
        }
        j_f.sort_by_key(|&(i, j, _)| (i, j));

        let mut j_m = Vec::new();
        for (tp, &t) in tree.nodes().iter().enumerate() {
            for (fp, &f) in fvs.iter().enumerate() {
                let v = model.j_m()[(tp, fp)];
                if v != 0.0 {
                    j_m.push((t, f, v));
                }
            }
        }

        let mut j_t = Vec::new();
        for (p, &v) in tree.nodes().iter().enumerate() {
            j_t.push((v, v, model.j_t().diag()[p]));
        }
        for (e, &(a, b)) in tree.edges().iter().enumerate() {
            j_t.push((a, b, model.j_t().off()[e]));
        }

        ModelFile {
            schema_version: SCHEMA_VERSION.to_string(),
            n: part.n(),
            k,
            fvs,
            tree_edges: tree.edges().to_vec(),
            j_blocks: JBlocks { j_f, j_m, j_t },
            sigma,
            metadata,
        }
    }

    /// Reconstructs and fully validates the model this file describes.
    pub fn to_model(&self) -> Result<FvsModel> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::input(format!(
                "unsupported schema_version {:?}, this build reads {:?}",
                self.schema_version, SCHEMA_VERSION
            )));
        }
        if self.fvs.len() != self.k {
            return Err(CliError::numeric(format!(
                "model file lists {} feedback nodes but k = {}",
                self.fvs.len(),
                self.k
            )));
        }
        let part = Partition::new(self.n, &self.fvs)
            .map_err(|e| CliError::invariant("model file partition", e))?;
        let k = part.k();
        let m = part.n() - k;
        let fpos: HashMap<usize, usize> =
            self.fvs.iter().enumerate().map(|(p, &v)| (v, p)).collect();

        let mut j_f = DMatrix::zeros(k, k);
        let mut seen_f = HashSet::new();
        for &(i, j, v) in &self.j_blocks.j_f {
            let (pi, pj) = match (fpos.get(&i), fpos.get(&j)) {
                (Some(&pi), Some(&pj)) => (pi, pj),
                _ => {
                    return Err(CliError::numeric(format!(
                        "j_f entry ({i}, {j}) names a non-feedback node"
                    )));
                }
            };
            if !seen_f.insert((pi.min(pj), pi.max(pj))) {
                return Err(CliError::numeric(format!("duplicate j_f entry ({i}, {j})")));
            }
            j_f[(pi, pj)] = v;
            j_f[(pj, pi)] = v;
        }

        let tree = SpanningTree::new(part.tree_nodes().to_vec(), self.tree_edges.clone())
            .map_err(|e| CliError::invariant("model file tree_edges", e))?;

        let mut j_m = DMatrix::zeros(m, k);
        let mut seen_m = HashSet::new();
        for &(t, f, v) in &self.j_blocks.j_m {
            let tp = tree.position(t).ok_or_else(|| {
                CliError::numeric(format!("j_m entry ({t}, {f}): {t} is not a tree node"))
            })?;
            let fp = *fpos.get(&f).ok_or_else(|| {
                CliError::numeric(format!("j_m entry ({t}, {f}): {f} is not a feedback node"))
            })?;
            if !seen_m.insert((tp, fp)) {
                return Err(CliError::numeric(format!("duplicate j_m entry ({t}, {f})")));
            }
            j_m[(tp, fp)] = v;
        }

        let mut diag: Vec<Option<f64>> = vec![None; m];
        let mut off_entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(i, j, v) in &self.j_blocks.j_t {
            if i == j {
                let p = tree.position(i).ok_or_else(|| {
                    CliError::numeric(format!("j_t diagonal entry at non-tree node {i}"))
                })?;
                if diag[p].replace(v).is_some() {
                    return Err(CliError::numeric(format!("duplicate j_t diagonal entry {i}")));
                }
            } else {
                let key = (i.min(j), i.max(j));
                if off_entries.insert(key, v).is_some() {
                    return Err(CliError::numeric(format!("duplicate j_t entry ({i}, {j})")));
                }
            }
        }
        let diag: Vec<f64> = diag
            .into_iter()
            .enumerate()
            .map(|(p, d)| {
                d.ok_or_else(|| {
                    CliError::numeric(format!(
                        "missing j_t diagonal entry for tree node {}",
                        tree.nodes()[p]
                    ))
                })
            })
            .collect::<Result<_>>()?;
        let off: Vec<f64> = tree
            .edges()
            .iter()
            .map(|e| {
                off_entries.remove(e).ok_or_else(|| {
                    CliError::numeric(format!(
                        "missing j_t entry for tree edge ({}, {})",
                        e.0, e.1
                    ))
                })
            })
            .collect::<Result<_>>()?;
        if let Some((&(a, b), _)) = off_entries.iter().next() {
            return Err(CliError::numeric(format!(
                "j_t entry ({a}, {b}) is not a tree edge"
            )));
        }

        let j_t = TreeMatrix::new(tree, diag, off)
            .map_err(|e| CliError::invariant("model file tree block", e))?;
        FvsModel::new(part, j_f, j_m, j_t, None)
            .map_err(|e| CliError::invariant("model file violates model invariants", e))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model files always serialize");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::csv_io::write_text(path, &self.to_json())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::input(format!("{}: invalid model file: {e}", path.display())))
    }
}

impl SigmaBlocks {
    /// Extracts the matched covariance entries from an observed-data fit.
    pub fn from_fit(fit: &ObservedFit) -> Self {
        let sigma = fit.sigma_ml.as_matrix();
        let fvs = fit.part.fvs();
        let tree = fit.j_ml.j_t().tree();

        let mut sigma_f = Vec::new();
        for a in 0..fvs.len() {
            for b in a..fvs.len() {
                let (i, j) = (fvs[a].min(fvs[b]), fvs[a].max(fvs[b]));
                sigma_f.push((i, j, sigma[(i, j)]));
            }
        }
        sigma_f.sort_by_key(|&(i, j, _)| (i, j));

        let mut sigma_m = Vec::new();
        for &t in tree.nodes() {
            for &f in fvs {
                sigma_m.push((t, f, sigma[(t, f)]));
            }
        }

        let mut sigma_t = Vec::new();
        for &v in tree.nodes() {
            sigma_t.push((v, v, sigma[(v, v)]));
        }
        for &(a, b) in tree.edges() {
            sigma_t.push((a, b, sigma[(a, b)]));
        }

        SigmaBlocks { sigma_f, sigma_m, sigma_t }
    }
}
