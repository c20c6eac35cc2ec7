//! Structural simplification: the node selections each ablation mode
//! feeds into feature extraction.
//!
//! Three families of selection operate on a built forest:
//!
//! - level cuts keep every node at or below a level threshold;
//! - subtree selection keeps the largest subtree around the most
//!   confidently classified word;
//! - window selection keeps a band of words around that word and
//!   ignores tree structure entirely.
//!
//! Selections are returned in a canonical order (leftmost covered word
//! first, lower levels before higher) so downstream averaging is
//! reproducible.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{RaeError, Result};
use crate::model::{node_predict, sort_nodes, Cutoff, Forest, NodeId, RaeParams};
use crate::training::CE_FLOOR;

/// The five feature-extraction regimes of the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    /// Train on full trees, average nodes up to the threshold level.
    ExtractCut,
    /// Retrain with the threshold as the level cap, then extract from
    /// the capped forests.
    TrainCut,
    /// Extract from trees whose leaves drop the learned embedding
    /// offsets, keeping only the fixed random base vectors.
    NoEmbed,
    /// Average the largest subtree (top level within the threshold)
    /// around the central word.
    Subtree,
    /// Average the leaf representations in a word window around the
    /// central word; the threshold is the window half-width plus one.
    Window,
}

impl AblationMode {
    pub const ALL: [AblationMode; 5] = [
        AblationMode::ExtractCut,
        AblationMode::TrainCut,
        AblationMode::NoEmbed,
        AblationMode::Subtree,
        AblationMode::Window,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::ExtractCut => "extract-cut",
            AblationMode::TrainCut => "train-cut",
            AblationMode::NoEmbed => "no-embed",
            AblationMode::Subtree => "subtree",
            AblationMode::Window => "window",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = RaeError;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                RaeError::InvalidArgument(format!(
                    "unknown ablation mode {s:?} (expected one of extract-cut, train-cut, no-embed, subtree, window)"
                ))
            })
    }
}

/// One cell of the ablation grid: a mode plus its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationSpec {
    pub mode: AblationMode,
    pub threshold: Cutoff,
}

impl fmt::Display for AblationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.mode, self.threshold)
    }
}

/// The threshold grid the ablation table sweeps.
pub fn default_thresholds() -> Vec<Cutoff> {
    vec![
        Cutoff::Finite(1),
        Cutoff::Finite(2),
        Cutoff::Finite(3),
        Cutoff::Finite(5),
        Cutoff::Finite(7),
        Cutoff::Finite(10),
        Cutoff::Finite(15),
        Cutoff::Finite(20),
        Cutoff::Unbounded,
    ]
}

/// All nodes whose level is within `l_max`, in canonical order.
///
/// `l_max = 1` keeps exactly the leaves; unbounded keeps every node.
pub fn level_cut(forest: &Forest, l_max: Cutoff) -> Vec<NodeId> {
    let mut ids: Vec<NodeId> = (0..forest.len())
        .filter(|&id| l_max.allows_level(forest.node(id).level))
        .collect();
    sort_nodes(forest, &mut ids);
    ids
}

/// The leaf the classifier is most confident about.
///
/// With a gold label, confidence is measured as cross-entropy against
/// that label; without one, as the best cross-entropy over all classes
/// (the leaf whose top class probability is highest). Ties go to the
/// leftmost leaf.
pub fn central_word(forest: &Forest, params: &RaeParams, gold: Option<usize>) -> NodeId {
    let mut best = 0;
    let mut best_ce = f64::INFINITY;
    for id in forest.leaf_ids() {
        let probs = node_predict(params, &forest.node(id).rep);
        let p = match gold {
            Some(y) => probs[y],
            None => probs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        let ce = -p.max(CE_FLOOR).ln();
        if ce < best_ce {
            best_ce = ce;
            best = id;
        }
    }
    best
}

/// Highest ancestor of `leaf` whose level stays within `l_max`; the
/// leaf itself when no ancestor qualifies. Unbounded reaches the root
/// of the leaf's tree.
pub fn largest_subtree(forest: &Forest, leaf: NodeId, l_max: Cutoff) -> Result<NodeId> {
    if leaf >= forest.len() || !forest.node(leaf).is_leaf() {
        return Err(RaeError::InvalidArgument(format!(
            "node {leaf} is not a leaf"
        )));
    }
    // levels increase strictly along the ancestor chain
    let mut top = leaf;
    while let Some(parent) = forest.node(top).parent {
        if !l_max.allows_level(forest.node(parent).level) {
            break;
        }
        top = parent;
    }
    Ok(top)
}

/// Every node of the subtree rooted at `top`, in canonical order.
pub fn subtree_nodes(forest: &Forest, top: NodeId) -> Vec<NodeId> {
    forest.subtree_ids(top)
}

/// Word positions of the window of width `w` around `center`: the
/// center plus up to `w - 1` words on each side, clipped to the
/// sentence. Unbounded covers the whole sentence.
pub fn window_indices(len: usize, center: usize, w: Cutoff) -> Result<Range<usize>> {
    if center >= len {
        return Err(RaeError::InvalidArgument(format!(
            "center position {center} outside a sentence of {len} words"
        )));
    }
    Ok(match w {
        Cutoff::Unbounded => 0..len,
        Cutoff::Finite(w) => {
            let reach = (w - 1) as usize;
            center.saturating_sub(reach)..(center + reach + 1).min(len)
        }
    })
}
