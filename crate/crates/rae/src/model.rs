//! RAE parameters and forward computations: leaf representations,
//! pair encoding/reconstruction, per-node label prediction and greedy
//! tree construction.
//!
//! Conventions fixed here (the rest of the crate relies on them):
//!
//! - The nonlinearity is `tanh`.
//! - Encoder outputs are normalized to unit Euclidean length; a raw
//!   output of exactly zero norm is passed through unnormalized.
//! - Reconstruction error is the squared Euclidean distance between a
//!   node pair and its decoding. Squaring leaves the greedy argmin
//!   unchanged and is smooth at zero.
//! - Leaves are level 1; an internal node is one above its tallest
//!   child.
//! - Greedy ties resolve to the leftmost minimal pair.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{RaeError, Result};

/// A level or window bound: a positive integer or unbounded.
///
/// Tree modes read it as the maximum node level `l_max`; window mode
/// reads it as the window width `w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cutoff {
    Finite(u32),
    Unbounded,
}

impl Cutoff {
    pub fn allows_level(self, level: u32) -> bool {
        match self {
            Cutoff::Finite(max) => level <= max,
            Cutoff::Unbounded => true,
        }
    }

    pub fn is_unbounded(self) -> bool {
        matches!(self, Cutoff::Unbounded)
    }
}

impl fmt::Display for Cutoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cutoff::Finite(n) => write!(f, "{n}"),
            Cutoff::Unbounded => write!(f, "inf"),
        }
    }
}

impl FromStr for Cutoff {
    type Err = RaeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inf" | "Inf" | "INF" | "∞" => Ok(Cutoff::Unbounded),
            _ => {
                let n: u32 = s.parse().map_err(|_| {
                    RaeError::InvalidArgument(format!(
                        "expected a positive integer or \"inf\", got {s:?}"
                    ))
                })?;
                if n == 0 {
                    return Err(RaeError::InvalidArgument(
                        "cutoff must be at least 1 (\"inf\" for unbounded)".into(),
                    ));
                }
                Ok(Cutoff::Finite(n))
            }
        }
    }
}

impl Serialize for Cutoff {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cutoff::Finite(n) => serializer.serialize_u32(*n),
            Cutoff::Unbounded => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Cutoff {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;

        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Str(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Int(0) => Err(D::Error::custom(
                "cutoff must be at least 1 (\"inf\" for unbounded)",
            )),
            Raw::Int(n) if n <= u32::MAX as u64 => Ok(Cutoff::Finite(n as u32)),
            Raw::Int(n) => Err(D::Error::custom(format!("cutoff {n} out of range"))),
            Raw::Str(s) => Cutoff::from_str(&s).map_err(D::Error::custom),
        }
    }
}

/// Fixed random base vectors `W` plus the learned offset matrix `L`;
/// the representation of word `n` is `W[n] + L[n]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingStore {
    w: Array2<f64>,
    pub l: Array2<f64>,
}

impl EmbeddingStore {
    pub fn new(w: Array2<f64>, l: Array2<f64>) -> Result<Self> {
        if w.dim() != l.dim() {
            return Err(RaeError::InvalidArgument(format!(
                "W and L must have identical shape, got {:?} vs {:?}",
                w.dim(),
                l.dim()
            )));
        }
        Ok(Self { w, l })
    }

    pub fn vocab_size(&self) -> usize {
        self.w.nrows()
    }

    pub fn h(&self) -> usize {
        self.w.ncols()
    }

    /// Base vectors are fixed after initialization.
    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    /// Leaf representation for a word: `W[n] + L[n]` when
    /// `use_learned` is set, the fixed base vector `W[n]` alone
    /// otherwise (the no-embed extraction path).
    pub fn leaf_rep(&self, word_index: usize, use_learned: bool) -> Result<Array1<f64>> {
        if word_index >= self.vocab_size() {
            return Err(RaeError::InvalidArgument(format!(
                "word index {word_index} out of range for vocabulary of {}",
                self.vocab_size()
            )));
        }
        let w = self.w.row(word_index);
        Ok(if use_learned {
            &w + &self.l.row(word_index)
        } else {
            w.to_owned()
        })
    }
}

/// Encoder, decoder and label-layer weights.
///
/// Shapes: `a1` is h x 2h, `b1` is h, `a2` is 2h x h, `b2` is 2h,
/// `a_label` is C x h.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RaeParams {
    pub a1: Array2<f64>,
    pub b1: Array1<f64>,
    pub a2: Array2<f64>,
    pub b2: Array1<f64>,
    pub a_label: Array2<f64>,
}

impl RaeParams {
    pub fn h(&self) -> usize {
        self.a1.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.a_label.nrows()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let h = self.h();
        let ok = self.a1.dim() == (h, 2 * h)
            && self.b1.len() == h
            && self.a2.dim() == (2 * h, h)
            && self.b2.len() == 2 * h
            && self.a_label.ncols() == h;
        if ok {
            Ok(())
        } else {
            Err(RaeError::InvalidArgument(
                "inconsistent parameter shapes".into(),
            ))
        }
    }
}

/// Default half-width for the uniform initialization of `W`.
pub const DEFAULT_INIT_SCALE: f64 = 0.05;

/// Initialize the embedding store and parameters.
///
/// `W` entries are i.i.d. uniform(-init_scale, +init_scale) under the
/// seed; `L` starts at zero so initial leaf representations equal `W`
/// exactly. Weight matrices use uniform(-r, r) with r = 1/sqrt(fan-in);
/// biases start at zero. Draw order is fixed (W, A1, A2, A_label) so
/// identical arguments give bitwise-identical parameters.
pub fn init_model(
    vocab_size: usize,
    h: usize,
    n_classes: usize,
    seed: u64,
    init_scale: f64,
) -> Result<(EmbeddingStore, RaeParams)> {
    if vocab_size == 0 || h == 0 || n_classes == 0 {
        return Err(RaeError::InvalidArgument(
            "vocab_size, h and the class count must all be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |rows: usize, cols: usize, scale: f64| -> Array2<f64> {
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| rng.random_range(-scale..scale))
            .collect();
        Array2::from_shape_vec((rows, cols), data).expect("shape matches data length")
    };

    let w = uniform(vocab_size, h, init_scale);
    let a1 = uniform(h, 2 * h, 1.0 / ((2 * h) as f64).sqrt());
    let a2 = uniform(2 * h, h, 1.0 / (h as f64).sqrt());
    let a_label = uniform(n_classes, h, 1.0 / (h as f64).sqrt());

    let store = EmbeddingStore::new(w, Array2::zeros((vocab_size, h)))?;
    let params = RaeParams {
        a1,
        b1: Array1::zeros(h),
        a2,
        b2: Array1::zeros(2 * h),
        a_label,
    };
    Ok((store, params))
}

/// Full output of one autoencoder application, including the
/// pre-normalization activation norm needed for backpropagation.
#[derive(Debug, Clone)]
pub struct PairEncoding {
    /// Combined representation (unit length unless degenerate).
    pub rep: Array1<f64>,
    /// Squared Euclidean distance between `[n1; n2]` and its decoding.
    pub recon_error: f64,
    /// Euclidean norm of tanh(A1 [n1; n2] + b1). Zero marks the
    /// degenerate fallback where `rep` was left unnormalized.
    pub act_norm: f64,
}

pub(crate) fn encode_pair_full(
    params: &RaeParams,
    n1: &Array1<f64>,
    n2: &Array1<f64>,
) -> PairEncoding {
    let h = params.h();
    debug_assert_eq!(n1.len(), h);
    debug_assert_eq!(n2.len(), h);

    let a1_left = params.a1.slice(s![.., ..h]);
    let a1_right = params.a1.slice(s![.., h..]);
    let mut z = a1_left.dot(n1) + a1_right.dot(n2);
    z += &params.b1;
    let act = z.mapv(f64::tanh);
    let norm = act.dot(&act).sqrt();
    let (rep, act_norm) = if norm > 0.0 {
        (act / norm, norm)
    } else {
        (act, 0.0)
    };

    let decoded = params.a2.dot(&rep) + &params.b2;
    let mut recon_error = 0.0;
    for i in 0..h {
        let d1 = decoded[i] - n1[i];
        let d2 = decoded[h + i] - n2[i];
        recon_error += d1 * d1 + d2 * d2;
    }

    PairEncoding {
        rep,
        recon_error,
        act_norm,
    }
}

/// Encode an adjacent node pair: the combined representation and the
/// reconstruction error of decoding it back.
pub fn encode_pair(params: &RaeParams, n1: &Array1<f64>, n2: &Array1<f64>) -> (Array1<f64>, f64) {
    let enc = encode_pair_full(params, n1, n2);
    (enc.rep, enc.recon_error)
}

/// Softmax label distribution for a node representation, stabilized by
/// max-subtraction.
pub fn node_predict(params: &RaeParams, rep: &Array1<f64>) -> Array1<f64> {
    let logits = params.a_label.dot(rep);
    softmax(&logits)
}

pub(crate) fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.mapv(|v| (v - max).exp());
    let sum = out.sum();
    out /= sum;
    out
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Leaf {
        /// Vocabulary index of the word at this leaf.
        word: usize,
    },
    Internal {
        left: NodeId,
        right: NodeId,
        recon_error: f64,
        /// Pre-normalization activation norm (see [`PairEncoding`]).
        act_norm: f64,
    },
}

/// One node of a composition tree. Leaves are level 1; an internal
/// node sits one level above its tallest child.
#[derive(Debug, Clone)]
pub struct Node {
    pub kind: NodeKind,
    pub rep: Array1<f64>,
    pub level: u32,
    pub parent: Option<NodeId>,
    /// Inclusive range of leaf positions this node covers.
    pub span: (usize, usize),
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }

    pub fn children(&self) -> Option<(NodeId, NodeId)> {
        match self.kind {
            NodeKind::Internal { left, right, .. } => Some((left, right)),
            NodeKind::Leaf { .. } => None,
        }
    }

    pub fn recon_error(&self) -> Option<f64> {
        match self.kind {
            NodeKind::Internal { recon_error, .. } => Some(recon_error),
            NodeKind::Leaf { .. } => None,
        }
    }
}

/// An ordered forest over one sentence. Leaves occupy arena slots
/// `0..n_leaves` in sentence order; internal nodes follow in merge
/// order, so children always precede their parent in the arena.
#[derive(Debug, Clone)]
pub struct Forest {
    nodes: Vec<Node>,
    roots: Vec<NodeId>,
    n_leaves: usize,
}

impl Forest {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn roots(&self) -> &[NodeId] {
        &self.roots
    }

    pub fn leaf_ids(&self) -> impl Iterator<Item = NodeId> {
        0..self.n_leaves
    }

    pub fn internal_ids(&self) -> impl Iterator<Item = NodeId> {
        self.n_leaves..self.nodes.len()
    }

    /// The other child of this node's parent, if it has a parent.
    pub fn sibling(&self, id: NodeId) -> Option<NodeId> {
        let parent = self.nodes[id].parent?;
        let (left, right) = self.nodes[parent].children().expect("parent is internal");
        Some(if left == id { right } else { left })
    }

    /// Maximum root level; the tree height for a single-root forest.
    pub fn height(&self) -> u32 {
        self.roots
            .iter()
            .map(|&r| self.nodes[r].level)
            .max()
            .unwrap_or(0)
    }

    /// Node ids of the subtree rooted at `top`, ordered left-to-right
    /// then bottom-up.
    pub fn subtree_ids(&self, top: NodeId) -> Vec<NodeId> {
        let mut ids = Vec::new();
        let mut stack = vec![top];
        while let Some(id) = stack.pop() {
            ids.push(id);
            if let Some((l, r)) = self.nodes[id].children() {
                stack.push(l);
                stack.push(r);
            }
        }
        sort_nodes(self, &mut ids);
        ids
    }

    /// Re-run the forward pass through this forest's merge structure
    /// with the given parameters and leaf vectors, leaving the
    /// topology (children, parents, spans, levels) untouched.
    ///
    /// At the parameters the forest was built with, this reproduces
    /// the original representations bitwise; at perturbed parameters
    /// it evaluates the frozen-structure objective.
    pub fn with_recomputed_reps(
        &self,
        params: &RaeParams,
        leaf_reps: &[Array1<f64>],
    ) -> Result<Forest> {
        if leaf_reps.len() != self.n_leaves {
            return Err(RaeError::InvalidArgument(format!(
                "{} leaf vectors for a forest with {} leaves",
                leaf_reps.len(),
                self.n_leaves
            )));
        }
        let mut nodes = self.nodes.clone();
        for (node, rep) in nodes.iter_mut().zip(leaf_reps) {
            node.rep = rep.clone();
        }
        // arena order is merge order: children always come first
        for id in self.n_leaves..nodes.len() {
            let NodeKind::Internal { left, right, .. } = nodes[id].kind else {
                unreachable!("internal slot holds an internal node");
            };
            let enc = encode_pair_full(params, &nodes[left].rep, &nodes[right].rep);
            nodes[id].rep = enc.rep;
            nodes[id].kind = NodeKind::Internal {
                left,
                right,
                recon_error: enc.recon_error,
                act_norm: enc.act_norm,
            };
        }
        Ok(Forest {
            nodes,
            roots: self.roots.clone(),
            n_leaves: self.n_leaves,
        })
    }

    /// Word indices of the leaves, left to right.
    pub fn leaf_words(&self) -> Vec<usize> {
        (0..self.n_leaves)
            .map(|i| match self.nodes[i].kind {
                NodeKind::Leaf { word } => word,
                NodeKind::Internal { .. } => unreachable!("leaf slot holds a leaf"),
            })
            .collect()
    }
}

/// Canonical node order used throughout feature extraction:
/// left-to-right by covered span, bottom-up within a span start.
pub(crate) fn sort_nodes(forest: &Forest, ids: &mut [NodeId]) {
    ids.sort_by_key(|&id| {
        let n = forest.node(id);
        (n.span.0, n.level, id)
    });
}

/// Greedily build a forest over the given leaves.
///
/// At every step, among all adjacent top-node pairs whose merged level
/// would stay within `l_max`, the pair with minimal reconstruction
/// error is autoencoded (leftmost on ties) until no pair is eligible.
/// Unbounded `l_max` always yields a single tree with `2n - 1` nodes.
pub fn build_forest(
    params: &RaeParams,
    leaves: &[Array1<f64>],
    words: &[usize],
    l_max: Cutoff,
) -> Result<Forest> {
    if leaves.is_empty() {
        return Err(RaeError::InvalidArgument(
            "cannot build a forest over zero leaves".into(),
        ));
    }
    if leaves.len() != words.len() {
        return Err(RaeError::InvalidArgument(format!(
            "{} leaf vectors but {} word indices",
            leaves.len(),
            words.len()
        )));
    }
    let h = params.h();
    if let Some(bad) = leaves.iter().find(|l| l.len() != h) {
        return Err(RaeError::InvalidArgument(format!(
            "leaf vector of length {} does not match h = {h}",
            bad.len()
        )));
    }

    let mut nodes: Vec<Node> = leaves
        .iter()
        .zip(words)
        .enumerate()
        .map(|(i, (rep, &word))| Node {
            kind: NodeKind::Leaf { word },
            rep: rep.clone(),
            level: 1,
            parent: None,
            span: (i, i),
        })
        .collect();
    let n_leaves = nodes.len();

    let mut active: Vec<NodeId> = (0..n_leaves).collect();
    // candidates[j] encodes the pair (active[j], active[j+1]);
    // None when the merge would exceed l_max. Eligibility of a pair is
    // fixed for as long as both members stay unmerged.
    let score = |nodes: &[Node], a: NodeId, b: NodeId| -> Option<PairEncoding> {
        let level = nodes[a].level.max(nodes[b].level) + 1;
        l_max
            .allows_level(level)
            .then(|| encode_pair_full(params, &nodes[a].rep, &nodes[b].rep))
    };
    let mut candidates: Vec<Option<PairEncoding>> = active
        .windows(2)
        .map(|w| score(&nodes, w[0], w[1]))
        .collect();

    while active.len() > 1 {
        let mut best: Option<(usize, f64)> = None;
        for (j, cand) in candidates.iter().enumerate() {
            if let Some(enc) = cand {
                // strict < keeps the leftmost minimal pair
                if best.is_none_or(|(_, e)| enc.recon_error < e) {
                    best = Some((j, enc.recon_error));
                }
            }
        }
        let Some((j, _)) = best else { break };

        let enc = candidates[j].take().expect("chosen candidate present");
        let left = active[j];
        let right = active[j + 1];
        let id = nodes.len();
        nodes.push(Node {
            kind: NodeKind::Internal {
                left,
                right,
                recon_error: enc.recon_error,
                act_norm: enc.act_norm,
            },
            rep: enc.rep,
            level: nodes[left].level.max(nodes[right].level) + 1,
            parent: None,
            span: (nodes[left].span.0, nodes[right].span.1),
        });
        nodes[left].parent = Some(id);
        nodes[right].parent = Some(id);

        active[j] = id;
        active.remove(j + 1);
        candidates.remove(j);
        if j > 0 {
            candidates[j - 1] = score(&nodes, active[j - 1], active[j]);
        }
        if j < candidates.len() {
            candidates[j] = score(&nodes, active[j], active[j + 1]);
        }
    }

    Ok(Forest {
        nodes,
        roots: active,
        n_leaves,
    })
}

/// Build the forest for an encoded sentence from its leaf
/// representations.
pub fn forest_for_sentence(
    store: &EmbeddingStore,
    params: &RaeParams,
    words: &[usize],
    use_learned: bool,
    l_max: Cutoff,
) -> Result<Forest> {
    let leaves = words
        .iter()
        .map(|&w| store.leaf_rep(w, use_learned))
        .collect::<Result<Vec<_>>>()?;
    build_forest(params, &leaves, words, l_max)
}

/// Level of a node: 1 for leaves, one above the tallest child
/// otherwise. Levels are computed at construction and stored.
pub fn node_level(node: &Node) -> u32 {
    node.level
}

/// Hand-build a forest with an explicit merge list, for tests that
/// need exact shapes. Internal reps are zero, reconstruction errors
/// zero and activation norms one; structure fields are computed the
/// same way `build_forest` computes them.
#[cfg(test)]
pub(crate) fn test_forest(
    leaf_reps: Vec<Array1<f64>>,
    words: Vec<usize>,
    merges: &[(NodeId, NodeId)],
) -> Forest {
    assert_eq!(leaf_reps.len(), words.len());
    let h = leaf_reps.first().map_or(0, |r| r.len());
    let n_leaves = leaf_reps.len();
    let mut nodes: Vec<Node> = leaf_reps
        .into_iter()
        .zip(words)
        .enumerate()
        .map(|(i, (rep, word))| Node {
            kind: NodeKind::Leaf { word },
            rep,
            level: 1,
            parent: None,
            span: (i, i),
        })
        .collect();
    for &(left, right) in merges {
        let id = nodes.len();
        assert!(nodes[left].parent.is_none() && nodes[right].parent.is_none());
        assert_eq!(
            nodes[left].span.1 + 1,
            nodes[right].span.0,
            "merge must be adjacent"
        );
        nodes.push(Node {
            kind: NodeKind::Internal {
                left,
                right,
                recon_error: 0.0,
                act_norm: 1.0,
            },
            rep: Array1::zeros(h),
            level: nodes[left].level.max(nodes[right].level) + 1,
            parent: None,
            span: (nodes[left].span.0, nodes[right].span.1),
        });
        nodes[left].parent = Some(id);
        nodes[right].parent = Some(id);
    }
    let mut roots: Vec<NodeId> = nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.parent.is_none())
        .map(|(i, _)| i)
        .collect();
    roots.sort_by_key(|&id| nodes[id].span.0);
    Forest {
        nodes,
        roots,
        n_leaves,
    }
}
