//! Joint objective, analytic gradients and the batch trainer.
//!
//! The objective over a batch is
//!
//! ```text
//! E = alpha * rec_sum / N_rec + (1 - alpha) * cl_sum / N_cl + reg
//! ```
//!
//! where `rec_sum` totals reconstruction errors over internal nodes,
//! `cl_sum` totals cross-entropies over all nodes (leaves weighted 1,
//! internal nodes weighted `beta`), `N_rec` counts internal nodes,
//! `N_cl` counts all nodes, and `reg` is an L2 penalty on the weight
//! matrices and the learned embedding offsets (biases excluded).
//!
//! Gradients flow through the trees exactly as built: each evaluation
//! rebuilds the forests greedily at the current parameters and
//! differentiates the objective with that structure held fixed. The
//! batch is processed in fixed-size chunks whose partial sums are
//! folded in order, so results are bitwise reproducible regardless of
//! thread count.

use std::cell::RefCell;
use std::time::Instant;

use ndarray::{s, Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::EncodedSentence;
use crate::error::{RaeError, Result};
use crate::lbfgs::{self, LbfgsConfig, StopReason};
use crate::model::{
    forest_for_sentence, init_model, node_predict, Cutoff, EmbeddingStore, Forest, NodeKind,
    RaeParams, DEFAULT_INIT_SCALE,
};

/// Probabilities below this are clamped before taking the log; inside
/// the clamped region the classification gradient is zero.
pub const CE_FLOOR: f64 = 1e-12;

const GRAD_TOL: f64 = 1e-8;

/// Sentences per parallel work unit. Partial results are combined in
/// chunk order, which pins the floating-point reduction order.
const CHUNK: usize = 256;

/// Hyperparameters of the joint training objective.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Hidden (and embedding) dimensionality.
    pub h: usize,
    /// Number of label classes.
    pub n_classes: usize,
    /// Weight on the reconstruction term; 1 - alpha goes to
    /// classification.
    pub alpha: f64,
    /// Cross-entropy weight of internal nodes (leaves weigh 1).
    pub beta: f64,
    /// L2 strength on A1, A2 and the label layer.
    pub lambda_params: f64,
    /// L2 strength on the learned embedding offsets.
    pub lambda_embed: f64,
    /// Level cap applied when building trees during training.
    pub l_max_train: Cutoff,
    pub max_iterations: usize,
    /// L-BFGS history length.
    pub memory: usize,
    /// Half-width of the uniform init of the fixed base vectors.
    pub init_scale: f64,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            h: 50,
            n_classes: 2,
            alpha: 0.2,
            beta: 0.5,
            lambda_params: 1e-5,
            lambda_embed: 1e-4,
            l_max_train: Cutoff::Unbounded,
            max_iterations: 70,
            memory: 10,
            init_scale: DEFAULT_INIT_SCALE,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(RaeError::Config(msg.into()));
        if self.h == 0 {
            return fail("h must be at least 1");
        }
        if self.n_classes < 2 {
            return fail("n_classes must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail("alpha must lie in [0, 1]");
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return fail("beta must be finite and nonnegative");
        }
        if self.lambda_params < 0.0 || self.lambda_embed < 0.0 {
            return fail("regularization strengths must be nonnegative");
        }
        if self.max_iterations == 0 {
            return fail("max_iterations must be at least 1");
        }
        if self.memory == 0 {
            return fail("memory must be at least 1");
        }
        if !self.init_scale.is_finite() || self.init_scale <= 0.0 {
            return fail("init_scale must be positive");
        }
        Ok(())
    }
}

/// Decomposition of one objective evaluation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub total: f64,
    /// Mean reconstruction error per internal node (0 when there are
    /// no internal nodes).
    pub rec_mean: f64,
    /// Mean weighted cross-entropy per node.
    pub cl_mean: f64,
    pub reg: f64,
    pub n_rec: usize,
    pub n_cl: usize,
}

/// Gradient block matching every learned quantity.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub a1: Array2<f64>,
    pub b1: Array1<f64>,
    pub a2: Array2<f64>,
    pub b2: Array1<f64>,
    pub a_label: Array2<f64>,
    pub l: Array2<f64>,
}

impl Gradients {
    fn zeros(layout: ParamLayout) -> Self {
        let (v, h, c) = (layout.vocab_size, layout.h, layout.n_classes);
        Self {
            a1: Array2::zeros((h, 2 * h)),
            b1: Array1::zeros(h),
            a2: Array2::zeros((2 * h, h)),
            b2: Array1::zeros(2 * h),
            a_label: Array2::zeros((c, h)),
            l: Array2::zeros((v, h)),
        }
    }

    fn merge(&mut self, other: &Gradients) {
        self.a1 += &other.a1;
        self.b1 += &other.b1;
        self.a2 += &other.a2;
        self.b2 += &other.b2;
        self.a_label += &other.a_label;
        self.l += &other.l;
    }
}

/// Fixed flattening order for the optimizer: A1, b1, A2, b2, A_label,
/// then L, each in row-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub vocab_size: usize,
    pub h: usize,
    pub n_classes: usize,
}

impl ParamLayout {
    pub fn of(store: &EmbeddingStore, params: &RaeParams) -> Self {
        Self {
            vocab_size: store.vocab_size(),
            h: params.h(),
            n_classes: params.n_classes(),
        }
    }

    pub fn len(&self) -> usize {
        let (v, h, c) = (self.vocab_size, self.h, self.n_classes);
        h * 2 * h + h + 2 * h * h + 2 * h + c * h + v * h
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pack(&self, params: &RaeParams, l: &Array2<f64>) -> Array1<f64> {
        let mut flat = Vec::with_capacity(self.len());
        flat.extend(params.a1.iter());
        flat.extend(params.b1.iter());
        flat.extend(params.a2.iter());
        flat.extend(params.b2.iter());
        flat.extend(params.a_label.iter());
        flat.extend(l.iter());
        debug_assert_eq!(flat.len(), self.len());
        Array1::from_vec(flat)
    }

    pub fn pack_grads(&self, g: &Gradients) -> Array1<f64> {
        let mut flat = Vec::with_capacity(self.len());
        flat.extend(g.a1.iter());
        flat.extend(g.b1.iter());
        flat.extend(g.a2.iter());
        flat.extend(g.b2.iter());
        flat.extend(g.a_label.iter());
        flat.extend(g.l.iter());
        Array1::from_vec(flat)
    }

    pub fn unpack(&self, flat: &Array1<f64>) -> Result<(RaeParams, Array2<f64>)> {
        if flat.len() != self.len() {
            return Err(RaeError::InvalidArgument(format!(
                "flat vector of length {} does not match layout length {}",
                flat.len(),
                self.len()
            )));
        }
        let (v, h, c) = (self.vocab_size, self.h, self.n_classes);
        let data = flat.as_slice().expect("flat vector is contiguous");
        let mut at = 0usize;
        let mut take2 = |rows: usize, cols: usize| -> Array2<f64> {
            let block = &data[at..at + rows * cols];
            at += rows * cols;
            Array2::from_shape_vec((rows, cols), block.to_vec()).expect("block sized to shape")
        };
        let a1 = take2(h, 2 * h);
        let b1 = Array1::from_vec(data[at..at + h].to_vec());
        at += h;
        let a2 = {
            let block = &data[at..at + 2 * h * h];
            at += 2 * h * h;
            Array2::from_shape_vec((2 * h, h), block.to_vec()).expect("block sized to shape")
        };
        let b2 = Array1::from_vec(data[at..at + 2 * h].to_vec());
        at += 2 * h;
        let a_label = {
            let block = &data[at..at + c * h];
            at += c * h;
            Array2::from_shape_vec((c, h), block.to_vec()).expect("block sized to shape")
        };
        let l = {
            let block = &data[at..at + v * h];
            at += v * h;
            Array2::from_shape_vec((v, h), block.to_vec()).expect("block sized to shape")
        };
        debug_assert_eq!(at, self.len());
        Ok((
            RaeParams {
                a1,
                b1,
                a2,
                b2,
                a_label,
            },
            l,
        ))
    }
}

pub(crate) struct SentenceTerms {
    pub rec_sum: f64,
    pub cl_sum: f64,
    pub n_rec: usize,
    pub n_cl: usize,
}

/// Raw objective terms of one forest: reconstruction sum over internal
/// nodes and the weighted cross-entropy sum over all nodes.
pub(crate) fn forest_terms(
    forest: &Forest,
    label: usize,
    params: &RaeParams,
    beta: f64,
) -> SentenceTerms {
    let mut rec_sum = 0.0;
    let mut cl_sum = 0.0;
    for node in forest.nodes() {
        let weight = if node.is_leaf() { 1.0 } else { beta };
        let probs = node_predict(params, &node.rep);
        cl_sum += -probs[label].max(CE_FLOOR).ln() * weight;
        if let Some(err) = node.recon_error() {
            rec_sum += err;
        }
    }
    SentenceTerms {
        rec_sum,
        cl_sum,
        n_rec: forest.len() - forest.n_leaves(),
        n_cl: forest.len(),
    }
}

fn sq_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().map(|v| v * v).sum()
}

fn regularization(params: &RaeParams, l: &Array2<f64>, config: &TrainConfig) -> f64 {
    config.lambda_params
        * (sq_sum(params.a1.iter().copied())
            + sq_sum(params.a2.iter().copied())
            + sq_sum(params.a_label.iter().copied()))
        + config.lambda_embed * sq_sum(l.iter().copied())
}

fn totals_to_value(
    rec_sum: f64,
    cl_sum: f64,
    n_rec: usize,
    n_cl: usize,
    reg: f64,
    alpha: f64,
) -> ObjectiveValue {
    let rec_mean = if n_rec > 0 {
        rec_sum / n_rec as f64
    } else {
        0.0
    };
    let cl_mean = if n_cl > 0 { cl_sum / n_cl as f64 } else { 0.0 };
    ObjectiveValue {
        total: alpha * rec_mean + (1.0 - alpha) * cl_mean + reg,
        rec_mean,
        cl_mean,
        reg,
        n_rec,
        n_cl,
    }
}

fn check_batch(
    sentences: &[EncodedSentence],
    store: &EmbeddingStore,
    params: &RaeParams,
) -> Result<()> {
    if sentences.is_empty() {
        return Err(RaeError::InvalidArgument(
            "cannot evaluate an empty batch".into(),
        ));
    }
    let v = store.vocab_size();
    let c = params.n_classes();
    for (i, s) in sentences.iter().enumerate() {
        if s.words.is_empty() {
            return Err(RaeError::InvalidArgument(format!(
                "sentence {i} has no words"
            )));
        }
        if let Some(&w) = s.words.iter().find(|&&w| w >= v) {
            return Err(RaeError::InvalidArgument(format!(
                "sentence {i} references word index {w}, vocabulary has {v}"
            )));
        }
        if s.label >= c {
            return Err(RaeError::InvalidArgument(format!(
                "sentence {i} has label {} but the model has {c} classes",
                s.label
            )));
        }
    }
    Ok(())
}

/// Objective value only (no gradients). Forests are built greedily at
/// the given parameters.
pub fn batch_value(
    store: &EmbeddingStore,
    params: &RaeParams,
    sentences: &[EncodedSentence],
    config: &TrainConfig,
) -> Result<ObjectiveValue> {
    check_batch(sentences, store, params)?;
    let stats = sentences
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = (0.0f64, 0.0f64, 0usize, 0usize);
            for s in chunk {
                let forest =
                    forest_for_sentence(store, params, &s.words, true, config.l_max_train)?;
                let t = forest_terms(&forest, s.label, params, config.beta);
                acc.0 += t.rec_sum;
                acc.1 += t.cl_sum;
                acc.2 += t.n_rec;
                acc.3 += t.n_cl;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let (rec_sum, cl_sum, n_rec, n_cl) = stats.into_iter().fold((0.0, 0.0, 0, 0), |a, b| {
        (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3)
    });
    Ok(totals_to_value(
        rec_sum,
        cl_sum,
        n_rec,
        n_cl,
        regularization(params, &store.l, config),
        config.alpha,
    ))
}

fn add_outer(m: &mut Array2<f64>, u: &Array1<f64>, v: &Array1<f64>) {
    for (i, &ui) in u.iter().enumerate() {
        if ui != 0.0 {
            m.row_mut(i).scaled_add(ui, v);
        }
    }
}

/// Backpropagate one sentence's scaled objective terms through its
/// forest. `kappa_rec` and `kappa_cl` fold in the objective weights
/// and the batch-level denominators.
fn sentence_backward(
    forest: &Forest,
    label: usize,
    params: &RaeParams,
    kappa_rec: f64,
    kappa_cl: f64,
    beta: f64,
    grads: &mut Gradients,
) {
    let h = params.h();
    let a1_left = params.a1.slice(s![.., ..h]);
    let a1_right = params.a1.slice(s![.., h..]);
    let mut deltas: Vec<Array1<f64>> = vec![Array1::zeros(h); forest.len()];

    // reverse arena order puts every parent before its children, so a
    // node's delta is complete by the time it is processed
    for id in (0..forest.len()).rev() {
        let node = forest.node(id);
        let rep = &node.rep;

        if kappa_cl != 0.0 {
            let probs = node_predict(params, rep);
            if probs[label] > CE_FLOOR {
                let weight = if node.is_leaf() { 1.0 } else { beta };
                let mut g_logits = probs;
                g_logits[label] -= 1.0;
                g_logits *= kappa_cl * weight;
                add_outer(&mut grads.a_label, &g_logits, rep);
                deltas[id] += &params.a_label.t().dot(&g_logits);
            }
        }

        match node.kind {
            NodeKind::Internal {
                left,
                right,
                act_norm,
                ..
            } => {
                if kappa_rec != 0.0 {
                    let decoded = params.a2.dot(rep) + &params.b2;
                    let mut g_dec = decoded;
                    for i in 0..h {
                        g_dec[i] -= forest.node(left).rep[i];
                        g_dec[h + i] -= forest.node(right).rep[i];
                    }
                    g_dec *= 2.0 * kappa_rec;
                    add_outer(&mut grads.a2, &g_dec, rep);
                    grads.b2 += &g_dec;
                    deltas[id] += &params.a2.t().dot(&g_dec);
                    // reconstruction targets are the children themselves
                    for i in 0..h {
                        deltas[left][i] -= g_dec[i];
                        deltas[right][i] -= g_dec[h + i];
                    }
                }

                let delta_r = &deltas[id];
                let mut delta_a = if act_norm > 0.0 {
                    let along = rep.dot(delta_r);
                    (delta_r - &(along * rep)) / act_norm
                } else {
                    delta_r.clone()
                };
                // tanh'(z) = 1 - a^2 where a = rep * act_norm (a = rep
                // in the degenerate zero-norm case)
                for i in 0..h {
                    let a = if act_norm > 0.0 {
                        rep[i] * act_norm
                    } else {
                        rep[i]
                    };
                    delta_a[i] *= 1.0 - a * a;
                }
                let delta_z = delta_a;
                grads.b1 += &delta_z;
                let left_rep = &forest.node(left).rep;
                let right_rep = &forest.node(right).rep;
                for (i, &dz) in delta_z.iter().enumerate() {
                    if dz != 0.0 {
                        let mut row = grads.a1.row_mut(i);
                        row.slice_mut(s![..h]).scaled_add(dz, left_rep);
                        row.slice_mut(s![h..]).scaled_add(dz, right_rep);
                    }
                }
                deltas[left] += &a1_left.t().dot(&delta_z);
                deltas[right] += &a1_right.t().dot(&delta_z);
            }
            NodeKind::Leaf { word } => {
                grads.l.row_mut(word).scaled_add(1.0, &deltas[id]);
            }
        }
    }
}

/// Objective value and full analytic gradient over a batch.
///
/// Two passes: the first builds every forest to fix the batch
/// denominators, the second rebuilds them (deterministically identical)
/// and accumulates scaled gradients.
pub fn batch_objective(
    store: &EmbeddingStore,
    params: &RaeParams,
    sentences: &[EncodedSentence],
    config: &TrainConfig,
) -> Result<(ObjectiveValue, Gradients)> {
    let value = batch_value(store, params, sentences, config)?;
    let alpha = config.alpha;
    let kappa_rec = if value.n_rec > 0 {
        alpha / value.n_rec as f64
    } else {
        0.0
    };
    let kappa_cl = if value.n_cl > 0 {
        (1.0 - alpha) / value.n_cl as f64
    } else {
        0.0
    };
    let layout = ParamLayout::of(store, params);

    let parts = sentences
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = Gradients::zeros(layout);
            for s in chunk {
                let forest =
                    forest_for_sentence(store, params, &s.words, true, config.l_max_train)?;
                sentence_backward(
                    &forest,
                    s.label,
                    params,
                    kappa_rec,
                    kappa_cl,
                    config.beta,
                    &mut grads,
                );
            }
            Ok(grads)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grads = Gradients::zeros(layout);
    for part in &parts {
        grads.merge(part);
    }

    let two_lp = 2.0 * config.lambda_params;
    if two_lp != 0.0 {
        grads.a1.scaled_add(two_lp, &params.a1);
        grads.a2.scaled_add(two_lp, &params.a2);
        grads.a_label.scaled_add(two_lp, &params.a_label);
    }
    if config.lambda_embed != 0.0 {
        grads.l.scaled_add(2.0 * config.lambda_embed, &store.l);
    }
    Ok((value, grads))
}

/// Objective value at `flat` with every forest's merge structure held
/// fixed: leaf and internal representations are recomputed bottom-up
/// through the stored topology instead of re-running the greedy search.
fn frozen_batch_value(
    w: &Array2<f64>,
    forests: &[(Forest, usize)],
    layout: &ParamLayout,
    flat: &Array1<f64>,
    config: &TrainConfig,
) -> f64 {
    let (params, l) = layout.unpack(flat).expect("layout matches flat vector");
    let store = EmbeddingStore::new(w.clone(), l).expect("W and L shapes agree");
    let mut rec_sum = 0.0;
    let mut cl_sum = 0.0;
    let mut n_rec = 0usize;
    let mut n_cl = 0usize;
    for (forest, label) in forests {
        let leaf_reps: Vec<Array1<f64>> = forest
            .leaf_words()
            .iter()
            .map(|&wd| store.leaf_rep(wd, true).expect("word in range"))
            .collect();
        let redone = forest
            .with_recomputed_reps(&params, &leaf_reps)
            .expect("leaf count unchanged");
        let t = forest_terms(&redone, *label, &params, config.beta);
        rec_sum += t.rec_sum;
        cl_sum += t.cl_sum;
        n_rec += t.n_rec;
        n_cl += t.n_cl;
    }
    totals_to_value(
        rec_sum,
        cl_sum,
        n_rec,
        n_cl,
        regularization(&params, &store.l, config),
        config.alpha,
    )
    .total
}

/// Outcome of comparing analytic gradients against central finite
/// differences on frozen tree structures.
#[derive(Debug, Clone, Serialize)]
pub struct FdReport {
    pub n_checked: usize,
    pub max_rel_dev: f64,
    pub mean_rel_dev: f64,
    /// Flat parameter index where the worst deviation occurred.
    pub worst_coord: usize,
    pub grad_norm: f64,
}

/// Compare the analytic batch gradient against central finite
/// differences of the frozen-structure objective.
///
/// The analytic gradient differentiates the objective with tree
/// structures fixed at the evaluation point, so the comparison holds
/// the greedy merge order constant too; this keeps the check exact
/// even when a perturbation would flip a near-tie in the greedy
/// search. Checks every coordinate, or a seeded sample of
/// `max_coords` when given.
pub fn finite_diff_check(
    store: &EmbeddingStore,
    params: &RaeParams,
    sentences: &[EncodedSentence],
    config: &TrainConfig,
    epsilon: f64,
    max_coords: Option<usize>,
    sample_seed: u64,
) -> Result<FdReport> {
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(RaeError::InvalidArgument("epsilon must be positive".into()));
    }
    let (_, grads) = batch_objective(store, params, sentences, config)?;
    let layout = ParamLayout::of(store, params);
    let flat = layout.pack(params, &store.l);
    let analytic = layout.pack_grads(&grads);

    let forests: Vec<(Forest, usize)> = sentences
        .iter()
        .map(|s| {
            forest_for_sentence(store, params, &s.words, true, config.l_max_train)
                .map(|f| (f, s.label))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = flat.len();
    let coords: Vec<usize> = match max_coords {
        Some(m) if m < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
            let mut picked = rand::seq::index::sample(&mut rng, n, m).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..n).collect(),
    };

    let mut max_rel = 0.0f64;
    let mut sum_rel = 0.0f64;
    let mut worst = 0usize;
    let mut probe = flat.clone();
    for &i in &coords {
        let base = flat[i];
        probe[i] = base + epsilon;
        let f_plus = frozen_batch_value(store.w(), &forests, &layout, &probe, config);
        probe[i] = base - epsilon;
        let f_minus = frozen_batch_value(store.w(), &forests, &layout, &probe, config);
        probe[i] = base;
        let numeric = (f_plus - f_minus) / (2.0 * epsilon);
        let rel = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-8);
        sum_rel += rel;
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }

    Ok(FdReport {
        n_checked: coords.len(),
        max_rel_dev: max_rel,
        mean_rel_dev: if coords.is_empty() {
            0.0
        } else {
            sum_rel / coords.len() as f64
        },
        worst_coord: worst,
        grad_norm: analytic.dot(&analytic).sqrt(),
    })
}

/// A small random model-plus-batch instance for gradient checking:
/// dimensions, sentences, level cap and objective weights all vary
/// with the seed, and the learned offsets are non-zero so every
/// parameter block is exercised.
pub fn random_check_instance(
    seed: u64,
    max_h: usize,
    max_len: usize,
) -> Result<(EmbeddingStore, RaeParams, Vec<EncodedSentence>, TrainConfig)> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.random_range(2..=max_h.max(2));
    let vocab_size = rng.random_range(3..=8);
    let n_sentences = rng.random_range(2..=4);
    let sentences: Vec<EncodedSentence> = (0..n_sentences)
        .map(|_| {
            let len = rng.random_range(1..=max_len.max(1));
            EncodedSentence {
                words: (0..len).map(|_| rng.random_range(0..vocab_size)).collect(),
                label: rng.random_range(0..2),
            }
        })
        .collect();
    let l_max_train = match rng.random_range(0..3) {
        0 => Cutoff::Unbounded,
        1 => Cutoff::Finite(2),
        _ => Cutoff::Finite(3),
    };
    let config = TrainConfig {
        h,
        alpha: if rng.random_range(0..2) == 0 {
            0.2
        } else {
            0.5
        },
        beta: 0.5,
        lambda_params: 1e-4,
        lambda_embed: 1e-3,
        l_max_train,
        seed,
        ..TrainConfig::default()
    };
    let (mut store, params) = init_model(vocab_size, h, config.n_classes, seed, 0.4)?;
    for v in store.l.iter_mut() {
        *v = rng.random_range(-0.3..0.3);
    }
    Ok((store, params, sentences, config))
}

/// One accepted optimizer step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub total: f64,
    pub rec_mean: f64,
    pub cl_mean: f64,
    pub reg: f64,
    pub grad_norm: f64,
    /// Wall-clock time since training started. Excluded from
    /// reproducibility comparisons.
    pub wall_time_ms: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub store: EmbeddingStore,
    pub params: RaeParams,
    pub log: Vec<IterationRecord>,
    pub stop: StopReason,
    pub value: f64,
    pub grad_norm: f64,
    pub n_evals: usize,
}

/// Train the full model on encoded sentences with L-BFGS.
pub fn train(
    sentences: &[EncodedSentence],
    vocab_size: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (store, params) = init_model(
        vocab_size,
        config.h,
        config.n_classes,
        config.seed,
        config.init_scale,
    )?;
    check_batch(sentences, &store, &params)?;

    let layout = ParamLayout::of(&store, &params);
    let x0 = layout.pack(&params, &store.l);
    let w = store.w().clone();

    let last_value: RefCell<Option<ObjectiveValue>> = RefCell::new(None);
    let log: RefCell<Vec<IterationRecord>> = RefCell::new(Vec::new());
    let started = Instant::now();

    let objective = |x: &Array1<f64>| {
        let (p, l) = layout
            .unpack(x)
            .expect("optimizer preserves the layout length");
        let s = EmbeddingStore::new(w.clone(), l).expect("W and L shapes agree");
        let (value, grads) =
            batch_objective(&s, &p, sentences, config).expect("batch validated before training");
        *last_value.borrow_mut() = Some(value);
        (value.total, layout.pack_grads(&grads))
    };
    let on_iter = |k: usize, total: f64, grad_norm: f64, _x: &Array1<f64>| {
        let parts = last_value.borrow().expect("objective ran before callback");
        log.borrow_mut().push(IterationRecord {
            iteration: k,
            total,
            rec_mean: parts.rec_mean,
            cl_mean: parts.cl_mean,
            reg: parts.reg,
            grad_norm,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        true
    };

    let lbfgs_config = LbfgsConfig {
        max_iterations: config.max_iterations,
        memory: config.memory,
        grad_tol: GRAD_TOL,
        ..LbfgsConfig::default()
    };
    let solution = lbfgs::minimize(objective, x0, &lbfgs_config, on_iter);

    let (final_params, final_l) = layout.unpack(&solution.x)?;
    let final_store = EmbeddingStore::new(w, final_l)?;
    Ok(TrainOutcome {
        store: final_store,
        params: final_params,
        log: log.into_inner(),
        stop: solution.reason,
        value: solution.value,
        grad_norm: solution.grad_norm,
        n_evals: solution.n_evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Cutoff;

    fn toy_config(h: usize) -> TrainConfig {
        TrainConfig {
            h,
            alpha: 0.2,
            beta: 0.5,
            lambda_params: 1e-4,
            lambda_embed: 1e-3,
            ..TrainConfig::default()
        }
    }

    fn toy_sentences() -> Vec<EncodedSentence> {
        vec![
            EncodedSentence {
                words: vec![0, 1, 2, 3],
                label: 0,
            },
            EncodedSentence {
                words: vec![2, 2, 4],
                label: 1,
            },
            EncodedSentence {
                words: vec![4],
                label: 1,
            },
            EncodedSentence {
                words: vec![1, 0],
                label: 0,
            },
        ]
    }

    fn toy_model(h: usize, seed: u64) -> (EmbeddingStore, RaeParams) {
        let (store, params) = init_model(5, h, 2, seed, 0.4).unwrap();
        (store, params)
    }

    #[test]
    fn layout_pack_unpack_round_trip() {
        let (store, params) = toy_model(3, 11);
        let layout = ParamLayout::of(&store, &params);
        assert_eq!(layout.len(), 3 * 6 + 3 + 6 * 3 + 6 + 2 * 3 + 5 * 3);
        let flat = layout.pack(&params, &store.l);
        assert_eq!(flat.len(), layout.len());
        let (p2, l2) = layout.unpack(&flat).unwrap();
        assert_eq!(p2.a1, params.a1);
        assert_eq!(p2.b1, params.b1);
        assert_eq!(p2.a2, params.a2);
        assert_eq!(p2.b2, params.b2);
        assert_eq!(p2.a_label, params.a_label);
        assert_eq!(l2, store.l);
        assert!(layout.unpack(&Array1::zeros(layout.len() + 1)).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (store, params) = toy_model(3, 21);
        let config = toy_config(3);
        let report =
            finite_diff_check(&store, &params, &toy_sentences(), &config, 1e-6, None, 0).unwrap();
        assert!(report.n_checked == ParamLayout::of(&store, &params).len());
        assert!(
            report.max_rel_dev < 1e-5,
            "max relative deviation {} at coord {}",
            report.max_rel_dev,
            report.worst_coord
        );
    }

    #[test]
    fn gradient_matches_fd_with_level_caps() {
        let (store, params) = toy_model(3, 33);
        for cap in [Cutoff::Finite(1), Cutoff::Finite(2)] {
            let config = TrainConfig {
                l_max_train: cap,
                ..toy_config(3)
            };
            let report =
                finite_diff_check(&store, &params, &toy_sentences(), &config, 1e-6, None, 1)
                    .unwrap();
            assert!(
                report.max_rel_dev < 1e-5,
                "cap {cap}: {}",
                report.max_rel_dev
            );
        }
    }

    #[test]
    fn gradient_matches_fd_at_alpha_extremes() {
        let (store, params) = toy_model(2, 5);
        for alpha in [0.0, 1.0] {
            let config = TrainConfig {
                alpha,
                ..toy_config(2)
            };
            let report =
                finite_diff_check(&store, &params, &toy_sentences(), &config, 1e-6, None, 2)
                    .unwrap();
            assert!(
                report.max_rel_dev < 1e-5,
                "alpha {alpha}: {}",
                report.max_rel_dev
            );
        }
    }

    #[test]
    fn alpha_one_kills_label_gradient() {
        let (store, params) = toy_model(3, 9);
        let config = TrainConfig {
            alpha: 1.0,
            lambda_params: 0.0,
            lambda_embed: 0.0,
            ..toy_config(3)
        };
        let (_, grads) = batch_objective(&store, &params, &toy_sentences(), &config).unwrap();
        assert!(grads.a_label.iter().all(|&g| g == 0.0));
        assert!(grads.a1.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn alpha_zero_kills_decoder_gradient() {
        let (store, params) = toy_model(3, 9);
        let config = TrainConfig {
            alpha: 0.0,
            lambda_params: 0.0,
            lambda_embed: 0.0,
            ..toy_config(3)
        };
        let (value, grads) = batch_objective(&store, &params, &toy_sentences(), &config).unwrap();
        assert!(grads.a2.iter().all(|&g| g == 0.0));
        assert!(grads.b2.iter().all(|&g| g == 0.0));
        assert!(grads.a_label.iter().any(|&g| g != 0.0));
        assert_eq!(value.total, value.cl_mean);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        // guards the checker itself: a wrong analytic value must show up
        let (store, params) = toy_model(2, 17);
        let config = toy_config(2);
        let sentences = toy_sentences();
        let (_, grads) = batch_objective(&store, &params, &sentences, &config).unwrap();
        let layout = ParamLayout::of(&store, &params);
        let flat = layout.pack(&params, &store.l);
        let analytic = layout.pack_grads(&grads);
        let forests: Vec<(Forest, usize)> = sentences
            .iter()
            .map(|s| {
                (
                    forest_for_sentence(&store, &params, &s.words, true, config.l_max_train)
                        .unwrap(),
                    s.label,
                )
            })
            .collect();

        let coord = 1; // inside the A1 block
        let eps = 1e-6;
        let mut probe = flat.clone();
        probe[coord] += eps;
        let f_plus = frozen_batch_value(store.w(), &forests, &layout, &probe, &config);
        probe[coord] = flat[coord] - eps;
        let f_minus = frozen_batch_value(store.w(), &forests, &layout, &probe, &config);
        let numeric = (f_plus - f_minus) / (2.0 * eps);

        let rel = |a: f64, b: f64| (a - b).abs() / (a.abs() + b.abs()).max(1e-8);
        assert!(rel(analytic[coord], numeric) < 1e-6);
        assert!(rel(analytic[coord] + 1e-3, numeric) > 1e-4);
    }

    #[test]
    fn duplicating_a_sentence_preserves_means() {
        let (store, params) = toy_model(3, 29);
        let config = toy_config(3);
        let one = vec![toy_sentences().swap_remove(0)];
        let two = vec![one[0].clone(), one[0].clone()];
        let (v1, g1) = batch_objective(&store, &params, &one, &config).unwrap();
        let (v2, g2) = batch_objective(&store, &params, &two, &config).unwrap();
        assert!((v1.total - v2.total).abs() < 1e-14);
        assert_eq!(v2.n_rec, 2 * v1.n_rec);
        let f1 = ParamLayout::of(&store, &params).pack_grads(&g1);
        let f2 = ParamLayout::of(&store, &params).pack_grads(&g2);
        for (a, b) in f1.iter().zip(f2.iter()) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn leaf_only_batch_has_no_reconstruction_term() {
        let (store, params) = toy_model(3, 7);
        let config = toy_config(3);
        let singles: Vec<EncodedSentence> = (0..4)
            .map(|w| EncodedSentence {
                words: vec![w],
                label: w % 2,
            })
            .collect();
        let (value, grads) = batch_objective(&store, &params, &singles, &config).unwrap();
        assert_eq!(value.n_rec, 0);
        assert_eq!(value.rec_mean, 0.0);
        // decoder gradient is regularization only
        let expected = 2.0 * config.lambda_params * &params.a2;
        assert!(grads
            .a2
            .iter()
            .zip(expected.iter())
            .all(|(a, b)| (a - b).abs() < 1e-15));
        let report = finite_diff_check(&store, &params, &singles, &config, 1e-6, None, 3).unwrap();
        assert!(report.max_rel_dev < 1e-5);
    }

    #[test]
    fn batch_rejects_bad_input() {
        let (store, params) = toy_model(2, 2);
        let config = toy_config(2);
        assert!(batch_value(&store, &params, &[], &config).is_err());
        let bad_word = vec![EncodedSentence {
            words: vec![99],
            label: 0,
        }];
        assert!(batch_value(&store, &params, &bad_word, &config).is_err());
        let bad_label = vec![EncodedSentence {
            words: vec![0],
            label: 2,
        }];
        assert!(batch_value(&store, &params, &bad_label, &config).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            alpha: 1.5,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            h: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            memory: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn training_reduces_the_objective_deterministically() {
        let config = TrainConfig {
            h: 4,
            max_iterations: 15,
            seed: 3,
            ..toy_config(4)
        };
        let sentences = toy_sentences();
        let run1 = train(&sentences, 5, &config).unwrap();
        let run2 = train(&sentences, 5, &config).unwrap();
        assert!(!run1.log.is_empty());
        assert!(run1.log.last().unwrap().total < run1.log.first().unwrap().total);
        for w in run1.log.windows(2) {
            assert!(w[1].total <= w[0].total);
        }
        assert_eq!(run1.log.len(), run2.log.len());
        for (a, b) in run1.log.iter().zip(&run2.log) {
            assert_eq!(a.total, b.total);
            assert_eq!(a.grad_norm, b.grad_norm);
        }
        assert_eq!(run1.params.a1, run2.params.a1);
        assert_eq!(run1.store.l, run2.store.l);
    }
}
