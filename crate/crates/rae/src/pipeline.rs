//! Feature extraction, the downstream classifier and the ablation
//! grid.
//!
//! Every ablation cell follows the same shape: pick a set of nodes (or
//! words) per sentence, average their representations into one fixed
//! vector, fit a softmax classifier on the training split and score it
//! on the test split. The modes differ only in where the trees come
//! from and which nodes survive.

use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::EncodedSentence;
use crate::error::{RaeError, Result};
use crate::lbfgs::{self, LbfgsConfig};
use crate::model::{
    forest_for_sentence, softmax, Cutoff, EmbeddingStore, Forest, NodeId, RaeParams,
};
use crate::simplify::{
    central_word, default_thresholds, largest_subtree, level_cut, subtree_nodes, window_indices,
    AblationMode, AblationSpec,
};
use crate::training::{train, TrainConfig, CE_FLOOR};

/// One sentence reduced to a single vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SentenceFeature {
    pub vector: Array1<f64>,
    pub label: usize,
    /// The grid cell this feature was extracted for, when it came from
    /// the ablation harness.
    pub source: Option<AblationSpec>,
}

/// Mean representation over the given nodes.
pub fn mean_feature(forest: &Forest, ids: &[NodeId]) -> Result<Array1<f64>> {
    let first = ids
        .first()
        .ok_or_else(|| RaeError::InvalidArgument("cannot average zero nodes".into()))?;
    let mut sum = forest.node(*first).rep.clone();
    for &id in &ids[1..] {
        sum += &forest.node(id).rep;
    }
    Ok(sum / ids.len() as f64)
}

/// Build one forest per sentence, in order.
pub fn build_forests(
    store: &EmbeddingStore,
    params: &RaeParams,
    sentences: &[EncodedSentence],
    use_learned: bool,
    l_max: Cutoff,
) -> Result<Vec<Forest>> {
    sentences
        .par_iter()
        .map(|s| forest_for_sentence(store, params, &s.words, use_learned, l_max))
        .collect()
}

/// Extract one feature per sentence from prebuilt forests.
///
/// `use_gold_central` lets subtree and window modes locate the central
/// word with the sentence's own label (training split); without it the
/// most confident leaf under any class is used (test split).
pub fn features_from_forests(
    forests: &[Forest],
    sentences: &[EncodedSentence],
    params: &RaeParams,
    spec: AblationSpec,
    use_gold_central: bool,
) -> Result<Vec<SentenceFeature>> {
    if forests.len() != sentences.len() {
        return Err(RaeError::InvalidArgument(format!(
            "{} forests for {} sentences",
            forests.len(),
            sentences.len()
        )));
    }
    forests
        .iter()
        .zip(sentences)
        .map(|(forest, sentence)| {
            let gold = use_gold_central.then_some(sentence.label);
            let ids: Vec<NodeId> = match spec.mode {
                AblationMode::ExtractCut | AblationMode::TrainCut | AblationMode::NoEmbed => {
                    level_cut(forest, spec.threshold)
                }
                AblationMode::Subtree => {
                    let center = central_word(forest, params, gold);
                    let top = largest_subtree(forest, center, spec.threshold)?;
                    subtree_nodes(forest, top)
                }
                AblationMode::Window => {
                    let center = central_word(forest, params, gold);
                    window_indices(forest.n_leaves(), center, spec.threshold)?.collect()
                }
            };
            Ok(SentenceFeature {
                vector: mean_feature(forest, &ids)?,
                label: sentence.label,
                source: Some(spec),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    /// L2 strength on the weight matrix (bias unregularized).
    pub lambda: f64,
    pub max_iterations: usize,
    pub memory: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            max_iterations: 300,
            memory: 10,
        }
    }
}

/// Linear softmax classifier over sentence features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SoftmaxClassifier {
    /// C x d weight matrix.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl SoftmaxClassifier {
    pub fn predict(&self, x: &Array1<f64>) -> Array1<f64> {
        let logits = self.weights.dot(x) + &self.bias;
        softmax(&logits)
    }

    /// Most probable class; ties go to the lower index.
    pub fn predict_class(&self, x: &Array1<f64>) -> usize {
        let probs = self.predict(x);
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Fit the softmax classifier by L-BFGS from a zero start. The
/// objective (mean cross-entropy plus L2 on the weights) is convex, so
/// the start point is immaterial beyond determinism.
pub fn train_classifier(
    features: &[SentenceFeature],
    n_classes: usize,
    config: &ClassifierConfig,
) -> Result<SoftmaxClassifier> {
    let first = features.first().ok_or_else(|| {
        RaeError::InvalidArgument("cannot fit a classifier to zero features".into())
    })?;
    let d = first.vector.len();
    if n_classes < 2 {
        return Err(RaeError::InvalidArgument(
            "need at least two classes".into(),
        ));
    }
    for (i, f) in features.iter().enumerate() {
        if f.vector.len() != d {
            return Err(RaeError::InvalidArgument(format!(
                "feature {i} has dimension {}, expected {d}",
                f.vector.len()
            )));
        }
        if f.label >= n_classes {
            return Err(RaeError::InvalidArgument(format!(
                "feature {i} has label {} but the classifier has {n_classes} classes",
                f.label
            )));
        }
    }
    let seen = features
        .iter()
        .map(|f| f.label)
        .collect::<std::collections::HashSet<_>>();
    if seen.len() < 2 {
        return Err(RaeError::InvalidArgument(
            "all features share one label; the classifier would be degenerate".into(),
        ));
    }

    let n = features.len() as f64;
    let unpack = |flat: &Array1<f64>| -> (Array2<f64>, Array1<f64>) {
        let data = flat.as_slice().expect("contiguous");
        let weights = Array2::from_shape_vec((n_classes, d), data[..n_classes * d].to_vec())
            .expect("block sized to shape");
        let bias = Array1::from_vec(data[n_classes * d..].to_vec());
        (weights, bias)
    };

    let objective = |flat: &Array1<f64>| {
        let (weights, bias) = unpack(flat);
        let mut value = 0.0;
        let mut g_w = Array2::<f64>::zeros((n_classes, d));
        let mut g_b = Array1::<f64>::zeros(n_classes);
        for f in features {
            let logits = weights.dot(&f.vector) + &bias;
            let probs = softmax(&logits);
            value += -probs[f.label].max(CE_FLOOR).ln();
            let mut g = probs;
            g[f.label] -= 1.0;
            for (c, &gc) in g.iter().enumerate() {
                if gc != 0.0 {
                    g_w.row_mut(c).scaled_add(gc, &f.vector);
                }
            }
            g_b += &g;
        }
        value /= n;
        g_w /= n;
        g_b /= n;
        value += config.lambda * weights.iter().map(|v| v * v).sum::<f64>();
        g_w.scaled_add(2.0 * config.lambda, &weights);

        let mut flat_g = Vec::with_capacity(flat.len());
        flat_g.extend(g_w.iter());
        flat_g.extend(g_b.iter());
        (value, Array1::from_vec(flat_g))
    };

    let lbfgs_config = LbfgsConfig {
        max_iterations: config.max_iterations,
        memory: config.memory,
        grad_tol: 1e-9,
        ..LbfgsConfig::default()
    };
    let solution = lbfgs::minimize(
        objective,
        Array1::zeros(n_classes * d + n_classes),
        &lbfgs_config,
        |_, _, _, _| true,
    );
    let (weights, bias) = unpack(&solution.x);
    Ok(SoftmaxClassifier { weights, bias })
}

/// Fraction of features whose predicted class matches the label.
pub fn evaluate_accuracy(
    classifier: &SoftmaxClassifier,
    features: &[SentenceFeature],
) -> Result<f64> {
    if features.is_empty() {
        return Err(RaeError::InvalidArgument(
            "cannot score zero features".into(),
        ));
    }
    let correct = features
        .iter()
        .filter(|f| classifier.predict_class(&f.vector) == f.label)
        .count();
    Ok(correct as f64 / features.len() as f64)
}

/// How no-embed mode obtains tree structure once the learned offsets
/// are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoEmbedTopology {
    /// Re-run the greedy builder on the base-vector leaves.
    #[default]
    Rebuild,
    /// Keep the merge structure found with learned leaves and only
    /// recompute the representations.
    Keep,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub modes: Vec<AblationMode>,
    pub thresholds: Vec<Cutoff>,
    pub no_embed_topology: NoEmbedTopology,
    pub classifier: ClassifierConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            modes: AblationMode::ALL.to_vec(),
            thresholds: default_thresholds(),
            no_embed_topology: NoEmbedTopology::default(),
            classifier: ClassifierConfig::default(),
        }
    }
}

/// One grid cell outcome: a test accuracy, or the error that stopped
/// the cell (other cells keep going).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultCell {
    pub spec: AblationSpec,
    pub accuracy: Option<f64>,
    pub error: Option<String>,
}

/// Accuracy grid over modes x thresholds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultTable {
    pub modes: Vec<AblationMode>,
    pub thresholds: Vec<Cutoff>,
    /// Row-major over (mode, threshold).
    pub cells: Vec<ResultCell>,
}

impl ResultTable {
    pub fn get(&self, mode: AblationMode, threshold: Cutoff) -> Option<&ResultCell> {
        let i = self.modes.iter().position(|&m| m == mode)?;
        let j = self.thresholds.iter().position(|&t| t == threshold)?;
        self.cells.get(i * self.thresholds.len() + j)
    }

    /// Tab-separated rendering with accuracies as percentages.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("mode");
        for t in &self.thresholds {
            write!(out, "\t{t}").unwrap();
        }
        out.push('\n');
        for (i, mode) in self.modes.iter().enumerate() {
            out.push_str(mode.as_str());
            for j in 0..self.thresholds.len() {
                let cell = &self.cells[i * self.thresholds.len() + j];
                match cell.accuracy {
                    Some(acc) => write!(out, "\t{:.2}", acc * 100.0).unwrap(),
                    None => out.push_str("\tERR"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// A trained model plus everything needed to re-derive one.
pub struct AblationInputs<'a> {
    pub store: &'a EmbeddingStore,
    pub params: &'a RaeParams,
    pub train_sentences: &'a [EncodedSentence],
    pub test_sentences: &'a [EncodedSentence],
    pub vocab_size: usize,
    pub train_config: &'a TrainConfig,
}

/// Run the full ablation grid.
///
/// Per-cell failures are captured in the table rather than aborting
/// the sweep; a missing prerequisite (for example an empty split)
/// fails the whole run.
pub fn run_ablation(inputs: &AblationInputs<'_>, config: &AblationConfig) -> Result<ResultTable> {
    if config.modes.is_empty() || config.thresholds.is_empty() {
        return Err(RaeError::Config(
            "ablation needs at least one mode and one threshold".into(),
        ));
    }
    let store = inputs.store;
    let params = inputs.params;

    let full_train = build_forests(
        store,
        params,
        inputs.train_sentences,
        true,
        Cutoff::Unbounded,
    )?;
    let full_test = build_forests(
        store,
        params,
        inputs.test_sentences,
        true,
        Cutoff::Unbounded,
    )?;

    let no_embed = if config.modes.contains(&AblationMode::NoEmbed) {
        let pair = match config.no_embed_topology {
            NoEmbedTopology::Rebuild => (
                build_forests(
                    store,
                    params,
                    inputs.train_sentences,
                    false,
                    Cutoff::Unbounded,
                )?,
                build_forests(
                    store,
                    params,
                    inputs.test_sentences,
                    false,
                    Cutoff::Unbounded,
                )?,
            ),
            NoEmbedTopology::Keep => {
                let recompute =
                    |forests: &[Forest], sentences: &[EncodedSentence]| -> Result<Vec<Forest>> {
                        forests
                            .iter()
                            .zip(sentences)
                            .map(|(f, s)| {
                                let leaves = s
                                    .words
                                    .iter()
                                    .map(|&w| store.leaf_rep(w, false))
                                    .collect::<Result<Vec<_>>>()?;
                                f.with_recomputed_reps(params, &leaves)
                            })
                            .collect()
                    };
                (
                    recompute(&full_train, inputs.train_sentences)?,
                    recompute(&full_test, inputs.test_sentences)?,
                )
            }
        };
        Some(pair)
    } else {
        None
    };

    let mut cells = Vec::with_capacity(config.modes.len() * config.thresholds.len());
    for &mode in &config.modes {
        for &threshold in &config.thresholds {
            let spec = AblationSpec { mode, threshold };
            let outcome = run_cell(
                inputs,
                config,
                spec,
                &full_train,
                &full_test,
                no_embed.as_ref(),
            );
            cells.push(match outcome {
                Ok(accuracy) => ResultCell {
                    spec,
                    accuracy: Some(accuracy),
                    error: None,
                },
                Err(e) => ResultCell {
                    spec,
                    accuracy: None,
                    error: Some(e.to_string()),
                },
            });
        }
    }

    Ok(ResultTable {
        modes: config.modes.clone(),
        thresholds: config.thresholds.clone(),
        cells,
    })
}

fn run_cell(
    inputs: &AblationInputs<'_>,
    config: &AblationConfig,
    spec: AblationSpec,
    full_train: &[Forest],
    full_test: &[Forest],
    no_embed: Option<&(Vec<Forest>, Vec<Forest>)>,
) -> Result<f64> {
    let n_classes = inputs.params.n_classes();
    let (train_features, test_features) = match spec.mode {
        AblationMode::ExtractCut | AblationMode::Subtree | AblationMode::Window => (
            features_from_forests(
                full_train,
                inputs.train_sentences,
                inputs.params,
                spec,
                true,
            )?,
            features_from_forests(full_test, inputs.test_sentences, inputs.params, spec, false)?,
        ),
        AblationMode::NoEmbed => {
            let (ftr, fte) = no_embed.expect("no-embed forests prepared for this mode");
            (
                features_from_forests(ftr, inputs.train_sentences, inputs.params, spec, true)?,
                features_from_forests(fte, inputs.test_sentences, inputs.params, spec, false)?,
            )
        }
        AblationMode::TrainCut => {
            // retrain with the threshold as the level cap; identical
            // caps reuse the base model, which the same seed would
            // reproduce anyway
            let retrained = if spec.threshold == inputs.train_config.l_max_train {
                None
            } else {
                let cut_config = TrainConfig {
                    l_max_train: spec.threshold,
                    ..inputs.train_config.clone()
                };
                Some(train(
                    inputs.train_sentences,
                    inputs.vocab_size,
                    &cut_config,
                )?)
            };
            let (store, params) = match &retrained {
                Some(o) => (&o.store, &o.params),
                None => (inputs.store, inputs.params),
            };
            let ftr = build_forests(store, params, inputs.train_sentences, true, spec.threshold)?;
            let fte = build_forests(store, params, inputs.test_sentences, true, spec.threshold)?;
            (
                features_from_forests(&ftr, inputs.train_sentences, params, spec, true)?,
                features_from_forests(&fte, inputs.test_sentences, params, spec, false)?,
            )
        }
    };

    let classifier = train_classifier(&train_features, n_classes, &config.classifier)?;
    evaluate_accuracy(&classifier, &test_features)
}
