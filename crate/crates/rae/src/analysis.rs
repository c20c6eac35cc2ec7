//! Tree diagnostics and export.
//!
//! Two automatic statistics probe what the greedy trees do with
//! function words: how often a polarity reverser's parent flips the
//! class of the reverser's sibling, and how often sentence-final
//! periods merge directly with a neighboring word. Trees can be
//! exported as DOT graphs or line-delimited structured records for
//! human inspection, and a seeded sampler picks annotation candidates
//! by phenomenon.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Vocab, POSITIVE};
use crate::error::{RaeError, Result};
use crate::model::{node_predict, Forest, NodeId, NodeKind, RaeParams};

/// Polarity reversers probed by the reversal statistic. The tokenizer
/// already separates "n't" from its host word.
pub fn default_reversers() -> Vec<String> {
    ["not", "n't", "no", "never"].map(str::to_owned).to_vec()
}

/// Coordinating conjunctions used by the annotation sampler.
pub fn coordination_words() -> Vec<String> {
    ["and", "but", "or"].map(str::to_owned).to_vec()
}

/// Predicted class of a node: argmax of the label distribution, lower
/// index on ties.
pub fn node_class(params: &RaeParams, rep: &ndarray::Array1<f64>) -> usize {
    let probs = node_predict(params, rep);
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// One reverser occurrence: a reverser leaf that has a parent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReversalRecord {
    pub sentence: usize,
    /// Leaf position of the reverser in its sentence.
    pub leaf: NodeId,
    pub word: String,
    pub sibling_class: usize,
    pub parent_class: usize,
    pub reversed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReverserReport {
    pub reversers: Vec<String>,
    pub occurrences: usize,
    pub reversals: usize,
    /// None when there are no occurrences to measure.
    pub rate: Option<f64>,
    pub records: Vec<ReversalRecord>,
}

/// Scan every forest for reverser leaves and test whether sibling and
/// parent receive opposite predicted classes.
pub fn reverser_reversal_rate(
    forests: &[Forest],
    params: &RaeParams,
    vocab: &Vocab,
    reversers: &[String],
) -> ReverserReport {
    let reverser_ids: Vec<usize> = reversers.iter().filter_map(|w| vocab.get(w)).collect();
    let mut records = Vec::new();
    for (sentence, forest) in forests.iter().enumerate() {
        for leaf in forest.leaf_ids() {
            let NodeKind::Leaf { word } = forest.node(leaf).kind else {
                continue;
            };
            if !reverser_ids.contains(&word) {
                continue;
            }
            let Some(parent) = forest.node(leaf).parent else {
                continue;
            };
            let sibling = forest
                .sibling(leaf)
                .expect("leaf with a parent has a sibling");
            let sibling_class = node_class(params, &forest.node(sibling).rep);
            let parent_class = node_class(params, &forest.node(parent).rep);
            records.push(ReversalRecord {
                sentence,
                leaf,
                word: vocab.word(word).to_owned(),
                sibling_class,
                parent_class,
                reversed: sibling_class != parent_class,
            });
        }
    }
    let occurrences = records.len();
    let reversals = records.iter().filter(|r| r.reversed).count();
    ReverserReport {
        reversers: reversers.to_vec(),
        occurrences,
        reversals,
        rate: (occurrences > 0).then(|| reversals as f64 / occurrences as f64),
        records,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodReport {
    /// Period leaves that have a parent.
    pub occurrences: usize,
    /// Of those, how many merged directly with another word.
    pub adjacent: usize,
    /// None when there are no attached periods to measure.
    pub rate: Option<f64>,
}

/// Fraction of attached "." leaves whose first merge partner is itself
/// a single word.
pub fn period_adjacency_rate(forests: &[Forest], vocab: &Vocab) -> PeriodReport {
    let period = vocab.get(".");
    let mut occurrences = 0usize;
    let mut adjacent = 0usize;
    if let Some(period) = period {
        for forest in forests {
            for leaf in forest.leaf_ids() {
                let NodeKind::Leaf { word } = forest.node(leaf).kind else {
                    continue;
                };
                if word != period || forest.node(leaf).parent.is_none() {
                    continue;
                }
                occurrences += 1;
                let sibling = forest
                    .sibling(leaf)
                    .expect("leaf with a parent has a sibling");
                if forest.node(sibling).is_leaf() {
                    adjacent += 1;
                }
            }
        }
    }
    PeriodReport {
        occurrences,
        adjacent,
        rate: (occurrences > 0).then(|| adjacent as f64 / occurrences as f64),
    }
}

/// Mean and maximum tree height over a set of forests (height = the
/// highest root level; leaves count as height 1).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HeightStats {
    pub mean: f64,
    pub max: u32,
}

pub fn height_stats(forests: &[Forest]) -> HeightStats {
    if forests.is_empty() {
        return HeightStats { mean: 0.0, max: 0 };
    }
    let heights: Vec<u32> = forests.iter().map(Forest::height).collect();
    HeightStats {
        mean: heights.iter().map(|&h| h as f64).sum::<f64>() / heights.len() as f64,
        max: heights.iter().copied().max().unwrap_or(0),
    }
}

fn positive_prob(params: &RaeParams, rep: &ndarray::Array1<f64>) -> f64 {
    node_predict(params, rep)[POSITIVE]
}

fn round2(p: f64) -> f64 {
    (p * 100.0).round() / 100.0
}

fn dot_escape(word: &str) -> String {
    word.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Render one forest as a DOT digraph: root at the top, children in
/// sentence order, every node labeled with its positive-class
/// probability (2 decimals) and level, leaves also with their word.
pub fn export_dot(forest: &Forest, params: &RaeParams, vocab: &Vocab) -> String {
    let mut out =
        String::from("digraph rae_tree {\n  graph [ordering=out];\n  node [shape=box];\n");
    for (id, node) in forest.nodes().iter().enumerate() {
        let p = round2(positive_prob(params, &node.rep));
        let label = match node.kind {
            NodeKind::Leaf { word } => {
                format!(
                    "{}\\n{:.2} [{}]",
                    dot_escape(vocab.word(word)),
                    p,
                    node.level
                )
            }
            NodeKind::Internal { .. } => format!("{:.2} [{}]", p, node.level),
        };
        out.push_str(&format!("  n{id} [label=\"{label}\"];\n"));
    }
    for id in forest.internal_ids() {
        let (left, right) = forest.node(id).children().expect("internal node");
        out.push_str(&format!("  n{id} -> n{left};\n  n{id} -> n{right};\n"));
    }
    out.push_str("}\n");
    out
}

/// One node of the structured-record export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNodeRecord {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub children: Option<(usize, usize)>,
    pub level: u32,
    pub span: (usize, usize),
    /// Positive-class probability, rounded to 2 decimals.
    pub prob_positive: f64,
}

/// Structured-record export of one tree; parses back into an
/// isomorphic tree with identical annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    pub words: Vec<String>,
    pub roots: Vec<usize>,
    pub nodes: Vec<TreeNodeRecord>,
}

pub fn tree_record(
    forest: &Forest,
    params: &RaeParams,
    vocab: &Vocab,
    index: usize,
    label: Option<usize>,
) -> TreeRecord {
    let nodes = forest
        .nodes()
        .iter()
        .enumerate()
        .map(|(id, node)| {
            let (word, children) = match node.kind {
                NodeKind::Leaf { word } => (Some(vocab.word(word).to_owned()), None),
                NodeKind::Internal { left, right, .. } => (None, Some((left, right))),
            };
            TreeNodeRecord {
                id,
                word,
                children,
                level: node.level,
                span: node.span,
                prob_positive: round2(positive_prob(params, &node.rep)),
            }
        })
        .collect();
    TreeRecord {
        index,
        label,
        words: forest
            .leaf_words()
            .iter()
            .map(|&w| vocab.word(w).to_owned())
            .collect(),
        roots: forest.roots().to_vec(),
        nodes,
    }
}

/// Write records as line-delimited JSON.
pub fn write_trees_jsonl(mut out: impl Write, records: &[TreeRecord]) -> Result<()> {
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")
            .map_err(|e| RaeError::Format(format!("write failed: {e}")))?;
    }
    Ok(())
}

/// Parse a line-delimited record export back; blank lines are skipped.
pub fn read_trees_jsonl(input: impl BufRead) -> Result<Vec<TreeRecord>> {
    let mut records = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| RaeError::Format(format!("read failed: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

/// Phenomena the annotation sampler selects for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnotationCategory {
    /// Sentences containing a coordinating conjunction.
    Coordination,
    /// Sentences containing a reverser.
    Negation,
    /// Trees with reversers, mixed to mirror the observed reversal
    /// rate (reversing vs non-reversing trees).
    ReverserMix,
}

impl AnnotationCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationCategory::Coordination => "coordination",
            AnnotationCategory::Negation => "negation",
            AnnotationCategory::ReverserMix => "reverser-mix",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationItem {
    pub category: AnnotationCategory,
    pub sentence: usize,
    /// For the reverser mix: whether this tree contains a reversal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reversing: Option<bool>,
}

fn seeded_pick(rng: &mut ChaCha8Rng, candidates: &[usize], n: usize) -> Vec<usize> {
    let k = n.min(candidates.len());
    if k == 0 {
        return Vec::new();
    }
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, candidates.len(), k)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Select annotation candidates per category with a fixed seed.
///
/// Coordination and negation pick sentences containing the trigger
/// words. The reverser mix splits trees containing reversers into
/// reversing and non-reversing ones and samples them in proportion to
/// the observed reversal rate, as far as candidates allow.
pub fn sample_annotations(
    forests: &[Forest],
    params: &RaeParams,
    vocab: &Vocab,
    n_per_category: usize,
    seed: u64,
) -> Vec<AnnotationItem> {
    let contains_any =
        |forest: &Forest, ids: &[usize]| forest.leaf_words().iter().any(|w| ids.contains(w));
    let coord_ids: Vec<usize> = coordination_words()
        .iter()
        .filter_map(|w| vocab.get(w))
        .collect();
    let reverser_words = default_reversers();
    let reverser_ids: Vec<usize> = reverser_words.iter().filter_map(|w| vocab.get(w)).collect();

    let coordination: Vec<usize> = forests
        .iter()
        .enumerate()
        .filter(|(_, f)| contains_any(f, &coord_ids))
        .map(|(i, _)| i)
        .collect();
    let negation: Vec<usize> = forests
        .iter()
        .enumerate()
        .filter(|(_, f)| contains_any(f, &reverser_ids))
        .map(|(i, _)| i)
        .collect();

    let report = reverser_reversal_rate(forests, params, vocab, &reverser_words);
    let mut by_sentence: BTreeMap<usize, bool> = BTreeMap::new();
    for record in &report.records {
        *by_sentence.entry(record.sentence).or_insert(false) |= record.reversed;
    }
    let reversing: Vec<usize> = by_sentence
        .iter()
        .filter(|(_, &r)| r)
        .map(|(&s, _)| s)
        .collect();
    let non_reversing: Vec<usize> = by_sentence
        .iter()
        .filter(|(_, &r)| !r)
        .map(|(&s, _)| s)
        .collect();
    let rate = report.rate.unwrap_or(0.0);
    let want_reversing = ((rate * n_per_category as f64).round() as usize).min(n_per_category);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    for s in seeded_pick(&mut rng, &coordination, n_per_category) {
        items.push(AnnotationItem {
            category: AnnotationCategory::Coordination,
            sentence: s,
            reversing: None,
        });
    }
    for s in seeded_pick(&mut rng, &negation, n_per_category) {
        items.push(AnnotationItem {
            category: AnnotationCategory::Negation,
            sentence: s,
            reversing: None,
        });
    }
    let picked_reversing = seeded_pick(&mut rng, &reversing, want_reversing);
    let picked_non = seeded_pick(
        &mut rng,
        &non_reversing,
        n_per_category - picked_reversing.len(),
    );
    for (pool, flag) in [(picked_reversing, true), (picked_non, false)] {
        for s in pool {
            items.push(AnnotationItem {
                category: AnnotationCategory::ReverserMix,
                sentence: s,
                reversing: Some(flag),
            });
        }
    }
    items
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabeledCorpus, LabeledSentence};
    use crate::model::{forest_for_sentence, init_model, test_forest, Cutoff};
    use ndarray::{array, Array1, Array2};

    fn corpus_of(token_lines: &[&str]) -> (LabeledCorpus, Vocab) {
        let sentences = token_lines
            .iter()
            .enumerate()
            .map(|(i, line)| LabeledSentence {
                tokens: line.split_whitespace().map(str::to_owned).collect(),
                label: i % 2,
            })
            .collect();
        let corpus = LabeledCorpus::from_sentences(sentences).unwrap();
        let vocab = Vocab::build(&corpus).unwrap();
        (corpus, vocab)
    }

    fn identity_params() -> RaeParams {
        RaeParams {
            a1: Array2::zeros((2, 4)),
            b1: Array1::zeros(2),
            a2: Array2::zeros((4, 2)),
            b2: Array1::zeros(4),
            a_label: array![[1.0, 0.0], [0.0, 1.0]],
        }
    }

    #[test]
    fn reversal_counting_on_hand_built_trees() {
        let (_, vocab) = corpus_of(&["not bad", "not good", "not"]);
        let params = identity_params();
        let not = vocab.get("not").unwrap();
        let bad = vocab.get("bad").unwrap();
        let good = vocab.get("good").unwrap();

        // sibling leans class 1, internal parent (zero rep) ties to
        // class 0: a reversal
        let reversed = test_forest(
            vec![array![0.0, 0.0], array![0.0, 2.0]],
            vec![not, bad],
            &[(0, 1)],
        );
        // sibling leans class 0, parent class 0: no reversal
        let straight = test_forest(
            vec![array![0.0, 0.0], array![3.0, 0.0]],
            vec![not, good],
            &[(0, 1)],
        );
        // bare reverser has no parent: not an occurrence
        let bare = test_forest(vec![array![0.0, 0.0]], vec![not], &[]);

        let forests = vec![reversed, straight, bare];
        let report = reverser_reversal_rate(&forests, &params, &vocab, &default_reversers());
        assert_eq!(report.occurrences, 2);
        assert_eq!(report.reversals, 1);
        assert_eq!(report.rate, Some(0.5));
        assert_eq!(report.records.len(), 2);
        let first = &report.records[0];
        assert_eq!(first.word, "not");
        assert_eq!(first.sentence, 0);
        assert_eq!(first.sibling_class, 1);
        assert_eq!(first.parent_class, 0);
        assert!(first.reversed);
        assert!(!report.records[1].reversed);
    }

    #[test]
    fn no_occurrences_flagged_not_errored() {
        let (_, vocab) = corpus_of(&["good movie"]);
        let f = test_forest(
            vec![array![1.0, 0.0], array![0.0, 1.0]],
            vec![0, 1],
            &[(0, 1)],
        );
        let report = reverser_reversal_rate(&[f], &identity_params(), &vocab, &default_reversers());
        assert_eq!(report.occurrences, 0);
        assert_eq!(report.rate, None);
    }

    #[test]
    fn reversal_report_ignores_logit_scale() {
        let (_, vocab) = corpus_of(&["never dull fun", "no fun at"]);
        let (store, params) = init_model(vocab.len(), 3, 2, 12, 0.4).unwrap();
        let encoded = vocab.encode_corpus(&corpus_of(&["never dull fun", "no fun at"]).0);
        let forests: Vec<Forest> = encoded
            .iter()
            .map(|s| {
                forest_for_sentence(&store, &params, &s.words, true, Cutoff::Unbounded).unwrap()
            })
            .collect();
        let base = reverser_reversal_rate(&forests, &params, &vocab, &default_reversers());
        let mut scaled = params.clone();
        scaled.a_label *= 7.3;
        let rescaled = reverser_reversal_rate(&forests, &scaled, &vocab, &default_reversers());
        assert_eq!(base.records, rescaled.records);
        assert_eq!(base.occurrences, 2);
    }

    #[test]
    fn occurrence_counts_match_an_independent_scan() {
        let lines = &[
            "not a bad journey at all .",
            "never dull and never slow .",
            "plain fun .",
            "no",
        ];
        let (corpus, vocab) = corpus_of(lines);
        let (store, params) = init_model(vocab.len(), 4, 2, 3, 0.4).unwrap();
        let encoded = vocab.encode_corpus(&corpus);
        let forests: Vec<Forest> = encoded
            .iter()
            .map(|s| {
                forest_for_sentence(&store, &params, &s.words, true, Cutoff::Unbounded).unwrap()
            })
            .collect();

        let reversers = default_reversers();
        let expected: usize = lines
            .iter()
            .filter(|l| l.split_whitespace().count() > 1)
            .map(|l| {
                l.split_whitespace()
                    .filter(|t| reversers.contains(&t.to_string()))
                    .count()
            })
            .sum();
        let report = reverser_reversal_rate(&forests, &params, &vocab, &reversers);
        assert_eq!(report.occurrences, expected);
        assert_eq!(expected, 3); // "not", two "never"; bare "no" is a root

        let periods = period_adjacency_rate(&forests, &vocab);
        assert_eq!(periods.occurrences, 3);

        // fully capped forests have no parents at all
        let flat: Vec<Forest> = encoded
            .iter()
            .map(|s| {
                forest_for_sentence(&store, &params, &s.words, true, Cutoff::Finite(1)).unwrap()
            })
            .collect();
        let report = reverser_reversal_rate(&flat, &params, &vocab, &reversers);
        assert_eq!(report.occurrences, 0);
    }

    #[test]
    fn period_adjacency_cases() {
        let (_, vocab) = corpus_of(&["good .", "a b ."]);
        let dot = vocab.get(".").unwrap();
        let good = vocab.get("good").unwrap();
        let a = vocab.get("a").unwrap();
        let b = vocab.get("b").unwrap();
        let zeros = || array![0.0, 0.0];

        // "good ." merges directly: adjacent
        let direct = test_forest(vec![zeros(), zeros()], vec![good, dot], &[(0, 1)]);
        let r = period_adjacency_rate(std::slice::from_ref(&direct), &vocab);
        assert_eq!((r.occurrences, r.adjacent, r.rate), (1, 1, Some(1.0)));

        // "." merges with the internal (a b) node: not adjacent
        let indirect = test_forest(
            vec![zeros(), zeros(), zeros()],
            vec![a, b, dot],
            &[(0, 1), (3, 2)],
        );
        let r = period_adjacency_rate(std::slice::from_ref(&indirect), &vocab);
        assert_eq!((r.occurrences, r.adjacent, r.rate), (1, 0, Some(0.0)));

        let r = period_adjacency_rate(&[direct, indirect], &vocab);
        assert_eq!(r.rate, Some(0.5));

        // no periods anywhere
        let none = test_forest(vec![zeros()], vec![good], &[]);
        assert_eq!(period_adjacency_rate(&[none], &vocab).rate, None);
    }

    #[test]
    fn height_statistics() {
        let zeros = || array![0.0, 0.0];
        let tall = test_forest(
            vec![zeros(), zeros(), zeros()],
            vec![0, 1, 2],
            &[(0, 1), (3, 2)],
        ); // height 3
        let flat = test_forest(vec![zeros(), zeros()], vec![0, 1], &[(0, 1)]); // height 2
        let single = test_forest(vec![zeros()], vec![0], &[]); // height 1
        let stats = height_stats(&[tall, flat, single]);
        assert_eq!(stats.max, 3);
        assert!((stats.mean - 2.0).abs() < 1e-12);
        assert_eq!(height_stats(&[]).max, 0);
    }

    #[test]
    fn dot_export_shape_and_escaping() {
        let (_, vocab) = corpus_of(&[r#"say "hi\" now"#]);
        let single = test_forest(vec![array![0.0, 0.0]], vec![vocab.get("say").unwrap()], &[]);
        let dot = export_dot(&single, &identity_params(), &vocab);
        assert!(dot.contains("ordering=out"));
        assert!(dot.contains("n0 [label=\"say\\n0.50 [1]\"]"));
        assert!(!dot.contains("->"));

        let quoted = test_forest(
            vec![array![0.0, 0.0], array![0.0, 0.0]],
            vec![vocab.get(r#""hi\""#).unwrap(), vocab.get("now").unwrap()],
            &[(0, 1)],
        );
        let dot = export_dot(&quoted, &identity_params(), &vocab);
        assert!(dot.contains(r#"\"hi\\\""#));
        assert!(dot.contains("n2 -> n0"));
        assert!(dot.contains("n2 -> n1"));
        assert!(dot.contains("[2]")); // parent level rendered
    }

    #[test]
    fn structured_records_round_trip() {
        let lines = &["not a bad journey at all .", "good ."];
        let (corpus, vocab) = corpus_of(lines);
        let (store, params) = init_model(vocab.len(), 4, 2, 9, 0.4).unwrap();
        let encoded = vocab.encode_corpus(&corpus);
        let records: Vec<TreeRecord> = encoded
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let f = forest_for_sentence(&store, &params, &s.words, true, Cutoff::Unbounded)
                    .unwrap();
                tree_record(&f, &params, &vocab, i, Some(s.label))
            })
            .collect();
        assert_eq!(records[0].words.len(), 7);
        assert_eq!(records[0].nodes.len(), 13);
        assert_eq!(records[0].roots.len(), 1);
        for n in &records[0].nodes {
            // probabilities are exported pre-rounded
            let scaled = n.prob_positive * 100.0;
            assert!((scaled - scaled.round()).abs() < 1e-9);
            match (&n.word, n.children) {
                (Some(_), None) => assert_eq!(n.level, 1),
                (None, Some((l, r))) => assert!(l < n.id && r < n.id),
                other => panic!("node is neither leaf nor internal: {other:?}"),
            }
        }

        let mut buf = Vec::new();
        write_trees_jsonl(&mut buf, &records).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 2);
        let back = read_trees_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn annotation_sampler_is_seeded_and_on_topic() {
        let lines = &[
            "not a bad journey at all .",
            "slow and dull but heartfelt .",
            "never fun or funny .",
            "plain good .",
            "no charm at all .",
            "works well and never drags .",
        ];
        let (corpus, vocab) = corpus_of(lines);
        let (store, params) = init_model(vocab.len(), 4, 2, 21, 0.4).unwrap();
        let encoded = vocab.encode_corpus(&corpus);
        let forests: Vec<Forest> = encoded
            .iter()
            .map(|s| {
                forest_for_sentence(&store, &params, &s.words, true, Cutoff::Unbounded).unwrap()
            })
            .collect();

        let items = sample_annotations(&forests, &params, &vocab, 2, 7);
        let again = sample_annotations(&forests, &params, &vocab, 2, 7);
        assert_eq!(items, again);

        let coord: Vec<_> = items
            .iter()
            .filter(|i| i.category == AnnotationCategory::Coordination)
            .collect();
        assert_eq!(coord.len(), 2);
        for item in &coord {
            let tokens: Vec<&str> = lines[item.sentence].split_whitespace().collect();
            assert!(tokens.iter().any(|t| ["and", "but", "or"].contains(t)));
        }
        let negation: Vec<_> = items
            .iter()
            .filter(|i| i.category == AnnotationCategory::Negation)
            .collect();
        assert_eq!(negation.len(), 2);
        for item in &negation {
            let tokens: Vec<&str> = lines[item.sentence].split_whitespace().collect();
            assert!(tokens
                .iter()
                .any(|t| ["not", "n't", "no", "never"].contains(t)));
        }

        // mix flags agree with a fresh per-tree reversal grouping
        let report = reverser_reversal_rate(&forests, &params, &vocab, &default_reversers());
        for item in items
            .iter()
            .filter(|i| i.category == AnnotationCategory::ReverserMix)
        {
            let tree_reverses = report
                .records
                .iter()
                .filter(|r| r.sentence == item.sentence)
                .any(|r| r.reversed);
            assert_eq!(item.reversing, Some(tree_reverses));
        }
    }
}
