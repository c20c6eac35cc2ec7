//! Sentence-polarity corpus loading, vocabulary construction and
//! deterministic train/test splits.
//!
//! Input files follow the published polarity-data v1.0 layout: one
//! pre-tokenized, whitespace-separated sentence per line, one file per
//! label. No re-tokenization is performed beyond the whitespace split.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{RaeError, Result};

/// Reserved token that out-of-vocabulary words map to.
pub const UNKNOWN_TOKEN: &str = "*UNKNOWN*";

pub const NEGATIVE: usize = 0;
pub const POSITIVE: usize = 1;

/// A tokenized sentence with its binary sentiment label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub tokens: Vec<String>,
    /// 0 = negative, 1 = positive.
    pub label: usize,
}

/// A collection of labeled sentences with per-label counts.
#[derive(Debug, Clone, Default)]
pub struct LabeledCorpus {
    sentences: Vec<LabeledSentence>,
    counts: [usize; 2],
}

impl LabeledCorpus {
    pub fn from_sentences(sentences: Vec<LabeledSentence>) -> Result<Self> {
        let mut counts = [0usize; 2];
        for s in &sentences {
            if s.tokens.is_empty() {
                return Err(RaeError::Format("sentence with no tokens".into()));
            }
            if s.label > 1 {
                return Err(RaeError::Format(format!("label {} out of range", s.label)));
            }
            counts[s.label] += 1;
        }
        Ok(Self { sentences, counts })
    }

    pub fn sentences(&self) -> &[LabeledSentence] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Number of sentences per label, indexed by label.
    pub fn label_counts(&self) -> [usize; 2] {
        self.counts
    }

    pub fn stats(&self) -> CorpusStats {
        let lengths: Vec<usize> = self.sentences.iter().map(|s| s.tokens.len()).collect();
        let total: usize = lengths.iter().sum();
        CorpusStats {
            sentences: self.len(),
            label_counts: self.counts,
            mean_length: if lengths.is_empty() {
                0.0
            } else {
                total as f64 / lengths.len() as f64
            },
            max_length: lengths.iter().copied().max().unwrap_or(0),
        }
    }

    /// Line-delimited dump of `{label, tokens[]}` records for inspection.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for s in &self.sentences {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")
                .map_err(|e| RaeError::Format(format!("write failed: {e}")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub label_counts: [usize; 2],
    pub mean_length: f64,
    pub max_length: usize,
}

/// Result of [`load_polarity`]: the corpus plus a skipped-line count.
#[derive(Debug, Clone)]
pub struct PolarityLoad {
    pub corpus: LabeledCorpus,
    /// Empty lines encountered and skipped across both files.
    pub skipped_lines: usize,
}

fn read_label_file(path: &Path, label: usize) -> Result<(Vec<LabeledSentence>, usize)> {
    let bytes = std::fs::read(path).map_err(|e| RaeError::io(path, e))?;
    // The published data is not valid UTF-8 throughout; replace bad bytes.
    let text = String::from_utf8_lossy(&bytes);
    let mut sentences = Vec::new();
    let mut skipped = 0usize;
    for line in text.lines() {
        let tokens: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
        if tokens.is_empty() {
            skipped += 1;
            continue;
        }
        sentences.push(LabeledSentence { tokens, label });
    }
    if sentences.is_empty() {
        return Err(RaeError::Format(format!(
            "{} contains no sentences",
            path.display()
        )));
    }
    Ok((sentences, skipped))
}

/// Load the two polarity files (positive first, then negative), keeping
/// line order within each file.
pub fn load_polarity(
    pos_path: impl AsRef<Path>,
    neg_path: impl AsRef<Path>,
) -> Result<PolarityLoad> {
    let (mut sentences, skipped_pos) = read_label_file(pos_path.as_ref(), POSITIVE)?;
    let (neg, skipped_neg) = read_label_file(neg_path.as_ref(), NEGATIVE)?;
    sentences.extend(neg);
    Ok(PolarityLoad {
        corpus: LabeledCorpus::from_sentences(sentences)?,
        skipped_lines: skipped_pos + skipped_neg,
    })
}

/// Deterministic shuffled split. `|train| = round(train_fraction * N)`;
/// the two halves partition the corpus.
pub fn split_corpus(
    corpus: &LabeledCorpus,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledCorpus, LabeledCorpus)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(RaeError::InvalidArgument(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = corpus.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let train_n = (train_fraction * n as f64).round() as usize;
    let take = |ids: &[usize]| -> Result<LabeledCorpus> {
        LabeledCorpus::from_sentences(ids.iter().map(|&i| corpus.sentences[i].clone()).collect())
    };
    Ok((take(&order[..train_n])?, take(&order[train_n..])?))
}

/// Word/index bijection with a reserved unknown slot.
///
/// Built from the training split only; any token absent from the map
/// (test-only words included) resolves to [`UNKNOWN_TOKEN`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index_by_word: HashMap<String, usize>,
    unknown_index: usize,
}

impl Vocab {
    /// Index every distinct training token by first occurrence, then
    /// append the unknown token.
    pub fn build(train: &LabeledCorpus) -> Result<Self> {
        if train.is_empty() {
            return Err(RaeError::InvalidArgument(
                "cannot build a vocabulary from an empty corpus".into(),
            ));
        }
        let mut words = Vec::new();
        let mut index_by_word = HashMap::new();
        for sentence in train.sentences() {
            for token in &sentence.tokens {
                if !index_by_word.contains_key(token) {
                    index_by_word.insert(token.clone(), words.len());
                    words.push(token.clone());
                }
            }
        }
        let unknown_index = match index_by_word.get(UNKNOWN_TOKEN) {
            Some(&i) => i,
            None => {
                index_by_word.insert(UNKNOWN_TOKEN.to_owned(), words.len());
                words.push(UNKNOWN_TOKEN.to_owned());
                words.len() - 1
            }
        };
        Ok(Self {
            words,
            index_by_word,
            unknown_index,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn unknown_index(&self) -> usize {
        self.unknown_index
    }

    /// Total lookup: unseen words map to the unknown index.
    pub fn lookup(&self, word: &str) -> usize {
        self.index_by_word
            .get(word)
            .copied()
            .unwrap_or(self.unknown_index)
    }

    /// Lookup without the unknown fallback.
    pub fn get(&self, word: &str) -> Option<usize> {
        self.index_by_word.get(word).copied()
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn encode(&self, sentence: &LabeledSentence) -> EncodedSentence {
        EncodedSentence {
            words: sentence.tokens.iter().map(|t| self.lookup(t)).collect(),
            label: sentence.label,
        }
    }

    pub fn encode_corpus(&self, corpus: &LabeledCorpus) -> Vec<EncodedSentence> {
        corpus.sentences().iter().map(|s| self.encode(s)).collect()
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = RaeError;

    fn try_from(words: Vec<String>) -> Result<Self> {
        let mut index_by_word = HashMap::new();
        for (i, w) in words.iter().enumerate() {
            if index_by_word.insert(w.clone(), i).is_some() {
                return Err(RaeError::Format(format!("duplicate vocabulary word {w:?}")));
            }
        }
        let unknown_index = *index_by_word
            .get(UNKNOWN_TOKEN)
            .ok_or_else(|| RaeError::Format("vocabulary is missing the unknown token".into()))?;
        Ok(Self {
            words,
            index_by_word,
            unknown_index,
        })
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

/// A sentence after vocabulary lookup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSentence {
    pub words: Vec<usize>,
    pub label: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f.flush().unwrap();
        f
    }

    fn sentence(text: &str, label: usize) -> LabeledSentence {
        LabeledSentence {
            tokens: text.split_whitespace().map(str::to_owned).collect(),
            label,
        }
    }

    #[test]
    fn load_two_one_line_files() {
        let pos = write_lines(&["a fine film ."]);
        let neg = write_lines(&["a dull film ."]);
        let load = load_polarity(pos.path(), neg.path()).unwrap();
        assert_eq!(load.corpus.len(), 2);
        assert_eq!(load.corpus.label_counts(), [1, 1]);
        assert_eq!(load.skipped_lines, 0);
        // positive file first, order preserved
        assert_eq!(load.corpus.sentences()[0].label, POSITIVE);
        assert_eq!(load.corpus.sentences()[0].tokens[1], "fine");
    }

    #[test]
    fn load_skips_empty_lines_with_warning_count() {
        let pos = write_lines(&["good", "", "great"]);
        let neg = write_lines(&["bad"]);
        let load = load_polarity(pos.path(), neg.path()).unwrap();
        assert_eq!(load.corpus.len(), 3);
        assert_eq!(load.skipped_lines, 1);
    }

    #[test]
    fn load_missing_file_is_io_error() {
        let pos = write_lines(&["x"]);
        let err = load_polarity(pos.path(), "/nonexistent/rt.neg").unwrap_err();
        assert!(matches!(err, RaeError::Io { .. }));
    }

    #[test]
    fn load_empty_file_is_format_error() {
        let pos = write_lines(&["x"]);
        let neg = write_lines(&["", ""]);
        let err = load_polarity(pos.path(), neg.path()).unwrap_err();
        assert!(matches!(err, RaeError::Format(_)));
    }

    #[test]
    fn load_replaces_non_utf8_bytes() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"caf\xe9 scene .\n").unwrap();
        f.flush().unwrap();
        let neg = write_lines(&["bad"]);
        let load = load_polarity(f.path(), neg.path()).unwrap();
        assert_eq!(load.corpus.sentences()[0].tokens.len(), 3);
        assert!(load.corpus.sentences()[0].tokens[0].contains('\u{FFFD}'));
    }

    #[test]
    fn split_sizes_round() {
        let sentences: Vec<_> = (0..10).map(|i| sentence(&format!("w{i}"), i % 2)).collect();
        let corpus = LabeledCorpus::from_sentences(sentences).unwrap();
        let (train, test) = split_corpus(&corpus, 0.9, 1).unwrap();
        assert_eq!(train.len(), 9);
        assert_eq!(test.len(), 1);

        let two = LabeledCorpus::from_sentences(vec![sentence("a", 0), sentence("b", 1)]).unwrap();
        let (tr, te) = split_corpus(&two, 0.5, 123).unwrap();
        assert_eq!((tr.len(), te.len()), (1, 1));
    }

    #[test]
    fn split_is_deterministic_and_a_partition() {
        let sentences: Vec<_> = (0..50)
            .map(|i| sentence(&format!("tok{i} x"), i % 2))
            .collect();
        let corpus = LabeledCorpus::from_sentences(sentences).unwrap();
        let (a1, b1) = split_corpus(&corpus, 0.8, 7).unwrap();
        let (a2, b2) = split_corpus(&corpus, 0.8, 7).unwrap();
        assert_eq!(a1.sentences(), a2.sentences());
        assert_eq!(b1.sentences(), b2.sentences());

        // multiset equality with the original
        let mut all: Vec<_> = a1.sentences().to_vec();
        all.extend(b1.sentences().to_vec());
        let orig: HashSet<_> = corpus.sentences().iter().cloned().collect();
        let got: HashSet<_> = all.iter().cloned().collect();
        assert_eq!(all.len(), corpus.len());
        assert_eq!(orig, got);

        let (a3, _) = split_corpus(&corpus, 0.8, 8).unwrap();
        assert_ne!(a1.sentences(), a3.sentences());
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let corpus = LabeledCorpus::from_sentences(vec![sentence("a", 0)]).unwrap();
        assert!(split_corpus(&corpus, 0.0, 1).is_err());
        assert!(split_corpus(&corpus, 1.0, 1).is_err());
    }

    #[test]
    fn vocab_assigns_indices_and_unknown() {
        let corpus =
            LabeledCorpus::from_sentences(vec![sentence("a b", 0), sentence("b c", 1)]).unwrap();
        let vocab = Vocab::build(&corpus).unwrap();
        assert_eq!(vocab.len(), 4); // a, b, c, unknown
        assert_eq!(vocab.lookup("a"), 0);
        assert_eq!(vocab.lookup("b"), 1);
        assert_eq!(vocab.lookup("c"), 2);
        assert_eq!(vocab.lookup("zzz"), vocab.unknown_index());
        assert_eq!(vocab.word(vocab.unknown_index()), UNKNOWN_TOKEN);

        let again = Vocab::build(&corpus).unwrap();
        assert_eq!(vocab.words, again.words);
    }

    #[test]
    fn vocab_roundtrips_through_serde() {
        let corpus = LabeledCorpus::from_sentences(vec![sentence("x y z", 0)]).unwrap();
        let vocab = Vocab::build(&corpus).unwrap();
        let json = serde_json::to_string(&vocab).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back.words, vocab.words);
        assert_eq!(back.unknown_index(), vocab.unknown_index());
    }

    #[test]
    fn corpus_stats_and_dump() {
        let corpus =
            LabeledCorpus::from_sentences(vec![sentence("a b c", 0), sentence("d", 1)]).unwrap();
        let stats = corpus.stats();
        assert_eq!(stats.sentences, 2);
        assert_eq!(stats.max_length, 3);
        assert!((stats.mean_length - 2.0).abs() < 1e-12);

        let mut buf = Vec::new();
        corpus.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let first: LabeledSentence = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first.tokens, vec!["a", "b", "c"]);
    }
}
