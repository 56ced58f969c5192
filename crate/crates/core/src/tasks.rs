//! Synthetic distance-sensitive classification tasks and a TSV loader.
//!
//! Token id 0 is padding and id 1 is the out-of-vocabulary token; synthetic
//! tokens are drawn from `2..vocab`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};

pub const PAD_ID: usize = 0;
pub const OOV_ID: usize = 1;
pub const FIRST_TOKEN_ID: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Full,
    Train,
    Dev,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub vocab: usize,
    pub classes: usize,
    pub split: SplitTag,
}

impl Dataset {
    /// Validates every example against the vocabulary and class bounds.
    pub fn new(
        examples: Vec<Example>,
        vocab: usize,
        classes: usize,
        split: SplitTag,
    ) -> Result<Self> {
        for (i, ex) in examples.iter().enumerate() {
            if ex.tokens.is_empty() {
                return Err(argument(format!("example {i} has no tokens")));
            }
            if ex.label >= classes {
                return Err(Error::Index {
                    what: "label",
                    index: ex.label,
                    bound: classes,
                });
            }
            if let Some(&t) = ex.tokens.iter().find(|&&t| t >= vocab) {
                return Err(Error::Index {
                    what: "token id",
                    index: t,
                    bound: vocab,
                });
            }
        }
        Ok(Self {
            examples,
            vocab,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.examples
            .iter()
            .map(|e| e.tokens.len())
            .max()
            .unwrap_or(0)
    }

    /// Examples `range` as a new dataset with the given tag.
    pub fn slice(&self, range: std::ops::Range<usize>, split: SplitTag) -> Dataset {
        Dataset {
            examples: self.examples[range].to_vec(),
            vocab: self.vocab,
            classes: self.classes,
            split,
        }
    }
}

/// Label of the local task: 1 iff two adjacent tokens are equal.
pub fn has_adjacent_duplicate(tokens: &[usize]) -> bool {
    tokens.windows(2).any(|w| w[0] == w[1])
}

/// Label of the long-range task: 1 iff the first token equals the last.
pub fn ends_match(tokens: &[usize]) -> bool {
    tokens.first() == tokens.last() && tokens.len() > 1
}

fn draw_token<R: Rng>(rng: &mut R, vocab: usize) -> usize {
    rng.gen_range(FIRST_TOKEN_ID..vocab)
}

/// Draws until the token differs from every id in `avoid`.
fn draw_avoiding<R: Rng>(rng: &mut R, vocab: usize, avoid: &[usize]) -> usize {
    loop {
        let t = draw_token(rng, vocab);
        if !avoid.contains(&t) {
            return t;
        }
    }
}

/// Labels `0, 1, 0, 1, …` shuffled, so the classes differ in size by at most one.
fn balanced_labels<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    labels.shuffle(rng);
    labels
}

fn no_adjacent_duplicates<R: Rng>(rng: &mut R, len: usize, vocab: usize) -> Vec<usize> {
    let mut tokens = Vec::with_capacity(len);
    tokens.push(draw_token(rng, vocab));
    for i in 1..len {
        let prev = tokens[i - 1];
        tokens.push(draw_avoiding(rng, vocab, &[prev]));
    }
    tokens
}

/// Label 1 iff some pair of adjacent tokens is equal. Positive examples
/// carry a planted duplicate at a uniformly chosen position.
pub fn gen_local_task(
    seed: u64,
    n_examples: usize,
    seq_len: usize,
    vocab: usize,
) -> Result<Dataset> {
    if seq_len < 3 {
        return Err(argument(format!(
            "local task needs seq_len >= 3, got {seq_len}"
        )));
    }
    if vocab < 8 {
        return Err(argument(format!(
            "local task needs vocab >= 8, got {vocab}"
        )));
    }
    if n_examples == 0 {
        return Err(argument("n_examples must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = balanced_labels(&mut rng, n_examples);
    let examples = labels
        .into_iter()
        .map(|label| {
            let mut tokens = no_adjacent_duplicates(&mut rng, seq_len, vocab);
            if label == 1 {
                let p = rng.gen_range(0..seq_len - 1);
                tokens[p + 1] = tokens[p];
            }
            Example { tokens, label }
        })
        .collect();
    Dataset::new(examples, vocab, 2, SplitTag::Full)
}

/// Label 1 iff the first token equals the last. Middle tokens never equal a
/// neighbour, so nothing short of comparing the two ends reveals the label.
pub fn gen_longrange_task(
    seed: u64,
    n_examples: usize,
    seq_len: usize,
    vocab: usize,
) -> Result<Dataset> {
    if seq_len < 8 {
        return Err(argument(format!(
            "long-range task needs seq_len >= 8, got {seq_len}"
        )));
    }
    if vocab < FIRST_TOKEN_ID + 3 {
        return Err(argument(format!(
            "long-range task needs vocab >= 5, got {vocab}"
        )));
    }
    if n_examples == 0 {
        return Err(argument("n_examples must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = balanced_labels(&mut rng, n_examples);
    let examples = labels
        .into_iter()
        .map(|label| {
            let first = draw_token(&mut rng, vocab);
            let last = if label == 1 {
                first
            } else {
                draw_avoiding(&mut rng, vocab, &[first])
            };
            let mut tokens = Vec::with_capacity(seq_len);
            tokens.push(first);
            for i in 1..seq_len - 1 {
                let prev = tokens[i - 1];
                let t = if i == seq_len - 2 {
                    draw_avoiding(&mut rng, vocab, &[prev, last])
                } else {
                    draw_avoiding(&mut rng, vocab, &[prev])
                };
                tokens.push(t);
            }
            tokens.push(last);
            Example { tokens, label }
        })
        .collect();
    Dataset::new(examples, vocab, 2, SplitTag::Full)
}

/// Reads a vocabulary file: one token per line, the 0-based line index is
/// the id. Lines 0 and 1 stand for the padding and unknown tokens and never
/// match a word.
pub fn load_vocab(path: &Path) -> Result<(HashMap<String, usize>, usize)> {
    let text = fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() < FIRST_TOKEN_ID {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: lines.len(),
            message: "vocabulary needs the two reserved lines for padding and unknown".into(),
        });
    }
    let mut map = HashMap::new();
    for (id, line) in lines.iter().enumerate().skip(FIRST_TOKEN_ID) {
        let word = line.trim();
        if word.is_empty() {
            continue;
        }
        map.entry(word.to_string()).or_insert(id);
    }
    Ok((map, lines.len()))
}

/// Loads `label<TAB>text` lines. Labels are integers in `0..classes`; text
/// is split on whitespace, looked up in the vocabulary (unknown words get
/// id 1) and truncated to `max_len`. Blank lines are skipped.
pub fn load_tsv(path: &Path, vocab_path: &Path, max_len: usize, classes: usize) -> Result<Dataset> {
    if max_len == 0 {
        return Err(argument("max_len must be positive"));
    }
    if classes < 2 {
        return Err(argument("need at least two classes"));
    }
    let (vocab, vocab_size) = load_vocab(vocab_path)?;
    let text = fs::read_to_string(path)?;
    let parse_error = |line: usize, message: String| Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut examples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (label, body) = line
            .split_once('\t')
            .ok_or_else(|| parse_error(line_no, "expected label<TAB>text".into()))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| parse_error(line_no, format!("unknown label {label:?}")))?;
        if label >= classes {
            return Err(parse_error(
                line_no,
                format!("unknown label {label}, expected 0..{classes}"),
            ));
        }
        let tokens: Vec<usize> = body
            .split_whitespace()
            .take(max_len)
            .map(|w| vocab.get(w).copied().unwrap_or(OOV_ID))
            .collect();
        if tokens.is_empty() {
            return Err(parse_error(line_no, "text has no tokens".into()));
        }
        examples.push(Example { tokens, label });
    }
    Dataset::new(examples, vocab_size, classes, SplitTag::Full)
}

/// Seeded shuffled partition into train/dev/test; each part gets
/// `floor(n · fraction)` examples.
pub fn split(
    dataset: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(f.is_finite() && *f > 0.0)) || a + b + c > 1.0 + 1e-9 {
        return Err(argument(format!(
            "split fractions must be positive and sum to at most 1, got {fractions:?}"
        )));
    }
    let n = dataset.len();
    let size = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let (n_train, n_dev, n_test) = (size(a), size(b), size(c));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: std::ops::Range<usize>, split: SplitTag| Dataset {
        examples: order[range]
            .iter()
            .map(|&i| dataset.examples[i].clone())
            .collect(),
        vocab: dataset.vocab,
        classes: dataset.classes,
        split,
    };
    Ok((
        take(0..n_train, SplitTag::Train),
        take(n_train..n_train + n_dev, SplitTag::Dev),
        take(n_train + n_dev..n_train + n_dev + n_test, SplitTag::Test),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn predicates() {
        assert!(has_adjacent_duplicate(&[3, 3, 7, 4]));
        assert!(!has_adjacent_duplicate(&[3, 4, 3, 4]));
        assert!(ends_match(&[5, 2, 3, 5]));
        assert!(!ends_match(&[5, 2, 3, 9]));
    }

    #[test]
    fn local_task_labels_and_balance() {
        let ds = gen_local_task(7, 10_000, 12, 20).unwrap();
        let positives = ds.examples.iter().filter(|e| e.label == 1).count();
        let share = positives as f64 / ds.len() as f64;
        assert!((0.49..=0.51).contains(&share), "{share}");
        for e in &ds.examples {
            assert_eq!(e.label == 1, has_adjacent_duplicate(&e.tokens));
            assert!(e.tokens.iter().all(|&t| (FIRST_TOKEN_ID..20).contains(&t)));
        }
    }

    #[test]
    fn longrange_task_structure() {
        let ds = gen_longrange_task(3, 2000, 16, 12).unwrap();
        for e in &ds.examples {
            assert_eq!(e.tokens.len(), 16);
            assert_eq!(e.label == 1, ends_match(&e.tokens));
            assert!(e.tokens.windows(2).all(|w| w[0] != w[1]));
            assert!(e.tokens.iter().all(|&t| (FIRST_TOKEN_ID..12).contains(&t)));
        }
        let positives = ds.examples.iter().filter(|e| e.label == 1).count();
        assert_eq!(positives, 1000);
    }

    #[test]
    fn generators_are_pure_in_their_arguments() {
        assert_eq!(
            gen_local_task(1, 50, 8, 10).unwrap(),
            gen_local_task(1, 50, 8, 10).unwrap()
        );
        assert_eq!(
            gen_longrange_task(1, 50, 8, 10).unwrap(),
            gen_longrange_task(1, 50, 8, 10).unwrap()
        );
        assert_ne!(
            gen_local_task(1, 50, 8, 10).unwrap(),
            gen_local_task(2, 50, 8, 10).unwrap()
        );
    }

    #[test]
    fn generator_bounds() {
        assert!(gen_local_task(0, 10, 2, 10).is_err());
        assert!(gen_local_task(0, 10, 5, 7).is_err());
        assert!(gen_longrange_task(0, 10, 7, 10).is_err());
        assert!(gen_longrange_task(0, 0, 8, 10).is_err());
    }

    /// Multinomial naive Bayes over the middle tokens, trained on 10000
    /// examples and scored on 10000 fresh ones.
    #[test]
    fn middle_tokens_carry_no_label_signal() {
        let (n, len, vocab) = (10_000, 32, 16);
        let train = gen_longrange_task(11, n, len, vocab).unwrap();
        let test = gen_longrange_task(12, n, len, vocab).unwrap();
        let mut counts = vec![vec![1.0f64; vocab]; 2];
        let mut priors = [0.0f64; 2];
        for e in &train.examples {
            priors[e.label] += 1.0;
            for &t in &e.tokens[1..len - 1] {
                counts[e.label][t] += 1.0;
            }
        }
        let log_probs: Vec<Vec<f64>> = counts
            .iter()
            .map(|c| {
                let total: f64 = c.iter().sum();
                c.iter().map(|x| (x / total).ln()).collect()
            })
            .collect();
        let correct = test
            .examples
            .iter()
            .filter(|e| {
                let score = |k: usize| {
                    priors[k].ln()
                        + e.tokens[1..len - 1]
                            .iter()
                            .map(|&t| log_probs[k][t])
                            .sum::<f64>()
                };
                let pred = usize::from(score(1) > score(0));
                pred == e.label
            })
            .count();
        let accuracy = correct as f64 / n as f64;
        assert!(accuracy <= 0.55, "{accuracy}");
    }

    fn write_file(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::File::create(&p)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        p
    }

    #[test]
    fn tsv_loading() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = write_file(dir.path(), "vocab.txt", "<pad>\n<unk>\nhello\nworld\n");
        let data = write_file(
            dir.path(),
            "data.tsv",
            "1\thello world\n0\thello there friend\n\n",
        );
        let ds = load_tsv(&data, &vocab, 2, 2).unwrap();
        assert_eq!(ds.vocab, 4);
        assert_eq!(
            ds.examples[0],
            Example {
                tokens: vec![2, 3],
                label: 1
            }
        );
        assert_eq!(
            ds.examples[1],
            Example {
                tokens: vec![2, OOV_ID],
                label: 0
            }
        );

        let bad = write_file(dir.path(), "bad.tsv", "1\thello\nno tab here\n");
        match load_tsv(&bad, &vocab, 8, 2) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let bad_label = write_file(dir.path(), "label.tsv", "7\thello\n");
        assert!(matches!(
            load_tsv(&bad_label, &vocab, 8, 2),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = gen_local_task(5, 1000, 6, 10).unwrap();
        let (a, b, c) = split(&ds, (0.8, 0.1, 0.1), 9).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (800, 100, 100));
        assert_eq!(split(&ds, (0.8, 0.1, 0.1), 9).unwrap().0, a);
        let mut all: Vec<_> = a
            .examples
            .iter()
            .chain(&b.examples)
            .chain(&c.examples)
            .cloned()
            .collect();
        let mut orig = ds.examples.clone();
        all.sort_by(|x, y| (&x.tokens, x.label).cmp(&(&y.tokens, y.label)));
        orig.sort_by(|x, y| (&x.tokens, x.label).cmp(&(&y.tokens, y.label)));
        assert_eq!(all, orig);
        assert!(split(&ds, (0.8, 0.3, 0.1), 9).is_err());
        assert!(split(&ds, (0.0, 0.3, 0.1), 9).is_err());
    }
}
