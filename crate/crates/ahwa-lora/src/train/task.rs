//! Deterministic synthetic token-sequence classification tasks.
//!
//! Every task's label is an exact function of the sequence, so the Bayes
//! accuracy is 100% and any accuracy gap measures the model and the
//! hardware constraints, not label noise. Sequences are globally unique, so
//! the train/val splits are disjoint by construction.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::util::stream_rng;
use crate::{Error, Result};

/// Which labeling rule generates the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TaskKind {
    /// Label = parity of the number of tokens with id below `marked_below`.
    ParityOfMarkedTokens { marked_below: u16 },
    /// Label = whether the exact bigram `pattern` occurs at least
    /// `threshold` times.
    PatternCount { pattern: (u16, u16), threshold: usize },
    /// Label = which of two marker tokens occurs more often.
    TokenMajority { marker_a: u16, marker_b: u16 },
}

impl TaskKind {
    pub fn token_majority() -> Self {
        TaskKind::TokenMajority { marker_a: 0, marker_b: 1 }
    }

    /// The exact labeling rule.
    pub fn label(&self, seq: &[u16]) -> u8 {
        match *self {
            TaskKind::ParityOfMarkedTokens { marked_below } => {
                (seq.iter().filter(|&&t| t < marked_below).count() % 2) as u8
            }
            TaskKind::PatternCount { pattern, threshold } => {
                let count = seq.windows(2).filter(|w| w[0] == pattern.0 && w[1] == pattern.1).count();
                u8::from(count >= threshold)
            }
            TaskKind::TokenMajority { marker_a, marker_b } => {
                let na = seq.iter().filter(|&&t| t == marker_a).count();
                let nb = seq.iter().filter(|&&t| t == marker_b).count();
                u8::from(nb > na)
            }
        }
    }
}

/// Generation sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSizes {
    pub n_train: usize,
    pub n_val: usize,
    pub seq_len: usize,
    pub vocab: usize,
}

impl Default for TaskSizes {
    fn default() -> Self {
        TaskSizes { n_train: 512, n_val: 256, seq_len: 16, vocab: 32 }
    }
}

/// One split of labeled sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<u16>>,
    pub labels: Vec<u8>,
    pub n_classes: usize,
    pub vocab: usize,
    pub seq_len: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// A generated task: disjoint train/val splits plus the rule that labeled
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub train: Dataset,
    pub val: Dataset,
}

fn filler_token<R: Rng>(rng: &mut R, vocab: u16, exclude: &[u16]) -> u16 {
    loop {
        let t = rng.random_range(0..vocab);
        if !exclude.contains(&t) {
            return t;
        }
    }
}

fn gen_sequence<R: Rng>(kind: &TaskKind, sizes: &TaskSizes, want_label: u8, rng: &mut R) -> Vec<u16> {
    let s = sizes.seq_len;
    let vocab = sizes.vocab as u16;
    match *kind {
        TaskKind::TokenMajority { marker_a, marker_b } => {
            // Half the positions carry markers; the margin varies so some
            // samples are decided by a single count.
            let k = (s / 2).max(2);
            let margin = *[2usize, 2, 4, 4, 6].as_slice().choose(rng).unwrap();
            let margin = margin.min(k - (k % 2 == margin % 2) as usize).max(1);
            let hi = (k + margin).div_ceil(2).min(k);
            let lo = k - hi;
            let na = if want_label == 1 { lo } else { hi };
            let mut seq: Vec<u16> =
                (0..s).map(|_| filler_token(rng, vocab, &[marker_a, marker_b])).collect();
            let mut positions: Vec<usize> = (0..s).collect();
            positions.shuffle(rng);
            for (i, &p) in positions.iter().take(k).enumerate() {
                seq[p] = if i < na { marker_a } else { marker_b };
            }
            seq
        }
        TaskKind::ParityOfMarkedTokens { marked_below } => {
            // Choose the marked count with the requested parity directly.
            let max_marked = s.min(6);
            let count = loop {
                let c = rng.random_range(0..=max_marked);
                if c % 2 == want_label as usize {
                    break c;
                }
            };
            let mut seq: Vec<u16> = (0..s)
                .map(|_| marked_below + rng.random_range(0..vocab.saturating_sub(marked_below).max(1)))
                .collect();
            let mut positions: Vec<usize> = (0..s).collect();
            positions.shuffle(rng);
            for &p in positions.iter().take(count) {
                seq[p] = rng.random_range(0..marked_below.max(1));
            }
            seq
        }
        TaskKind::PatternCount { pattern, threshold } => {
            // Insert the bigram a controlled number of times; fillers exclude
            // the pattern tokens so no accidental occurrences appear.
            let k = if want_label == 1 {
                threshold + rng.random_range(0..2)
            } else {
                rng.random_range(0..threshold)
            };
            let mut seq: Vec<u16> =
                (0..s).map(|_| filler_token(rng, vocab, &[pattern.0, pattern.1])).collect();
            let slots = s / 2;
            let mut pair_slots: Vec<usize> = (0..slots).collect();
            pair_slots.shuffle(rng);
            for &slot in pair_slots.iter().take(k.min(slots)) {
                seq[2 * slot] = pattern.0;
                seq[2 * slot + 1] = pattern.1;
            }
            seq
        }
    }
}

/// Build a deterministic task: unique sequences, balanced labels, disjoint
/// splits.
pub fn make_synthetic_task(kind: TaskKind, seed: u64, sizes: TaskSizes) -> Result<SyntheticTask> {
    if sizes.seq_len < 4 || sizes.vocab < 8 {
        return Err(Error::Config("task needs seq_len >= 4 and vocab >= 8".into()));
    }
    let total = sizes.n_train + sizes.n_val;
    let mut rng = stream_rng(seed, &[0x7a5c]);
    let mut seen: HashSet<Vec<u16>> = HashSet::with_capacity(total);
    let mut inputs = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let mut attempts = 0usize;
    while inputs.len() < total {
        let want = (inputs.len() % 2) as u8; // alternate for exact balance
        let seq = gen_sequence(&kind, &sizes, want, &mut rng);
        attempts += 1;
        if attempts > 100 * total {
            return Err(Error::Config(
                "sequence space too small for the requested dataset size".into(),
            ));
        }
        let got = kind.label(&seq);
        if got != want || !seen.insert(seq.clone()) {
            continue;
        }
        inputs.push(seq);
        labels.push(got);
    }
    let split = |inp: &[Vec<u16>], lab: &[u8]| Dataset {
        inputs: inp.to_vec(),
        labels: lab.to_vec(),
        n_classes: 2,
        vocab: sizes.vocab,
        seq_len: sizes.seq_len,
    };
    Ok(SyntheticTask {
        kind,
        train: split(&inputs[..sizes.n_train], &labels[..sizes.n_train]),
        val: split(&inputs[sizes.n_train..], &labels[sizes.n_train..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_dataset() {
        let sizes = TaskSizes { n_train: 64, n_val: 32, ..Default::default() };
        let a = make_synthetic_task(TaskKind::token_majority(), 5, sizes).unwrap();
        let b = make_synthetic_task(TaskKind::token_majority(), 5, sizes).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic_task(TaskKind::token_majority(), 6, sizes).unwrap();
        assert_ne!(a.train.inputs, c.train.inputs);
    }

    #[test]
    fn splits_are_disjoint_and_balanced() {
        for kind in [
            TaskKind::token_majority(),
            TaskKind::ParityOfMarkedTokens { marked_below: 8 },
            TaskKind::PatternCount { pattern: (3, 7), threshold: 2 },
        ] {
            let sizes = TaskSizes { n_train: 128, n_val: 64, ..Default::default() };
            let task = make_synthetic_task(kind, 9, sizes).unwrap();
            let train: HashSet<_> = task.train.inputs.iter().collect();
            assert_eq!(train.len(), 128, "duplicates inside train");
            assert!(task.val.inputs.iter().all(|s| !train.contains(s)), "split leak");
            let pos: usize = task.train.labels.iter().map(|&l| l as usize).sum();
            assert_eq!(pos, 64, "train labels unbalanced");
        }
    }

    #[test]
    fn frequency_classifier_is_perfect_on_token_majority() {
        let sizes = TaskSizes { n_train: 256, n_val: 128, ..Default::default() };
        let task = make_synthetic_task(TaskKind::token_majority(), 11, sizes).unwrap();
        let mut correct = 0usize;
        for (seq, &label) in task.val.inputs.iter().zip(&task.val.labels) {
            let na = seq.iter().filter(|&&t| t == 0).count();
            let nb = seq.iter().filter(|&&t| t == 1).count();
            if u8::from(nb > na) == label {
                correct += 1;
            }
        }
        let acc = correct as f64 / task.val.len() as f64;
        assert!(acc > 0.99, "frequency rule accuracy {acc}");
    }

    #[test]
    fn labels_match_their_rule() {
        let sizes = TaskSizes { n_train: 64, n_val: 32, ..Default::default() };
        for kind in [
            TaskKind::token_majority(),
            TaskKind::ParityOfMarkedTokens { marked_below: 8 },
            TaskKind::PatternCount { pattern: (3, 7), threshold: 2 },
        ] {
            let task = make_synthetic_task(kind, 13, sizes).unwrap();
            for (seq, &label) in task.train.inputs.iter().zip(&task.train.labels) {
                assert_eq!(kind.label(seq), label);
            }
        }
    }
}
