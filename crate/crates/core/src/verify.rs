//! Face-verification accuracy: exact threshold search, K-fold
//! cross-validation over contiguous folds, and scoring with reconstructed
//! images swapped into the positive pairs.

use std::io::{self, Write};

use thiserror::Error;

use crate::image::ImageTensor;
use crate::oracle::{cosine, OracleError, SyntheticEmbedder};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("no pairs to evaluate")]
    Empty,
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("{pairs} pairs cannot fill {folds} folds")]
    TooFewPairs { pairs: usize, folds: usize },
    #[error("pair {index} has a non-finite score")]
    NonFinite { index: usize },
    #[error("pair {index}: a replacement is only meaningful for a positive pair")]
    ReplacementOnNegative { index: usize },
    #[error("pair {index}: {source}")]
    Embedding { index: usize, source: OracleError },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerificationPair {
    pub score: f64,
    /// True when both items show the same identity.
    pub same: bool,
}

impl VerificationPair {
    pub fn new(score: f64, same: bool) -> Self {
        Self { score, same }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldReport {
    pub thresholds: Vec<f64>,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

impl FoldReport {
    pub fn folds(&self) -> usize {
        self.accuracies.len()
    }

    /// Columns `fold,threshold,accuracy`; a final `mean` row carries the
    /// average accuracy with an empty threshold.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["fold", "threshold", "accuracy"])?;
        for (i, (t, a)) in self.thresholds.iter().zip(&self.accuracies).enumerate() {
            w.write_record([i.to_string(), t.to_string(), a.to_string()])?;
        }
        w.write_record(["mean".to_string(), String::new(), self.mean_accuracy.to_string()])?;
        w.flush()
    }
}

fn check_scores(pairs: &[VerificationPair]) -> Result<(), VerifyError> {
    if pairs.is_empty() {
        return Err(VerifyError::Empty);
    }
    match pairs.iter().position(|p| !p.score.is_finite()) {
        Some(index) => Err(VerifyError::NonFinite { index }),
        None => Ok(()),
    }
}

/// Fraction of pairs where `score >= threshold` agrees with the label.
pub fn accuracy_at(pairs: &[VerificationPair], threshold: f64) -> f64 {
    let correct = pairs.iter().filter(|p| (p.score >= threshold) == p.same).count();
    correct as f64 / pairs.len() as f64
}

/// Best threshold over the candidates `-inf`, the midpoints between
/// consecutive distinct scores, and `+inf`. Infinite sentinels keep the
/// choice equivariant under any shift or positive scaling of the scores.
/// Returns `(threshold, accuracy)`; among equally accurate candidates the
/// smallest wins.
pub fn best_threshold(pairs: &[VerificationPair]) -> Result<(f64, f64), VerifyError> {
    check_scores(pairs)?;
    let mut sorted: Vec<VerificationPair> = pairs.to_vec();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    let n = sorted.len();

    // Below the minimum everything is predicted "same".
    let mut correct = sorted.iter().filter(|p| p.same).count();
    let mut best = (f64::NEG_INFINITY, correct);
    let mut i = 0;
    while i < n {
        // Move the whole group of equal scores below the threshold.
        let v = sorted[i].score;
        while i < n && sorted[i].score == v {
            if sorted[i].same {
                correct -= 1;
            } else {
                correct += 1;
            }
            i += 1;
        }
        let t = if i < n {
            0.5 * (v + sorted[i].score)
        } else {
            f64::INFINITY
        };
        if correct > best.1 {
            best = (t, correct);
        }
    }
    Ok((best.0, best.1 as f64 / n as f64))
}

/// Half-open index ranges of `folds` contiguous blocks; the first
/// `n % folds` blocks hold one extra pair.
pub fn fold_ranges(n: usize, folds: usize) -> Vec<std::ops::Range<usize>> {
    let (base, extra) = (n / folds, n % folds);
    let mut start = 0;
    (0..folds)
        .map(|f| {
            let len = base + usize::from(f < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// K-fold accuracy with folds taken as contiguous blocks in input order.
pub fn kfold_accuracy(pairs: &[VerificationPair], folds: usize) -> Result<FoldReport, VerifyError> {
    if folds < 2 {
        return Err(VerifyError::TooFewFolds(folds));
    }
    check_scores(pairs)?;
    if pairs.len() < folds {
        return Err(VerifyError::TooFewPairs {
            pairs: pairs.len(),
            folds,
        });
    }
    let mut thresholds = Vec::with_capacity(folds);
    let mut accuracies = Vec::with_capacity(folds);
    for r in fold_ranges(pairs.len(), folds) {
        let train: Vec<VerificationPair> = pairs[..r.start].iter().chain(&pairs[r.end..]).copied().collect();
        let (t, _) = best_threshold(&train)?;
        thresholds.push(t);
        accuracies.push(accuracy_at(&pairs[r], t));
    }
    let mean_accuracy = accuracies.iter().sum::<f64>() / folds as f64;
    Ok(FoldReport {
        thresholds,
        accuracies,
        mean_accuracy,
    })
}

/// One row of a verification protocol, with an optional stand-in for the
/// first image.
#[derive(Clone, Copy, Debug)]
pub struct ImagePair<'a> {
    pub first: &'a ImageTensor,
    pub second: &'a ImageTensor,
    pub same: bool,
    /// Used instead of `first` when present. Only allowed on positive pairs.
    pub replacement: Option<&'a ImageTensor>,
}

/// Scores every pair as the cosine between embeddings, using the
/// replacement image where one is given, and runs [`kfold_accuracy`] on the
/// result in input order.
pub fn evaluate_replacement(
    pairs: &[ImagePair<'_>],
    embedder: &SyntheticEmbedder,
    folds: usize,
) -> Result<FoldReport, VerifyError> {
    kfold_accuracy(&score_pairs(pairs, embedder)?, folds)
}

pub fn score_pairs(
    pairs: &[ImagePair<'_>],
    embedder: &SyntheticEmbedder,
) -> Result<Vec<VerificationPair>, VerifyError> {
    pairs
        .iter()
        .enumerate()
        .map(|(index, p)| {
            if p.replacement.is_some() && !p.same {
                return Err(VerifyError::ReplacementOnNegative { index });
            }
            let wrap = |source| VerifyError::Embedding { index, source };
            let a = embedder.embed(p.replacement.unwrap_or(p.first)).map_err(wrap)?;
            let b = embedder.embed(p.second).map_err(wrap)?;
            Ok(VerificationPair::new(cosine(&a, &b).map_err(wrap)?, p.same))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::rng;

    fn pairs(scores: &[f64], labels: &[u8]) -> Vec<VerificationPair> {
        scores
            .iter()
            .zip(labels)
            .map(|(&s, &l)| VerificationPair::new(s, l == 1))
            .collect()
    }

    #[test]
    fn separable_threshold() {
        let (t, a) = best_threshold(&pairs(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0])).unwrap();
        assert!((t - 0.5).abs() < 1e-15);
        assert_eq!(a, 1.0);
    }

    #[test]
    fn all_positive_uses_low_sentinel() {
        let p = pairs(&[0.3, 0.7, 0.5], &[1, 1, 1]);
        let (t, a) = best_threshold(&p).unwrap();
        assert!(t < 0.3);
        assert_eq!(a, 1.0);
    }

    #[test]
    fn all_negative_uses_high_sentinel() {
        let (t, a) = best_threshold(&pairs(&[0.3, 0.7], &[0, 0])).unwrap();
        assert!(t > 0.7);
        assert_eq!(a, 1.0);
    }

    #[test]
    fn anti_separable() {
        let (_, a) = best_threshold(&pairs(&[0.6, 0.4], &[0, 1])).unwrap();
        assert_eq!(a, 0.5);
    }

    #[test]
    fn ties_at_threshold_count_as_same() {
        let p = pairs(&[0.5, 0.5, 0.2], &[1, 1, 0]);
        assert_eq!(accuracy_at(&p, 0.5), 1.0);
        let (t, _) = best_threshold(&p).unwrap();
        assert_eq!(t, 0.35);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(best_threshold(&[]), Err(VerifyError::Empty)));
        assert!(matches!(kfold_accuracy(&[], 2), Err(VerifyError::Empty)));
    }

    #[test]
    fn kfold_argument_errors() {
        let p = pairs(&[0.1, 0.2, 0.3], &[0, 1, 1]);
        assert!(matches!(kfold_accuracy(&p, 1), Err(VerifyError::TooFewFolds(1))));
        assert!(matches!(kfold_accuracy(&p, 4), Err(VerifyError::TooFewPairs { .. })));
    }

    #[test]
    fn two_folds_of_separable_pairs() {
        let mut p = pairs(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]);
        p.extend(p.clone());
        let r = kfold_accuracy(&p, 2).unwrap();
        assert_eq!(r.mean_accuracy, 1.0);
        assert_eq!(r.folds(), 2);
    }

    #[test]
    fn fold_ranges_cover_input() {
        let r = fold_ranges(23, 10);
        assert_eq!(r[0], 0..3);
        assert_eq!(r[2], 6..9);
        assert_eq!(r[3], 9..11);
        assert_eq!(r[9].end, 23);
    }

    #[test]
    fn random_labels_give_chance_accuracy() {
        let p: Vec<VerificationPair> = (0..1000u64)
            .map(|i| VerificationPair::new(rng::uniform(1, 10, i), rng::uniform(1, 11, i) < 0.5))
            .collect();
        let r = kfold_accuracy(&p, 10).unwrap();
        assert!((r.mean_accuracy - 0.5).abs() <= 0.05, "{}", r.mean_accuracy);
    }

    #[test]
    fn report_csv() {
        let r = FoldReport {
            thresholds: vec![0.5, 0.25],
            accuracies: vec![1.0, 0.5],
            mean_accuracy: 0.75,
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "fold,threshold,accuracy\n0,0.5,1\n1,0.25,0.5\nmean,,0.75\n"
        );
    }

    fn scored() -> impl Strategy<Value = Vec<VerificationPair>> {
        prop::collection::vec((-1.0f64..1.0, any::<bool>()), 10..80)
            .prop_map(|v| v.into_iter().map(|(s, l)| VerificationPair::new(s, l)).collect())
    }

    proptest! {
        #[test]
        fn accuracy_beats_majority_prior(p in scored()) {
            let (t, a) = best_threshold(&p).unwrap();
            let pos = p.iter().filter(|x| x.same).count() as f64 / p.len() as f64;
            prop_assert!(a >= pos.max(1.0 - pos) - 1e-12);
            prop_assert_eq!(a, accuracy_at(&p, t));
        }

        #[test]
        fn exhaustive_search_agrees(p in scored()) {
            let (_, a) = best_threshold(&p).unwrap();
            let brute = p.iter().map(|x| accuracy_at(&p, x.score)).fold(accuracy_at(&p, f64::INFINITY), f64::max);
            prop_assert_eq!(a, brute);
        }

        #[test]
        fn shift_moves_thresholds(p in scored(), c in -5.0f64..5.0, folds in 2usize..6) {
            // dyadic shift keeps every sum exact
            let c = (c * 64.0).round() / 64.0;
            let q: Vec<_> = p.iter().map(|x| VerificationPair::new(x.score + c, x.same)).collect();
            let (a, b) = (kfold_accuracy(&p, folds).unwrap(), kfold_accuracy(&q, folds).unwrap());
            prop_assert_eq!(&a.accuracies, &b.accuracies);
            for (ta, tb) in a.thresholds.iter().zip(&b.thresholds) {
                if ta.is_finite() {
                    prop_assert!((ta + c - tb).abs() < 1e-9);
                } else {
                    prop_assert_eq!(ta, tb);
                }
            }
        }

        #[test]
        fn positive_scaling_keeps_accuracy(p in scored(), s in 0.01f64..100.0) {
            let q: Vec<_> = p.iter().map(|x| VerificationPair::new(x.score * s, x.same)).collect();
            prop_assert_eq!(kfold_accuracy(&p, 5).unwrap().accuracies, kfold_accuracy(&q, 5).unwrap().accuracies);
        }

        #[test]
        fn mean_ignores_fold_labels(p in scored()) {
            let r = kfold_accuracy(&p, 4).unwrap();
            let mut rev = r.accuracies.clone();
            rev.reverse();
            let m = rev.iter().sum::<f64>() / 4.0;
            prop_assert!((m - r.mean_accuracy).abs() < 1e-15);
            prop_assert!(r.accuracies.iter().all(|a| (0.0..=1.0).contains(a)));
        }
    }
}
