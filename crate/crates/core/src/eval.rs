//! Alignment metrics against Search relevance judgments.
//!
//! The positive class is "Search pass" (label 1): precision measures how many
//! keyphrases the filter lets through that Search also accepts, recall how
//! many Search-acceptable keyphrases survive the filter.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::RelevanceJudgment;
use crate::text::Keyphrase;

/// `(item_id, keyphrase_id)`
pub type PairKey = (u64, u64);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1Report {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support_pos: u64,
    pub support_neg: u64,
}

fn judgment_map(judgments: &[RelevanceJudgment]) -> HashMap<PairKey, bool> {
    judgments
        .iter()
        .map(|j| ((j.item_id, j.keyphrase_id), j.label == 1))
        .collect()
}

fn lookup_all(preds: &[(PairKey, bool)], judgments: &[RelevanceJudgment]) -> Result<Vec<(PairKey, bool, bool)>> {
    let map = judgment_map(judgments);
    let mut missing = Vec::new();
    let mut joined = Vec::with_capacity(preds.len());
    for &(key, pass) in preds {
        match map.get(&key) {
            Some(&label) => joined.push((key, pass, label)),
            None => missing.push(key),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingJudgments { pairs: missing });
    }
    Ok(joined)
}

pub fn confusion(preds: &[(PairKey, bool)], judgments: &[RelevanceJudgment]) -> Result<ConfusionCounts> {
    let mut c = ConfusionCounts::default();
    for (_, pass, label) in lookup_all(preds, judgments)? {
        match (pass, label) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn prf1(c: &ConfusionCounts) -> Prf1Report {
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Prf1Report {
        precision,
        recall,
        f1,
        support_pos: c.tp + c.fn_,
        support_neg: c.fp + c.tn,
    }
}

/// False negatives bucketed by keyphrase token count.
pub fn fn_length_breakdown(
    preds: &[(PairKey, bool)],
    judgments: &[RelevanceJudgment],
    keyphrases: &[Keyphrase],
) -> Result<BTreeMap<usize, u64>> {
    let lengths: HashMap<u64, usize> = keyphrases
        .iter()
        .map(|k| (k.keyphrase_id, k.token_len()))
        .collect();
    let mut buckets = BTreeMap::new();
    for ((_, kp_id), pass, label) in lookup_all(preds, judgments)? {
        if !pass && label {
            let len = *lengths.get(&kp_id).ok_or(Error::UnknownId {
                kind: "keyphrase",
                id: kp_id,
            })?;
            *buckets.entry(len).or_insert(0) += 1;
        }
    }
    Ok(buckets)
}

pub fn decide(scores: &[(PairKey, f64)], threshold: f64) -> Vec<(PairKey, bool)> {
    scores.iter().map(|&(k, s)| (k, s >= threshold)).collect()
}

/// Threshold maximizing F1 on `(score, label)` samples; midpoints between
/// adjacent distinct scores are the candidates. Falls back to 0.5 when the
/// set has no positives.
pub fn calibrate_threshold(samples: &[(f64, bool)]) -> f64 {
    let total_pos = samples.iter().filter(|s| s.1).count() as f64;
    if total_pos == 0.0 {
        return 0.5;
    }
    let mut sorted: Vec<(f64, bool)> = samples.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut best = (f64::NEG_INFINITY, sorted[0].0);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let f1 = 2.0 * tp / (tp + fp + total_pos);
        let cut = if i < sorted.len() { 0.5 * (s + sorted[i].0) } else { s };
        if f1 > best.0 {
            best = (f1, cut);
        }
    }
    best.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model: String,
    pub report: Prf1Report,
}

/// Renders rows as a `Model | Precision | Recall | F1` table.
pub fn format_table(rows: &[ModelRow]) -> String {
    let width = rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$} | Precision | Recall |   F1", "Model");
    let _ = writeln!(out, "{}-+-----------+--------+------", "-".repeat(width));
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$} | {:>9.2} | {:>6.2} | {:>4.2}",
            r.model, r.report.precision, r.report.recall, r.report.f1
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::collection::vec;
    use proptest::prelude::*;

    fn j(item: u64, kp: u64, label: u8) -> RelevanceJudgment {
        RelevanceJudgment {
            item_id: item,
            keyphrase_id: kp,
            label,
        }
    }

    #[test]
    fn six_pair_hand_count() {
        let judgments = vec![j(1, 1, 1), j(1, 2, 1), j(1, 3, 1), j(1, 4, 0), j(1, 5, 1), j(1, 6, 0)];
        let preds = vec![
            ((1, 1), true),
            ((1, 2), true),
            ((1, 3), true),
            ((1, 4), true),
            ((1, 5), false),
            ((1, 6), false),
        ];
        let c = confusion(&preds, &judgments).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (3, 1, 1, 1));
        let r = prf1(&c);
        assert_eq!((r.precision, r.recall, r.f1), (0.75, 0.75, 0.75));
        assert_eq!((r.support_pos, r.support_neg), (4, 2));
    }

    #[test]
    fn perfect_inverted_and_degenerate() {
        let judgments = vec![j(1, 1, 1), j(1, 2, 0), j(2, 1, 1)];
        let perfect: Vec<_> = judgments.iter().map(|x| ((x.item_id, x.keyphrase_id), x.label == 1)).collect();
        let c = confusion(&perfect, &judgments).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let inverted: Vec<_> = perfect.iter().map(|&(k, p)| (k, !p)).collect();
        let c = confusion(&inverted, &judgments).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        let none: Vec<_> = perfect.iter().map(|&(k, _)| (k, false)).collect();
        let r = prf1(&confusion(&none, &judgments).unwrap());
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn missing_judgment_lists_pairs() {
        let err = confusion(&[((9, 9), true), ((1, 1), true), ((8, 7), false)], &[j(1, 1, 1)]).unwrap_err();
        match err {
            Error::MissingJudgments { pairs } => assert_eq!(pairs, vec![(9, 9), (8, 7)]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fn_breakdown_buckets_by_length() {
        let kps = vec![
            Keyphrase::new(1, "nike").unwrap(),
            Keyphrase::new(2, "nike shoes").unwrap(),
            Keyphrase::new(3, "red").unwrap(),
        ];
        let judgments = vec![j(1, 1, 1), j(1, 2, 1), j(1, 3, 1), j(2, 1, 0)];
        let preds = vec![((1, 1), false), ((1, 2), false), ((1, 3), false), ((2, 1), false)];
        let b = fn_length_breakdown(&preds, &judgments, &kps).unwrap();
        assert_eq!(b, BTreeMap::from([(1, 2), (2, 1)]));
        let c = confusion(&preds, &judgments).unwrap();
        assert_eq!(b.values().sum::<u64>(), c.fn_);
        let perfect = vec![((1, 1), true), ((1, 2), true), ((1, 3), true), ((2, 1), false)];
        assert!(fn_length_breakdown(&perfect, &judgments, &kps).unwrap().is_empty());
    }

    #[test]
    fn calibration_picks_separating_cut() {
        let samples = vec![(0.9, true), (0.8, true), (0.7, false), (0.6, true), (0.2, false)];
        let t = calibrate_threshold(&samples);
        assert!(t > 0.2 && t < 0.6, "{t}");
        assert_eq!(calibrate_threshold(&[(0.3, false)]), 0.5);
    }

    #[test]
    fn table_mirrors_reference_row_layout() {
        let table = format_table(&[ModelRow {
            model: "jaccard".into(),
            report: Prf1Report {
                precision: 0.63,
                recall: 0.75,
                f1: 0.70,
                support_pos: 0,
                support_neg: 0,
            },
        }]);
        assert!(table.lines().nth(2).unwrap().contains("jaccard |      0.63 |   0.75 | 0.70"));
    }

    proptest! {
        #[test]
        fn threshold_monotonicity(data in vec((0.0f64..1.0, any::<bool>()), 1..60), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let judgments: Vec<_> = data.iter().enumerate().map(|(i, &(_, l))| j(i as u64, 0, l as u8)).collect();
            let scores: Vec<_> = data.iter().enumerate().map(|(i, &(s, _))| ((i as u64, 0), s)).collect();
            let c_lo = confusion(&decide(&scores, lo), &judgments).unwrap();
            let c_hi = confusion(&decide(&scores, hi), &judgments).unwrap();
            prop_assert!(c_hi.fp <= c_lo.fp);
            prop_assert!(c_hi.fn_ >= c_lo.fn_);
        }
    }
}
