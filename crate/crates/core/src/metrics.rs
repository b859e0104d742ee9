//! Detection and recognition metrics.

use crate::error::{Error, Result};

/// Per-sample scores and labels of an evaluation run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoredPredictions {
    /// Distress score in `[0, 1]`, higher meaning more likely distressed.
    pub scores: Vec<f64>,
    /// Ground-truth class index; `normal_class` is the negative class.
    pub labels: Vec<usize>,
    pub predicted: Vec<usize>,
    pub normal_class: usize,
}

impl ScoredPredictions {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l != self.normal_class).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scores.len() != self.labels.len() || self.predicted.len() != self.labels.len() {
            return Err(Error::Input(format!(
                "{} scores, {} labels and {} predictions",
                self.scores.len(),
                self.labels.len(),
                self.predicted.len()
            )));
        }
        if self.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Input("non-finite score".into()));
        }
        Ok(())
    }
}

fn check_binary(scores: &[f64], positives: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != positives.len() {
        return Err(Error::Input(format!("{} scores for {} labels", scores.len(), positives.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Input("non-finite score".into()));
    }
    let p = positives.iter().filter(|&&b| b).count();
    Ok((p, positives.len() - p))
}

/// Indices sorted by descending score, grouped into runs of equal scores.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Area under the ROC curve as the Mann-Whitney statistic: the probability
/// that a random positive scores above a random negative, ties counting half.
pub fn roc_auc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    let (p, n) = check_binary(scores, positives)?;
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric("AUC needs both positive and negative samples".into()));
    }
    // Twice the number of (positive, negative) pairs won, ties worth one.
    let mut doubled: u128 = 0;
    let mut negatives_below = n as u128;
    for group in tie_groups(scores) {
        let gp = group.iter().filter(|&&i| positives[i]).count() as u128;
        let gn = group.len() as u128 - gp;
        negatives_below -= gn;
        doubled += gp * (2 * negatives_below + gn);
    }
    Ok(doubled as f64 / (2 * p as u128 * n as u128) as f64)
}

/// Highest precision over score thresholds whose recall reaches `target`.
pub fn precision_at_recall(scores: &[f64], positives: &[bool], target: f64) -> Result<f64> {
    let (p, _) = check_binary(scores, positives)?;
    if p == 0 {
        return Err(Error::UndefinedMetric("precision at recall needs positive samples".into()));
    }
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::Input(format!("target recall {target} outside (0, 1]")));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = 0.0f64;
    for group in tie_groups(scores) {
        for i in group {
            if positives[i] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        if tp as f64 / p as f64 >= target - 1e-12 {
            best = best.max(tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(best)
}

/// Top-1 accuracy and macro-F1 averaged over the classes that occur in
/// `labels`. A class that is never predicted correctly has F1 0.
pub fn classification_report(labels: &[usize], predicted: &[usize]) -> Result<(f64, f64)> {
    if labels.is_empty() || labels.len() != predicted.len() {
        return Err(Error::UndefinedMetric(format!(
            "classification report over {} labels and {} predictions",
            labels.len(),
            predicted.len()
        )));
    }
    let classes = labels.iter().chain(predicted).max().unwrap() + 1;
    let (mut tp, mut fp, mut fn_) = (vec![0usize; classes], vec![0usize; classes], vec![0usize; classes]);
    for (&l, &p) in labels.iter().zip(predicted) {
        if l == p {
            tp[l] += 1;
        } else {
            fp[p] += 1;
            fn_[l] += 1;
        }
    }
    let correct: usize = tp.iter().sum();
    let present: Vec<usize> = (0..classes).filter(|&c| tp[c] + fn_[c] > 0).collect();
    let f1_sum: f64 = present
        .iter()
        .map(|&c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            2.0 * tp[c] as f64 / denom as f64
        })
        .sum();
    Ok((correct as f64 / labels.len() as f64, f1_sum / present.len() as f64))
}

/// Named metric values rendered as `metric,value,config_hash` rows.
pub fn to_csv(rows: &[(String, f64)], config_hash: &str) -> String {
    let mut s = String::from("metric,value,config_hash\n");
    for (name, value) in rows {
        s.push_str(&format!("{name},{value},{config_hash}\n"));
    }
    s
}

/// Detection metrics (AUC, P@R=0.90, P@R=0.95) and, for more than two
/// classes, recognition metrics (top-1, macro-F1).
pub fn evaluate(scored: &ScoredPredictions, recognition: bool) -> Result<Vec<(String, f64)>> {
    scored.validate()?;
    let pos = scored.positives();
    let mut rows = vec![
        ("auc".to_string(), roc_auc(&scored.scores, &pos)?),
        ("p_at_r90".to_string(), precision_at_recall(&scored.scores, &pos, 0.90)?),
        ("p_at_r95".to_string(), precision_at_recall(&scored.scores, &pos, 0.95)?),
    ];
    let labels: Vec<usize> = if recognition {
        scored.labels.clone()
    } else {
        pos.iter().map(|&b| b as usize).collect()
    };
    let predicted: Vec<usize> = if recognition {
        scored.predicted.clone()
    } else {
        scored.predicted.iter().map(|&p| (p != scored.normal_class) as usize).collect()
    };
    let (top1, f1) = classification_report(&labels, &predicted)?;
    rows.push(("top1".to_string(), top1));
    rows.push(("macro_f1".to_string(), f1));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs_oracle(scores: &[f64], pos: &[bool]) -> f64 {
        let (mut num, mut den) = (0u128, 0u128);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if pos[i] && !pos[j] {
                    den += 2;
                    num += if scores[i] > scores[j] {
                        2
                    } else if scores[i] == scores[j] {
                        1
                    } else {
                        0
                    };
                }
            }
        }
        num as f64 / den as f64
    }

    fn scan_oracle(scores: &[f64], pos: &[bool], target: f64) -> f64 {
        let p = pos.iter().filter(|&&b| b).count() as f64;
        let mut best = 0.0f64;
        for &t in scores {
            let sel: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
            let tp = sel.iter().filter(|&&i| pos[i]).count() as f64;
            if tp / p >= target - 1e-12 {
                best = best.max(tp / sel.len() as f64);
            }
        }
        best
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5; 4], &[true, false, true, false]).unwrap(), 0.5);
        let (s, l) = ([0.9, 0.8, 0.4, 0.3], [true, false, true, false]);
        assert_eq!(roc_auc(&s, &l).unwrap(), 0.75);
        assert_eq!(pairs_oracle(&s, &l), 0.75);
    }

    #[test]
    fn auc_single_class_is_undefined() {
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn precision_at_recall_examples() {
        let pos = [true, true, true, false, false, false];
        assert_eq!(precision_at_recall(&[0.9, 0.8, 0.7, 0.3, 0.2, 0.1], &pos, 0.9).unwrap(), 1.0);
        assert_eq!(precision_at_recall(&[0.3, 0.2, 0.9], &[true; 3], 0.5).unwrap(), 1.0);
        let s = [0.9, 0.7, 0.6, 0.5, 0.4, 0.2];
        let l = [true, false, true, false, true, false];
        for t in [0.3, 0.5, 0.67, 0.9, 1.0] {
            assert_eq!(precision_at_recall(&s, &l, t).unwrap(), scan_oracle(&s, &l, t));
        }
        assert_eq!(precision_at_recall(&s, &l, 0.9).unwrap(), 0.6);
    }

    #[test]
    fn report_examples() {
        assert_eq!(classification_report(&[0, 1, 2], &[0, 1, 2]).unwrap(), (1.0, 1.0));
        let (top1, f1) = classification_report(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap();
        assert_eq!(top1, 0.5);
        assert!((f1 - 1.0 / 3.0).abs() < 1e-15);
        assert!(classification_report(&[], &[]).is_err());
    }

    #[test]
    fn three_class_confusion_oracle() {
        // Confusion rows = truth, columns = prediction:
        // [[3,1,0],[1,2,1],[0,1,1]]
        let mut labels = vec![];
        let mut preds = vec![];
        for (t, row) in [[3, 1, 0], [1, 2, 1], [0, 1, 1]].iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                labels.extend(std::iter::repeat_n(t, n));
                preds.extend(std::iter::repeat_n(p, n));
            }
        }
        let f1 = |p: f64, r: f64| 2.0 * p * r / (p + r);
        let want = (f1(3.0 / 4.0, 3.0 / 4.0) + f1(2.0 / 4.0, 2.0 / 4.0) + f1(1.0 / 2.0, 1.0 / 2.0)) / 3.0;
        let (top1, got) = classification_report(&labels, &preds).unwrap();
        assert_eq!(top1, 6.0 / 10.0);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let csv = to_csv(&[("auc".into(), 0.75)], "abc");
        assert_eq!(csv, "metric,value,config_hash\nauc,0.75,abc\n");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn sample() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
            (2usize..60).prop_flat_map(|n| {
                (
                    prop::collection::vec((0u8..12).prop_map(|v| v as f64 / 11.0), n),
                    prop::collection::vec(any::<bool>(), n),
                )
            })
        }

        proptest! {
            #[test]
            fn auc_matches_all_pairs((s, l) in sample()) {
                prop_assume!(l.iter().any(|&b| b) && l.iter().any(|&b| !b));
                prop_assert_eq!(roc_auc(&s, &l).unwrap(), pairs_oracle(&s, &l));
            }

            #[test]
            fn auc_invariant_under_monotone_maps((s, l) in sample()) {
                prop_assume!(l.iter().any(|&b| b) && l.iter().any(|&b| !b));
                let mapped: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
                prop_assert_eq!(roc_auc(&s, &l).unwrap(), roc_auc(&mapped, &l).unwrap());
            }

            #[test]
            fn p_at_r_matches_scan_and_is_monotone((s, l) in sample(), t in 0.05f64..1.0) {
                prop_assume!(l.iter().any(|&b| b));
                let a = precision_at_recall(&s, &l, t).unwrap();
                prop_assert_eq!(a, scan_oracle(&s, &l, t));
                let b = precision_at_recall(&s, &l, (t + 0.1).min(1.0)).unwrap();
                prop_assert!(b <= a);
            }
        }
    }
}
