use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{concept_flags, EvalError};
use crate::latent_io::{normalize_concept, LabeledLatentDataset, Split};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellTally {
    pub total: usize,
    pub correct: usize,
}

impl CellTally {
    fn rate<T: Scalar>(&self, name: &'static str) -> Result<T, EvalError> {
        if self.total == 0 {
            return Err(EvalError::EmptySubgroup(name));
        }
        Ok(T::lit(self.correct as f64) / T::lit(self.total as f64))
    }
}

/// Sample and correct-prediction counts for each (label, concept) group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    /// y = 1, C present
    pub pos_c: CellTally,
    /// y = 1, C absent
    pub pos_not_c: CellTally,
    /// y = 0, C present
    pub neg_c: CellTally,
    /// y = 0, C absent
    pub neg_not_c: CellTally,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupRates<T> {
    pub tpr_c: T,
    pub tpr_not_c: T,
    pub tnr_c: T,
    pub tnr_not_c: T,
    pub counts: GroupCounts,
}

/// True positive/negative rates within the concept-present and
/// concept-absent groups. Every group must be non-empty.
pub fn group_rates<T: Scalar>(
    ds: &LabeledLatentDataset,
    predictions: &[u8],
    concept: &str,
) -> Result<GroupRates<T>, EvalError> {
    if predictions.len() != ds.len() {
        return Err(EvalError::LengthMismatch(ds.len(), predictions.len()));
    }
    let flags = concept_flags(ds, concept)?;
    let mut counts = GroupCounts::default();
    for ((&y, &c), &p) in ds.labels().iter().zip(flags).zip(predictions) {
        let cell = match (y, c) {
            (1, true) => &mut counts.pos_c,
            (1, false) => &mut counts.pos_not_c,
            (_, true) => &mut counts.neg_c,
            (_, false) => &mut counts.neg_not_c,
        };
        cell.total += 1;
        cell.correct += usize::from(p == y);
    }
    Ok(GroupRates {
        tpr_c: counts.pos_c.rate("y=1 with concept")?,
        tpr_not_c: counts.pos_not_c.rate("y=1 without concept")?,
        tnr_c: counts.neg_c.rate("y=0 with concept")?,
        tnr_not_c: counts.neg_not_c.rate("y=0 without concept")?,
        counts,
    })
}

/// Ground-truth bias in `[-100, 100]`: positive when the concept's presence
/// raises recall of class 1 more than that of class 0.
pub fn delta_c<T: Scalar>(r: &GroupRates<T>) -> T {
    T::lit(100.0) * ((r.tpr_c - r.tpr_not_c) - (r.tnr_c - r.tnr_not_c)) / T::lit(2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasMeasurement<T> {
    pub concept: String,
    pub split: Split,
    pub delta_c: T,
    pub rates: GroupRates<T>,
}

pub fn measure_bias<T: Scalar>(
    ds: &LabeledLatentDataset,
    predictions: &[u8],
    concept: &str,
) -> Result<BiasMeasurement<T>, EvalError> {
    let rates = group_rates(ds, predictions, concept)?;
    Ok(BiasMeasurement {
        concept: normalize_concept(concept),
        split: ds.split(),
        delta_c: delta_c(&rates),
        rates,
    })
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks<T: Scalar>(values: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![T::zero(); values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mean = T::lit((i + j) as f64 / 2.0 + 1.0);
        for &idx in &order[i..=j] {
            ranks[idx] = mean;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson<T: Scalar>(a: &[T], b: &[T]) -> Result<T, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(EvalError::CorrelationUndefined("fewer than two points"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(EvalError::CorrelationUndefined("non-finite input"));
    }
    let n = T::lit(a.len() as f64);
    let ma = a.iter().copied().sum::<T>() / n;
    let mb = b.iter().copied().sum::<T>() / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == T::zero() || sbb == T::zero() {
        return Err(EvalError::CorrelationUndefined("constant input"));
    }
    let r = sab / (saa * sbb).sqrt();
    Ok(r.max(-T::one()).min(T::one()))
}

/// Spearman rank correlation with average-rank tie handling.
pub fn spearman<T: Scalar>(a: &[T], b: &[T]) -> Result<T, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(EvalError::CorrelationUndefined("non-finite input"));
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

/// One bias-detection experiment: the method's rankings per direction and
/// the concepts with the largest and smallest ground-truth bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKCase {
    pub class1_ranking: Vec<String>,
    pub class0_ranking: Vec<String>,
    pub true_class1: String,
    pub true_class0: String,
}

/// Percentage of hits in the first `k` of each direction's ranking,
/// averaged over both directions and all cases.
pub fn topk_accuracy<T: Scalar>(cases: &[TopKCase], k: usize) -> Result<T, EvalError> {
    if k < 1 {
        return Err(EvalError::InvalidK);
    }
    if cases.is_empty() {
        return Err(EvalError::NoCases);
    }
    let hit = |ranking: &[String], truth: &str| ranking.iter().take(k).any(|c| c == truth);
    let hits: usize = cases
        .iter()
        .map(|c| usize::from(hit(&c.class1_ranking, &c.true_class1)) + usize::from(hit(&c.class0_ranking, &c.true_class0)))
        .sum();
    Ok(T::lit(100.0) * T::lit(hits as f64) / T::lit((2 * cases.len()) as f64))
}

/// Names with the largest and the smallest bias; ties go to the earlier entry.
pub fn true_extremes<T: Scalar>(deltas: &[(String, T)]) -> Option<(String, String)> {
    let first = deltas.first()?;
    let (mut hi, mut lo) = (first, first);
    for d in &deltas[1..] {
        if d.1 > hi.1 {
            hi = d;
        }
        if d.1 < lo.1 {
            lo = d;
        }
    }
    Some((hi.0.clone(), lo.0.clone()))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::cells_dataset;
    use super::*;
    use proptest::prelude::*;

    fn rates(a: f64, b: f64, c: f64, d: f64) -> GroupRates<f64> {
        GroupRates {
            tpr_c: a,
            tpr_not_c: b,
            tnr_c: c,
            tnr_not_c: d,
            counts: GroupCounts::default(),
        }
    }

    fn four_groups() -> LabeledLatentDataset {
        // 4 positives with C, 2 positives without, 3 negatives with, 3 without
        let mut rows = vec![(1, true); 4];
        rows.extend([(1, false); 2]);
        rows.extend([(0, true); 3]);
        rows.extend([(0, false); 3]);
        cells_dataset(&rows)
    }

    #[test]
    fn perfect_predictions_give_unit_rates() {
        let ds = four_groups();
        let r: GroupRates<f64> = group_rates(&ds, ds.labels(), "c").unwrap();
        assert_eq!([r.tpr_c, r.tpr_not_c, r.tnr_c, r.tnr_not_c], [1.0; 4]);
        assert_eq!(delta_c(&r), 0.0);
    }

    #[test]
    fn always_one() {
        let ds = four_groups();
        let r: GroupRates<f64> = group_rates(&ds, &[1; 12], "c").unwrap();
        assert_eq!([r.tpr_c, r.tpr_not_c, r.tnr_c, r.tnr_not_c], [1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn half_of_positives_with_concept() {
        let ds = four_groups();
        let mut preds = ds.labels().to_vec();
        preds[0] = 0;
        preds[1] = 0;
        let r: GroupRates<f64> = group_rates(&ds, &preds, "c").unwrap();
        assert_eq!(r.tpr_c, 0.5);
        assert_eq!(r.counts.pos_c, CellTally { total: 4, correct: 2 });
    }

    #[test]
    fn empty_group_is_named() {
        let ds = cells_dataset(&[(1, true), (0, true), (0, false)]);
        let err = group_rates::<f64>(&ds, &[1, 0, 0], "c").unwrap_err();
        assert_eq!(err.to_string(), "empty subgroup y=1 without concept");
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta_c(&rates(1.0, 0.0, 0.0, 1.0)), 100.0);
        assert_eq!(delta_c(&rates(1.0, 0.0, 1.0, 0.0)), 0.0);
        assert_eq!(delta_c(&rates(0.7, 0.7, 0.7, 0.7)), 0.0);
        assert_eq!(delta_c(&rates(0.0, 1.0, 1.0, 0.0)), -100.0);
    }

    #[test]
    fn spearman_examples() {
        let a = [1.0, 2.5, 3.0, 10.0];
        assert_eq!(spearman(&a, &a).unwrap(), 1.0);
        let rev: Vec<f64> = a.iter().rev().copied().collect();
        assert_eq!(spearman(&a, &rev).unwrap(), -1.0);
        // rank-difference route: 1 - 6·2 / (3·8)
        assert!((spearman::<f64>(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn spearman_errors() {
        assert!(matches!(spearman(&[1.0, 2.0], &[1.0]), Err(EvalError::LengthMismatch(2, 1))));
        let err = spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap_err();
        assert_eq!(err.to_string(), "correlation undefined: constant input");
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn ties_get_mean_rank() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), [2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn topk_examples() {
        let case = TopKCase {
            class1_ranking: vec!["blond".into(), "hat".into(), "smile".into()],
            class0_ranking: vec!["beard".into()],
            true_class1: "hat".into(),
            true_class0: "beard".into(),
        };
        // class-0 hit plus class-1 miss at K=1
        assert_eq!(topk_accuracy::<f64>(std::slice::from_ref(&case), 1).unwrap(), 50.0);
        assert_eq!(topk_accuracy::<f64>(std::slice::from_ref(&case), 3).unwrap(), 100.0);
        let both_first = TopKCase {
            class1_ranking: vec!["hat".into()],
            ..case.clone()
        };
        assert_eq!(topk_accuracy::<f64>(&[both_first.clone(), both_first], 1).unwrap(), 100.0);
        let only_one = TopKCase {
            class0_ranking: vec!["smile".into()],
            class1_ranking: vec!["hat".into()],
            ..case
        };
        assert_eq!(topk_accuracy::<f64>(&[only_one.clone()], 1).unwrap(), 50.0);
        assert!(matches!(topk_accuracy::<f64>(&[only_one], 0), Err(EvalError::InvalidK)));
    }

    #[test]
    fn extremes() {
        let d = vec![("a".to_string(), 3.0), ("b".to_string(), -2.0), ("c".to_string(), 3.0)];
        assert_eq!(true_extremes(&d), Some(("a".into(), "b".into())));
    }

    proptest! {
        #[test]
        fn delta_is_antisymmetric_under_role_swap(
            a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in 0.0f64..=1.0, d in 0.0f64..=1.0,
        ) {
            let x = delta_c(&rates(a, b, c, d));
            let y = delta_c(&rates(c, d, a, b));
            prop_assert_eq!(x, -y);
            prop_assert!((-100.0..=100.0).contains(&x));
        }

        #[test]
        fn spearman_invariant_under_monotone_maps(
            a in proptest::collection::vec(-50i32..50, 3..20),
            b in proptest::collection::vec(-50i32..50, 3..20),
        ) {
            let n = a.len().min(b.len());
            let a: Vec<f64> = a[..n].iter().map(|&v| v as f64).collect();
            let b: Vec<f64> = b[..n].iter().map(|&v| v as f64).collect();
            if let Ok(r) = spearman(&a, &b) {
                let ta: Vec<f64> = a.iter().map(|v| (v / 10.0).exp()).collect();
                let tb: Vec<f64> = b.iter().map(|v| v * v * v + 7.0).collect();
                let r2 = spearman(&ta, &tb).unwrap();
                prop_assert!((r - r2).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }

        #[test]
        fn rates_are_proper_fractions(rows in proptest::collection::vec((0u8..2, any::<bool>(), 0u8..2), 4..40)) {
            let ds = cells_dataset(&rows.iter().map(|r| (r.0, r.1)).collect::<Vec<_>>());
            let preds: Vec<u8> = rows.iter().map(|r| r.2).collect();
            if let Ok(r) = group_rates::<f64>(&ds, &preds, "c") {
                for cell in [r.counts.pos_c, r.counts.pos_not_c, r.counts.neg_c, r.counts.neg_not_c] {
                    prop_assert!(cell.correct <= cell.total);
                }
                for v in [r.tpr_c, r.tpr_not_c, r.tnr_c, r.tnr_not_c] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }
}
