use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{k_cells, EvalError, KCells};
use crate::latent_io::{normalize_concept, LabeledLatentDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UndersampleSpec {
    pub concept: String,
    /// Class the concept is positively tied to.
    pub k: u8,
    pub theta: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Undersampled {
    pub dataset: LabeledLatentDataset,
    /// Retained row indices of the source, ascending.
    pub kept: Vec<usize>,
    pub theta_before: f64,
    pub theta_after: f64,
    pub agreement: usize,
    pub disagreement: usize,
}

/// Picks the candidate count whose ratio lands closest to the target;
/// ties go to the larger count.
fn closest(candidates: [usize; 2], error: impl Fn(usize) -> f64) -> usize {
    let [a, b] = candidates;
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if error(hi) <= error(lo) {
        hi
    } else {
        lo
    }
}

/// Splits `m` between two cells proportionally to their sizes, largest
/// remainder first.
fn proportional(m: usize, c1: usize, c2: usize) -> (usize, usize) {
    let total = c1 + c2;
    if total == 0 {
        return (0, 0);
    }
    let (q1, r1) = ((m * c1) / total, (m * c1) % total);
    let (q2, r2) = ((m * c2) / total, (m * c2) % total);
    match m - q1 - q2 {
        0 => (q1, q2),
        _ if r1 >= r2 => (q1 + 1, q2),
        _ => (q1, q2 + 1),
    }
}

/// Removes samples so the class/concept disagreement ratio approaches
/// `spec.theta`.
///
/// Only the side whose reduction moves the ratio toward the target shrinks:
/// the disagreement side to lower it, the agreement side to raise it. The
/// retained count on that side is the integer closest to the target ratio
/// (ties keep more samples), split proportionally between its two cells and
/// drawn uniformly within each cell from the seeded generator.
pub fn undersample(ds: &LabeledLatentDataset, spec: &UndersampleSpec) -> Result<Undersampled, EvalError> {
    let target = spec.theta;
    if !(0.0..=1.0).contains(&target) {
        return Err(EvalError::InvalidTheta(target));
    }
    let cells = k_cells(ds, &spec.concept, spec.k)?;
    let (a, d) = (cells.agreement(), cells.disagreement());
    if a == 0 {
        return Err(EvalError::ThetaUndefined);
    }
    let current = d as f64 / a as f64;

    let (keep_a, keep_d) = if current == target {
        (a, d)
    } else if target < current {
        let ideal = target * a as f64;
        let cand = [(ideal.floor() as usize).min(d), (ideal.ceil() as usize).min(d)];
        (a, closest(cand, |x| (x as f64 / a as f64 - target).abs()))
    } else {
        if d == 0 {
            return Err(EvalError::Unreachable {
                target,
                reason: format!(
                    "no disagreement samples for concept {:?}, class {}",
                    normalize_concept(&spec.concept),
                    spec.k
                ),
            });
        }
        let ideal = d as f64 / target;
        let cand = [
            (ideal.floor() as usize).clamp(1, a),
            (ideal.ceil() as usize).clamp(1, a),
        ];
        (closest(cand, |x| (d as f64 / x as f64 - target).abs()), d)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let KCells {
        mut k_with,
        mut other_without,
        mut k_without,
        mut other_with,
    } = cells;
    let (m1, m2) = proportional(keep_a, k_with.len(), other_without.len());
    let (m3, m4) = proportional(keep_d, k_without.len(), other_with.len());
    let mut kept = Vec::with_capacity(keep_a + keep_d);
    for (cell, m) in [
        (&mut k_with, m1),
        (&mut other_without, m2),
        (&mut k_without, m3),
        (&mut other_with, m4),
    ] {
        if m < cell.len() {
            cell.shuffle(&mut rng);
        }
        kept.extend_from_slice(&cell[..m]);
    }
    kept.sort_unstable();

    let dataset = ds.select(&kept, ds.split())?;
    Ok(Undersampled {
        dataset,
        kept,
        theta_before: current,
        theta_after: keep_d as f64 / keep_a as f64,
        agreement: keep_a,
        disagreement: keep_d,
    })
}

#[cfg(test)]
mod tests {
    use super::super::testutil::counted;
    use super::super::theta_of;
    use super::*;

    fn spec(theta: f64) -> UndersampleSpec {
        UndersampleSpec {
            concept: "c".into(),
            k: 1,
            theta,
            seed: 3,
        }
    }

    #[test]
    fn lowers_quarter_to_tenth() {
        let ds = counted(1, 40, 40, 10, 10);
        let out = undersample(&ds, &spec(0.1)).unwrap();
        assert_eq!((out.agreement, out.disagreement), (80, 8));
        assert_eq!(theta_of(&out.dataset, "c", 1).unwrap(), 0.1);
        assert_eq!(out.theta_before, 0.25);
    }

    #[test]
    fn zero_target_empties_disagreement() {
        let ds = counted(1, 40, 40, 10, 10);
        let out = undersample(&ds, &spec(0.0)).unwrap();
        assert_eq!(out.disagreement, 0);
        assert_eq!(theta_of(&out.dataset, "c", 1).unwrap(), 0.0);
    }

    #[test]
    fn current_target_is_identity() {
        let ds = counted(1, 40, 40, 10, 10);
        let out = undersample(&ds, &spec(0.25)).unwrap();
        assert_eq!(out.dataset, ds);
    }

    #[test]
    fn raises_by_shrinking_agreement() {
        let ds = counted(1, 40, 40, 10, 10);
        let out = undersample(&ds, &spec(0.4)).unwrap();
        assert_eq!((out.agreement, out.disagreement), (50, 20));
        assert_eq!(theta_of(&out.dataset, "c", 1).unwrap(), 0.4);
    }

    #[test]
    fn unreachable_without_disagreement() {
        let ds = counted(1, 4, 4, 0, 0);
        assert!(matches!(undersample(&ds, &spec(0.5)), Err(EvalError::Unreachable { .. })));
    }

    #[test]
    fn rejects_out_of_range_theta() {
        let ds = counted(1, 4, 4, 1, 1);
        assert!(matches!(undersample(&ds, &spec(1.5)), Err(EvalError::InvalidTheta(_))));
        assert!(undersample(&ds, &spec(f64::NAN)).is_err());
    }

    #[test]
    fn cells_shrink_proportionally() {
        // disagreement cells 30 and 10 shrink to 12 total: 9 and 3
        let ds = counted(1, 50, 50, 30, 10);
        let out = undersample(&ds, &spec(0.12)).unwrap();
        let cells = k_cells(&out.dataset, "c", 1).unwrap();
        assert_eq!((cells.k_without.len(), cells.other_with.len()), (9, 3));
        assert_eq!(cells.agreement(), 100);
    }

    #[test]
    fn seeded_and_order_preserving() {
        let ds = counted(1, 40, 40, 10, 10);
        let a = undersample(&ds, &spec(0.05)).unwrap();
        let b = undersample(&ds, &spec(0.05)).unwrap();
        assert_eq!(a.kept, b.kept);
        assert!(a.kept.windows(2).all(|w| w[0] < w[1]));
        let other = undersample(&ds, &UndersampleSpec { seed: 99, ..spec(0.05) }).unwrap();
        assert_eq!(other.kept.len(), a.kept.len());
    }

    #[test]
    fn proportional_allocation() {
        assert_eq!(proportional(12, 30, 10), (9, 3));
        assert_eq!(proportional(5, 1, 1), (3, 2));
        assert_eq!(proportional(0, 3, 4), (0, 0));
        assert_eq!(proportional(7, 0, 9), (0, 7));
    }
}
