//! Bias-free two-class linear probe over frozen latent features.
//!
//! Logits are `W z` with `W` a `2 × d` matrix and no additive offset; the
//! decision boundary is therefore a hyperplane through the origin, with unit
//! normal `(w1 - w0) / ‖w1 - w0‖`.

mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latent_io::{EmbeddingMatrix, LatentIoError};
use crate::scalar::{dot, norm, to_scalars, Scalar};

pub use train::{
    cross_entropy, cross_entropy_gradient, train, EpochRecord, StopReason, TrainConfig, TrainLog,
};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("dimension mismatch: probe has d={expected}, input has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("degenerate probe: w1 equals w0, normal undefined")]
    Degenerate,
    #[error("training split contains a single class")]
    SingleClass,
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite weights")]
    NonFinite,
    #[error(transparent)]
    Io(#[from] LatentIoError),
    #[error("probe file: {0}")]
    Format(String),
}

/// The two weight rows `w0`, `w1` of a bias-free probe.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe<T> {
    w0: Vec<T>,
    w1: Vec<T>,
}

impl<T: Scalar> LinearProbe<T> {
    pub fn new(w0: Vec<T>, w1: Vec<T>) -> Result<Self, ProbeError> {
        if w0.len() != w1.len() {
            return Err(ProbeError::DimensionMismatch {
                expected: w0.len(),
                actual: w1.len(),
            });
        }
        if w0.iter().chain(&w1).any(|v| !v.is_finite()) {
            return Err(ProbeError::NonFinite);
        }
        Ok(Self { w0, w1 })
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            w0: vec![T::zero(); d],
            w1: vec![T::zero(); d],
        }
    }

    pub fn dim(&self) -> usize {
        self.w0.len()
    }

    pub fn w0(&self) -> &[T] {
        &self.w0
    }

    pub fn w1(&self) -> &[T] {
        &self.w1
    }

    pub(crate) fn rows_mut(&mut self) -> (&mut [T], &mut [T]) {
        (&mut self.w0, &mut self.w1)
    }

    fn check_dim(&self, z: &[T]) -> Result<(), ProbeError> {
        if z.len() != self.dim() {
            return Err(ProbeError::DimensionMismatch {
                expected: self.dim(),
                actual: z.len(),
            });
        }
        Ok(())
    }

    /// `W z`.
    pub fn logits(&self, z: &[T]) -> Result<[T; 2], ProbeError> {
        self.check_dim(z)?;
        Ok([dot(&self.w0, z), dot(&self.w1, z)])
    }

    /// `w1 - w0` with its norm, rejecting a zero or non-finite difference.
    fn difference(&self) -> Result<(Vec<T>, T), ProbeError> {
        let diff: Vec<T> = self.w1.iter().zip(&self.w0).map(|(&a, &b)| a - b).collect();
        let len = norm(&diff);
        if len == T::zero() || !len.is_finite() {
            return Err(ProbeError::Degenerate);
        }
        Ok((diff, len))
    }

    /// Unit normal of the decision hyperplane, pointing toward class 1.
    pub fn normal_vector(&self) -> Result<Vec<T>, ProbeError> {
        let (diff, len) = self.difference()?;
        Ok(diff.into_iter().map(|v| v / len).collect())
    }

    /// Class 1 iff `n · z >= 0`. The sign is taken from the unnormalized
    /// difference so exact ties stay exact.
    pub fn predict(&self, z: &[T]) -> Result<u8, ProbeError> {
        self.check_dim(z)?;
        let (diff, _) = self.difference()?;
        Ok(side(&diff, z))
    }

    /// Predicts every row of `m`, computing the normal once.
    pub fn predict_matrix(&self, m: &EmbeddingMatrix) -> Result<Vec<u8>, ProbeError> {
        if m.d() != self.dim() {
            return Err(ProbeError::DimensionMismatch {
                expected: self.dim(),
                actual: m.d(),
            });
        }
        let (diff, _) = self.difference()?;
        Ok(m.rows().map(|r| side(&diff, &to_scalars::<T>(r))).collect())
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            w0: self.w0.iter().map(|&v| v * c).collect(),
            w1: self.w1.iter().map(|&v| v * c).collect(),
        }
    }

    pub fn to_file(&self) -> ProbeFile {
        ProbeFile {
            d: self.dim(),
            w0: self.w0.iter().map(|v| v.as_f64()).collect(),
            w1: self.w1.iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn from_file(file: &ProbeFile) -> Result<Self, ProbeError> {
        if file.w0.len() != file.d || file.w1.len() != file.d {
            return Err(ProbeError::Format(format!(
                "declared d={} but rows have {} and {} entries",
                file.d,
                file.w0.len(),
                file.w1.len()
            )));
        }
        Self::new(
            file.w0.iter().map(|&v| T::lit(v)).collect(),
            file.w1.iter().map(|&v| T::lit(v)).collect(),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("probe serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ProbeError> {
        let file: ProbeFile = serde_json::from_str(s).map_err(|e| ProbeError::Format(e.to_string()))?;
        Self::from_file(&file)
    }
}

fn side<T: Scalar>(normal: &[T], z: &[T]) -> u8 {
    u8::from(dot(normal, z) >= T::zero())
}

/// On-disk probe: `{"d": .., "w0": [..], "w1": [..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeFile {
    pub d: usize,
    pub w0: Vec<f64>,
    pub w1: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn probe(w0: &[f64], w1: &[f64]) -> LinearProbe<f64> {
        LinearProbe::new(w0.to_vec(), w1.to_vec()).unwrap()
    }

    #[test]
    fn logits_identity_rows() {
        assert_eq!(probe(&[1.0, 0.0], &[0.0, 1.0]).logits(&[3.0, 4.0]).unwrap(), [3.0, 4.0]);
    }

    #[test]
    fn logits_zero_weights() {
        assert_eq!(LinearProbe::<f64>::zeros(2).logits(&[3.0, 4.0]).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn logits_hand_product() {
        assert_eq!(probe(&[1.0, 1.0], &[2.0, 0.0]).logits(&[1.0, 2.0]).unwrap(), [3.0, 2.0]);
    }

    #[test]
    fn logits_dimension_mismatch() {
        assert!(matches!(
            probe(&[1.0, 1.0], &[2.0, 0.0]).logits(&[1.0]),
            Err(ProbeError::DimensionMismatch { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn normal_three_four_five() {
        let n = probe(&[3.0, 0.0], &[0.0, 4.0]).normal_vector().unwrap();
        assert!((n[0] + 0.6).abs() < 1e-15 && (n[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normal_axis_aligned() {
        assert_eq!(probe(&[0.0, 0.0], &[0.0, 2.0]).normal_vector().unwrap(), [0.0, 1.0]);
    }

    #[test]
    fn normal_degenerate() {
        let err = probe(&[1.0, 2.0], &[1.0, 2.0]).normal_vector().unwrap_err();
        assert_eq!(err.to_string(), "degenerate probe: w1 equals w0, normal undefined");
        assert!(matches!(probe(&[1.0, 2.0], &[1.0, 2.0]).predict(&[1.0, 0.0]), Err(ProbeError::Degenerate)));
    }

    #[test]
    fn predict_examples() {
        // normal (-0.6, 0.8)
        let p = probe(&[3.0, 0.0], &[0.0, 4.0]);
        assert_eq!(p.predict(&[1.0, 1.0]).unwrap(), 1);
        assert_eq!(p.predict(&[1.0, 0.0]).unwrap(), 0);
        assert_eq!(p.predict(&[0.0, 0.0]).unwrap(), 1);
        // exact tie on the boundary: n = (-1, 1)/sqrt2
        let q = probe(&[1.0, 0.0], &[0.0, 1.0]);
        assert_eq!(q.logits(&[1.0, 1.0]).unwrap(), [1.0, 1.0]);
        assert_eq!(q.predict(&[1.0, 1.0]).unwrap(), 1);
    }

    #[test]
    fn integer_ties_agree_with_argmax() {
        let grid = [-2.0, -1.0, 0.0, 1.0, 2.0];
        for &a in &grid {
            for &b in &grid {
                for &c in &grid {
                    let p = probe(&[0.0, 0.0, 0.0], &[a, b, c]);
                    if p.normal_vector().is_err() {
                        continue;
                    }
                    for &x in &grid {
                        for &y in &grid {
                            for &z in &grid {
                                let l = p.logits(&[x, y, z]).unwrap();
                                let want = u8::from(l[1] >= l[0]);
                                assert_eq!(p.predict(&[x, y, z]).unwrap(), want);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let p = probe(&[0.1, -1.0 / 3.0], &[1e-300, 2.5]);
        let back = LinearProbe::<f64>::from_json(&p.to_json()).unwrap();
        assert_eq!(p, back);
        assert!(p.to_json().starts_with(r#"{"d":2,"w0":["#));
    }

    #[test]
    fn probe_file_rejects_wrong_lengths() {
        assert!(LinearProbe::<f64>::from_json(r#"{"d":3,"w0":[1,2],"w1":[1,2]}"#).is_err());
    }

    #[test]
    fn single_precision_probe() {
        let p = LinearProbe::<f32>::new(vec![3.0, 0.0], vec![0.0, 4.0]).unwrap();
        let n = p.normal_vector().unwrap();
        assert!((n[0] + 0.6).abs() < 1e-6);
        assert_eq!(p.predict(&[1.0, 1.0]).unwrap(), 1);
    }

    proptest! {
        #[test]
        fn geometry_is_scale_covariant(
            w0 in proptest::collection::vec(-5.0f64..5.0, 4),
            w1 in proptest::collection::vec(-5.0f64..5.0, 4),
            z in proptest::collection::vec(-5.0f64..5.0, 4),
            c in 0.01f64..100.0,
        ) {
            let p = LinearProbe::new(w0, w1).unwrap();
            prop_assume!(p.normal_vector().is_ok());
            let q = p.scaled(c);
            let (n, m) = (p.normal_vector().unwrap(), q.normal_vector().unwrap());
            for (a, b) in n.iter().zip(&m) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let margin = dot(&n, &z);
            prop_assume!(margin.abs() > 1e-9);
            prop_assert_eq!(p.predict(&z).unwrap(), q.predict(&z).unwrap());
        }

        #[test]
        fn normal_is_unit(
            w0 in proptest::collection::vec(-5.0f64..5.0, 1..9),
            seed in -5.0f64..5.0,
        ) {
            let w1: Vec<f64> = w0.iter().enumerate().map(|(i, v)| v + seed + i as f64 * 0.5).collect();
            let p = LinearProbe::new(w0, w1).unwrap();
            prop_assume!(p.normal_vector().is_ok());
            prop_assert!((norm(&p.normal_vector().unwrap()) - 1.0).abs() < 1e-6);
        }
    }
}
