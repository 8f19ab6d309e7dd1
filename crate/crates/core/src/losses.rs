//! Training objectives: HR reconstruction, triplet contrastive, LR
//! reconstruction, and the noise-prediction loss.
//!
//! These are the pure (tensor -> value) forms used by oracles, logging and
//! evaluation. Training differentiates the equivalent graph ops in
//! [`crate::nn`]; both compute the same formulas.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Scalar loss with an optional per-term breakdown.
#[derive(Debug, Clone)]
pub struct LossValue<T> {
    pub scalar: T,
    pub components: Vec<(String, T)>,
}

impl<T: Scalar> LossValue<T> {
    pub fn simple(scalar: T) -> Self {
        LossValue {
            scalar,
            components: Vec::new(),
        }
    }
}

fn mean_squared<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, what: &str) -> Result<T> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!(
            "{what}: prediction {:?} vs target {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    if pred.numel() == 0 {
        return Err(Error::Shape(format!("{what}: empty tensors")));
    }
    let mut acc = T::zero();
    for (p, g) in pred.data().iter().zip(gt.data().iter()) {
        let d = *p - *g;
        acc = acc + d * d;
    }
    Ok(acc / T::cast_usize(pred.numel()))
}

/// HR reconstruction loss: squared error averaged over the batch and all
/// pixels/channels (per-pixel averaging keeps it resolution-independent).
pub fn loss_rh<T: Scalar>(pred_hr: &Tensor<T>, gt_hr: &Tensor<T>) -> Result<LossValue<T>> {
    Ok(LossValue::simple(mean_squared(pred_hr, gt_hr, "loss_rh")?))
}

/// LR reconstruction loss; same form as [`loss_rh`] on LR-shaped batches.
pub fn loss_rl<T: Scalar>(pred_lr: &Tensor<T>, gt_lr: &Tensor<T>) -> Result<LossValue<T>> {
    Ok(LossValue::simple(mean_squared(pred_lr, gt_lr, "loss_rl")?))
}

/// Noise-prediction loss: mean squared error over all elements.
pub fn loss_eps<T: Scalar>(eps_true: &Tensor<T>, eps_pred: &Tensor<T>) -> Result<LossValue<T>> {
    Ok(LossValue::simple(mean_squared(
        eps_pred, eps_true, "loss_eps",
    )?))
}

/// Triplet contrastive loss:
/// `sum_i max(0, d(a, p_i) - d(a, n_i) + margin)` with `d` the Euclidean
/// distance. Positive `i` is paired with negative `i` by index; permuting
/// positives and negatives is only loss-preserving when both are permuted
/// together.
pub fn loss_cl<T: Scalar>(
    anchor: &Tensor<T>,
    positives: &[Tensor<T>],
    negatives: &[Tensor<T>],
    margin: T,
) -> Result<LossValue<T>> {
    if margin < T::zero() {
        return Err(Error::Param(format!("margin must be >= 0, got {margin}")));
    }
    if positives.len() != negatives.len() || positives.is_empty() {
        return Err(Error::Param(format!(
            "need equal, non-zero positive/negative counts, got {} and {}",
            positives.len(),
            negatives.len()
        )));
    }
    let mut total = T::zero();
    for (p, n) in positives.iter().zip(negatives.iter()) {
        if p.shape() != anchor.shape() || n.shape() != anchor.shape() {
            return Err(Error::Shape(
                "loss_cl: representation shapes must match the anchor".into(),
            ));
        }
        let dp = T::cast(anchor.l2_distance(p));
        let dn = T::cast(anchor.l2_distance(n));
        let term = dp - dn + margin;
        if term > T::zero() {
            total = total + term;
        }
    }
    Ok(LossValue::simple(total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_tensor, stream_rng};
    use proptest::prelude::*;

    fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
        normal_tensor(shape, &mut stream_rng(seed, 0))
    }

    #[test]
    fn identical_batches_give_exact_zero() {
        let a = rand_t(&[4, 3, 5, 5], 1);
        assert_eq!(loss_rh(&a, &a).unwrap().scalar, 0.0);
        assert_eq!(loss_rl(&a, &a).unwrap().scalar, 0.0);
        assert_eq!(loss_eps(&a, &a).unwrap().scalar, 0.0);
    }

    #[test]
    fn constant_offset_closed_forms() {
        let gt = rand_t(&[2, 3, 4, 4], 2);
        let pred = gt.map(|v| v + 0.1);
        assert!((loss_rh(&pred, &gt).unwrap().scalar - 0.01).abs() < 1e-12);
        let pred2 = gt.map(|v| v + 0.2);
        assert!((loss_rl(&pred2, &gt).unwrap().scalar - 0.04).abs() < 1e-12);
    }

    #[test]
    fn mse_matches_scalar_loop_oracle() {
        for seed in 0..20 {
            let a = rand_t(&[3, 2, 4, 6], seed);
            let b = rand_t(&[3, 2, 4, 6], seed + 100);
            let mut acc = 0.0f64;
            for i in 0..a.numel() {
                let d = a.data()[i] - b.data()[i];
                acc += d * d;
            }
            let oracle = acc / a.numel() as f64;
            assert!((loss_rh(&a, &b).unwrap().scalar - oracle).abs() < 1e-9);
            assert!((loss_eps(&a, &b).unwrap().scalar - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn eps_loss_of_zero_prediction_approaches_unit_variance() {
        let eps = rand_t(&[1_000_000], 7);
        let zero = Tensor::zeros(&[1_000_000]);
        let loss = loss_eps(&eps, &zero).unwrap().scalar;
        assert!((loss - 1.0).abs() < 0.01, "loss {loss}");
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = rand_t(&[2, 3], 1);
        let b = rand_t(&[3, 2], 2);
        assert!(loss_rh(&a, &b).is_err());
    }

    /// Representation at a given distance from the origin-anchor.
    fn at_distance(d: f64, dim: usize) -> Tensor<f64> {
        let mut t = Tensor::zeros(&[dim]);
        t.data_mut()[0] = d;
        t
    }

    #[test]
    fn hinge_inactive_case_is_exact_zero() {
        let anchor = Tensor::<f64>::zeros(&[8]);
        let loss = loss_cl(&anchor, &[at_distance(0.0, 8)], &[at_distance(1.0, 8)], 0.01).unwrap();
        assert_eq!(loss.scalar, 0.0);
    }

    #[test]
    fn hinge_active_case_hand_value() {
        let anchor = Tensor::<f64>::zeros(&[8]);
        let loss = loss_cl(&anchor, &[at_distance(1.0, 8)], &[at_distance(0.5, 8)], 0.01).unwrap();
        assert!((loss.scalar - 0.51).abs() < 1e-12);
    }

    #[test]
    fn sum_semantics_over_three_identical_triplets() {
        let anchor = Tensor::<f64>::zeros(&[8]);
        let pos = vec![at_distance(1.0, 8); 3];
        let neg = vec![at_distance(0.5, 8); 3];
        let loss = loss_cl(&anchor, &pos, &neg, 0.01).unwrap();
        assert!((loss.scalar - 1.53).abs() < 1e-12);
    }

    #[test]
    fn triplet_matches_scalar_oracle() {
        for seed in 0..20 {
            let anchor = rand_t(&[16], seed);
            let pos: Vec<_> = (0..3).map(|i| rand_t(&[16], 100 + seed * 3 + i)).collect();
            let neg: Vec<_> = (0..3).map(|i| rand_t(&[16], 500 + seed * 3 + i)).collect();
            let mut oracle = 0.0f64;
            for i in 0..3 {
                let dp: f64 = anchor
                    .data()
                    .iter()
                    .zip(pos[i].data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let dn: f64 = anchor
                    .data()
                    .iter()
                    .zip(neg[i].data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                oracle += (dp - dn + 0.01).max(0.0);
            }
            let got = loss_cl(&anchor, &pos, &neg, 0.01).unwrap().scalar;
            assert!((got - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn negative_margin_and_length_mismatch_rejected() {
        let anchor = Tensor::<f64>::zeros(&[4]);
        let p = vec![at_distance(1.0, 4)];
        let n = vec![at_distance(1.0, 4)];
        assert!(loss_cl(&anchor, &p, &n, -0.1).is_err());
        assert!(loss_cl(&anchor, &p, &[], 0.01).is_err());
    }

    #[test]
    fn joint_permutation_preserves_loss_but_independent_does_not() {
        let anchor = rand_t(&[8], 42);
        let pos: Vec<_> = (0..3).map(|i| rand_t(&[8], 200 + i)).collect();
        let neg: Vec<_> = (0..3).map(|i| rand_t(&[8], 300 + i)).collect();
        let base = loss_cl(&anchor, &pos, &neg, 0.5).unwrap().scalar;

        let perm = [2usize, 0, 1];
        let pos_p: Vec<_> = perm.iter().map(|&i| pos[i].clone()).collect();
        let neg_p: Vec<_> = perm.iter().map(|&i| neg[i].clone()).collect();
        let joint = loss_cl(&anchor, &pos_p, &neg_p, 0.5).unwrap().scalar;
        assert!((base - joint).abs() < 1e-12);

        // Permuting only positives changes the per-index pairing.
        let solo = loss_cl(&anchor, &pos_p, &neg, 0.5).unwrap().scalar;
        assert!((base - solo).abs() > 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn losses_are_non_negative(seed in 0u64..500) {
            let a = rand_t(&[2, 3, 3], seed);
            let b = rand_t(&[2, 3, 3], seed + 1000);
            prop_assert!(loss_rh(&a, &b).unwrap().scalar >= 0.0);
            let anchor = rand_t(&[6], seed + 2000);
            let p = vec![rand_t(&[6], seed + 3000)];
            let n = vec![rand_t(&[6], seed + 4000)];
            prop_assert!(loss_cl(&anchor, &p, &n, 0.01).unwrap().scalar >= 0.0);
        }

        #[test]
        fn triplet_loss_monotone_in_margin(seed in 0u64..500, m1 in 0.0f64..1.0, dm in 0.0f64..1.0) {
            let anchor = rand_t(&[6], seed);
            let p: Vec<_> = (0..2).map(|i| rand_t(&[6], seed + 10 + i)).collect();
            let n: Vec<_> = (0..2).map(|i| rand_t(&[6], seed + 20 + i)).collect();
            let lo = loss_cl(&anchor, &p, &n, m1).unwrap().scalar;
            let hi = loss_cl(&anchor, &p, &n, m1 + dm).unwrap().scalar;
            prop_assert!(hi >= lo);
        }
    }
}
