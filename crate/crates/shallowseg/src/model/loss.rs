use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, TensorId};
use crate::scalar::Scalar;

/// Weights of the BCE and soft-Dice terms.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct LossWeights {
    pub lambda_bce: f64,
    pub lambda_dice: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_bce: 1.0, lambda_dice: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        if self.lambda_bce < 0.0 || self.lambda_dice < 0.0 {
            return Err("loss weights must be non-negative".into());
        }
        Ok(())
    }
}

/// λ1·BCE(P,G) + λ2·DiceLoss(P,G) on post-sigmoid probabilities.
pub fn loss_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    p: TensorId,
    target: &[F],
    w: &LossWeights,
) -> TensorId {
    let bce = tape.bce_loss(p, target);
    let dice = tape.dice_loss(p, target);
    let a = tape.scale(bce, F::from_f64(w.lambda_bce));
    let b = tape.scale(dice, F::from_f64(w.lambda_dice));
    tape.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_prediction_is_near_zero() {
        let target: Vec<f64> = vec![1.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let mut t = Tape::new();
        let p = t.leaf(&[6], target.clone(), false);
        let loss = loss_on_tape(&mut t, p, &target, &LossWeights::default());
        assert!(t.scalar_value(loss) < 1e-3);
    }

    #[test]
    fn uniform_half_bce_is_ln2() {
        // P = 0.5 everywhere makes BCE exactly ln 2 independent of G.
        let target: Vec<f64> = (0..8).map(|i| f64::from(u8::from(i < 4))).collect();
        let mut t = Tape::new();
        let p = t.leaf(&[8], vec![0.5; 8], false);
        let bce = t.bce_loss(p, &target);
        assert!((t.scalar_value(bce) - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn loss_bounds() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = 24;
            let target: Vec<f64> = (0..n).map(|_| f64::from(u8::from(r.gen_bool(0.3)))).collect();
            let probs: Vec<f64> = (0..n).map(|_| r.gen_range(0.01..0.99)).collect();
            let mut t = Tape::new();
            let p = t.leaf(&[n], probs, false);
            let dice = t.dice_loss(p, &target);
            let bce = t.bce_loss(p, &target);
            let total = loss_on_tape(&mut t, p, &target, &LossWeights::default());
            let d = t.scalar_value(dice);
            assert!((0.0..1.0).contains(&d), "dice loss {d}");
            assert!(t.scalar_value(bce) >= 0.0);
            assert!(t.scalar_value(total) >= 0.0);
        }
    }

    #[test]
    fn full_loss_grad_check() {
        for seed in 0..10 {
            let mut r = ChaCha8Rng::seed_from_u64(seed + 900);
            let n = 20;
            let x0: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..2.0)).collect();
            let target: Vec<f64> = (0..n).map(|_| f64::from(u8::from(r.gen_bool(0.4)))).collect();
            let tgt = target.clone();
            let err = grad_check(
                move |t, x| {
                    let p = t.sigmoid(x);
                    loss_on_tape(t, p, &tgt, &LossWeights { lambda_bce: 1.0, lambda_dice: 1.0 })
                },
                &[n],
                &x0,
                1e-5,
            );
            assert!(err < 1e-4, "seed {seed}: rel err {err}");
        }
    }
}
