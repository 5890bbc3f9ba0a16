use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::loss::{loss_on_tape, LossWeights};
use super::network::{image_to_nchw, Network};
use crate::autodiff::Tape;
use crate::dataio::{augment, resize_sample, AugmentConfig, Sample};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss ({loss}) at step {step}; aborting run")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("training set is empty")]
    EmptyDataset,
}

/// SGD with classical momentum: v ← μ·v + g, w ← w − lr·v.
pub struct Sgd<F: Scalar> {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<F>>,
}

impl<F: Scalar> Sgd<F> {
    pub fn new(lr: f64, momentum: f64, net: &Network<F>) -> Self {
        assert!(lr >= 0.0, "learning rate must be non-negative");
        let velocity = net.params.iter().map(|p| vec![F::zero(); p.data.len()]).collect();
        Self { lr, momentum, velocity }
    }

    pub fn apply(&mut self, net: &mut Network<F>, grads: &[Vec<F>]) {
        let mu = F::from_f64(self.momentum);
        let lr = F::from_f64(self.lr);
        for ((param, vel), grad) in net.params.iter_mut().zip(&mut self.velocity).zip(grads) {
            for ((w, v), &g) in param.data.iter_mut().zip(vel.iter_mut()).zip(grad) {
                *v = mu * *v + g;
                *w = *w - lr * *v;
            }
        }
    }
}

/// One SGD step on a prepared NCHW batch. Returns the pre-update loss.
pub fn train_step<F: Scalar>(
    net: &mut Network<F>,
    opt: &mut Sgd<F>,
    images: Vec<F>,
    targets: &[F],
    batch: usize,
    h: usize,
    w: usize,
    weights: &LossWeights,
    step: usize,
) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let x = tape.leaf(&[batch, 3, h, w], images, false);
    let (logits, ids) = net.forward_on_tape(&mut tape, x, true);
    let p = tape.sigmoid(logits);
    let loss = loss_on_tape(&mut tape, p, targets, weights);
    let loss_value = tape.scalar_value(loss).to_f64();
    if !loss_value.is_finite() {
        return Err(TrainError::NonFiniteLoss { step, loss: loss_value });
    }
    tape.backward(loss);
    let grads: Vec<Vec<F>> = ids.iter().map(|&id| tape.grad(id).to_vec()).collect();
    opt.apply(net, &grads);
    Ok(loss_value)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrainSettings {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Seed for batch sampling; augmentation streams derive from the
    /// augment config's own seed.
    pub seed: u64,
    pub loss: LossWeights,
    pub augment: AugmentConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            lr: 0.04,
            momentum: 0.9,
            batch_size: 8,
            steps: 300,
            seed: 0,
            loss: LossWeights::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<(), String> {
        if self.lr <= 0.0 {
            return Err("learning rate must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err("momentum must lie in [0,1)".into());
        }
        if self.batch_size == 0 || self.steps == 0 {
            return Err("batch size and step count must be positive".into());
        }
        self.loss.validate()?;
        self.augment.validate()
    }
}

/// Mini-batch training loop. Per step: draw a batch and partners, augment
/// each sample (color exchange first, then geometry), pick one scale
/// multiplier for the whole batch, resize to that resolution and take an
/// SGD step. Fully deterministic in (settings, network seed).
pub fn train<F: Scalar>(
    net: &mut Network<F>,
    samples: &[Sample],
    settings: &TrainSettings,
    mut on_step: impl FnMut(usize, f64),
) -> Result<(), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    settings.validate().expect("invalid training settings");
    let mut opt = Sgd::new(settings.lr, settings.momentum, net);
    let base = net.config.input_size;
    // Per-sample augmentation keeps geometry only; the scale multiplier is
    // applied per batch so every sample in it shares one resolution.
    let per_sample_cfg = AugmentConfig { scales: vec![1.0], ..settings.augment.clone() };
    for step in 0..settings.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        rng.set_stream(u64::MAX - step as u64);
        let scale = settings.augment.scales[rng.gen_range(0..settings.augment.scales.len())];
        let res = (((base as f64) * scale).round() as usize).max(8);
        let mut images: Vec<F> = Vec::with_capacity(settings.batch_size * 3 * res * res);
        let mut targets: Vec<F> = Vec::with_capacity(settings.batch_size * res * res);
        for slot in 0..settings.batch_size {
            let idx = rng.gen_range(0..samples.len());
            let partner = &samples[rng.gen_range(0..samples.len())];
            let mut aug_rng = crate::dataio::rng_for_sample(
                settings.augment.seed,
                (step * settings.batch_size + slot) as u64,
            );
            let aug = augment(&samples[idx], partner, &per_sample_cfg, &mut aug_rng);
            let aug = resize_sample(&aug, res, res);
            images.extend(image_to_nchw::<F>(&aug.image));
            targets.extend(aug.mask.data.iter().map(|&v| F::from_f64(f64::from(v))));
        }
        let loss = train_step(
            net,
            &mut opt,
            images,
            &targets,
            settings.batch_size,
            res,
            res,
            &settings.loss,
            step,
        )?;
        on_step(step, loss);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synth_blobs, BlobSpec};
    use crate::model::NetworkConfig;

    fn tiny_net(seed: u64) -> Network<f64> {
        Network::new(NetworkConfig {
            input_size: 16,
            channels: [2, 3, 4],
            head_channels: 3,
            seed,
            ..NetworkConfig::default()
        })
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let mut net = tiny_net(0);
        let before = net.params.clone();
        let mut opt = Sgd::new(0.0, 0.9, &net);
        let images: Vec<f64> = (0..3 * 16 * 16).map(|i| (i % 9) as f64 / 9.0).collect();
        let targets: Vec<f64> = (0..16 * 16).map(|i| f64::from(u8::from(i % 7 == 0))).collect();
        train_step(&mut net, &mut opt, images, &targets, 1, 16, 16, &LossWeights::default(), 0)
            .unwrap();
        assert_eq!(net.params, before);
    }

    #[test]
    fn quadratic_surrogate_converges() {
        // Minimize w^2 with the same momentum update the network uses. The
        // trajectory oscillates (momentum overshoots), but it must settle
        // near the optimum.
        let mut w = 3.0f64;
        let mut v = 0.0f64;
        let (lr, mu) = (0.05, 0.9);
        for _ in 0..200 {
            v = mu * v + 2.0 * w;
            w -= lr * v;
        }
        assert!(w * w < 1e-6, "did not converge: w = {w}");
    }

    #[test]
    fn short_training_reduces_loss() {
        let data = synth_blobs(&BlobSpec::new(24, 16, 16, 11));
        for seed in [0u64, 1, 2] {
            let mut net = tiny_net(seed);
            let settings = TrainSettings {
                steps: 60,
                batch_size: 4,
                lr: 0.05,
                seed,
                augment: AugmentConfig::identity(),
                ..TrainSettings::default()
            };
            let mut losses = Vec::new();
            train(&mut net, &data, &settings, |_, l| losses.push(l)).unwrap();
            let early: f64 = losses[..10].iter().sum::<f64>() / 10.0;
            let late: f64 = losses[losses.len() - 10..].iter().sum::<f64>() / 10.0;
            assert!(late < early, "seed {seed}: {late} !< {early}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = synth_blobs(&BlobSpec::new(8, 16, 16, 2));
        let run = || {
            let mut net = tiny_net(3);
            let settings = TrainSettings { steps: 5, batch_size: 2, ..TrainSettings::default() };
            let mut losses = Vec::new();
            train(&mut net, &data, &settings, |_, l| losses.push(l)).unwrap();
            (losses, net.params)
        };
        let (l1, p1) = run();
        let (l2, p2) = run();
        assert_eq!(l1, l2);
        assert_eq!(p1, p2);
    }
}
