use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::IouAccumulator;
use super::net::{DmmnModel, PatchInput};
use super::tensor::{Real, Tensor};
use crate::error::{DialError, Result};
use crate::patch::{DatasetSplit, LossWeights, PatchRecord};
use crate::raster::LabelRaster;
use crate::seed::SeedBuilder;
use crate::workers::Workers;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Random multiples of 90°.
    pub rotation: bool,
    /// Independent horizontal and vertical flips, each with probability 1/2.
    pub flips: bool,
    /// Per-channel brightness and contrast factors drawn from `[1-j, 1+j]`;
    /// zero disables.
    pub color_jitter: f64,
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            rotation: false,
            flips: false,
            color_jitter: 0.0,
        }
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation: true,
            flips: true,
            color_jitter: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub augment: AugmentConfig,
    pub loss_weights: LossWeights,
    pub seed: u64,
    pub workers: usize,
}

impl TrainConfig {
    pub fn initial(loss_weights: LossWeights) -> Self {
        TrainConfig {
            learning_rate: 5e-5,
            momentum: 0.99,
            weight_decay: 1e-4,
            epochs: 30,
            batch_size: 8,
            augment: AugmentConfig::default(),
            loss_weights,
            seed: 0,
            workers: 1,
        }
    }

    pub fn finetune(loss_weights: LossWeights) -> Self {
        TrainConfig {
            learning_rate: 5e-6,
            epochs: 10,
            ..TrainConfig::initial(loss_weights)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DialError::InvalidConfig(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.workers == 0 {
            return bad("epochs, batch_size and workers must be at least 1");
        }
        if !(0.0..1.0).contains(&self.augment.color_jitter) {
            return bad("color_jitter must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_miou: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch.checked_sub(1)?)
    }
}

/// Square-grid symmetry: optional flips, then `rot` quarter turns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Geometry {
    pub rot: u8,
    pub hflip: bool,
    pub vflip: bool,
}

impl Geometry {
    /// Source pixel for output pixel `(x, y)` of an `n × n` grid.
    fn source(&self, x: usize, y: usize, n: usize) -> (usize, usize) {
        let (mut x, mut y) = (x, y);
        if self.hflip {
            x = n - 1 - x;
        }
        if self.vflip {
            y = n - 1 - y;
        }
        for _ in 0..self.rot {
            (x, y) = (y, n - 1 - x);
        }
        (x, y)
    }

    pub fn is_identity(&self) -> bool {
        *self == Geometry::default()
    }

    pub fn apply_tensor<F: Real>(&self, t: &Tensor<F>) -> Tensor<F> {
        if self.is_identity() {
            return t.clone();
        }
        let n = t.w;
        let mut out = Tensor::zeros(t.c, t.h, t.w);
        for c in 0..t.c {
            let src = t.plane(c);
            let dst = out.plane_mut(c);
            for y in 0..n {
                for x in 0..n {
                    let (sx, sy) = self.source(x, y, n);
                    dst[y * n + x] = src[sy * n + sx];
                }
            }
        }
        out
    }

    pub fn apply_labels(&self, r: &LabelRaster) -> LabelRaster {
        if self.is_identity() {
            return r.clone();
        }
        let n = r.width();
        let mut out = LabelRaster::unlabeled(n, n);
        for y in 0..n {
            for x in 0..n {
                let (sx, sy) = self.source(x, y, n);
                out.set(x, y, r.get(sx, sy));
            }
        }
        out
    }
}

fn jitter(t: &mut Tensor<f32>, brightness: &[f32; 3], contrast: &[f32; 3]) {
    for c in 0..3 {
        let plane = t.plane_mut(c);
        let mean = plane.iter().sum::<f32>() / plane.len() as f32;
        for v in plane {
            *v = (((*v - mean) * contrast[c] + mean) * brightness[c]).clamp(0.0, 1.0);
        }
    }
}

/// Concrete draw of the augmentation for one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augmentation {
    pub geometry: Geometry,
    pub brightness: [f32; 3],
    pub contrast: [f32; 3],
}

impl Augmentation {
    pub fn identity() -> Self {
        Augmentation {
            geometry: Geometry::default(),
            brightness: [1.0; 3],
            contrast: [1.0; 3],
        }
    }

    pub fn draw(cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut a = Augmentation::identity();
        if cfg.rotation {
            a.geometry.rot = rng.random_range(0..4);
        }
        if cfg.flips {
            a.geometry.hflip = rng.random_bool(0.5);
            a.geometry.vflip = rng.random_bool(0.5);
        }
        if cfg.color_jitter > 0.0 {
            let j = cfg.color_jitter as f32;
            a.brightness = std::array::from_fn(|_| rng.random_range(1.0 - j..=1.0 + j));
            a.contrast = std::array::from_fn(|_| rng.random_range(1.0 - j..=1.0 + j));
        }
        a
    }

    /// The same geometry and color factors go to all three magnifications.
    pub fn apply(&self, record: &PatchRecord) -> (PatchInput<f32>, LabelRaster) {
        let g = self.geometry;
        let input = PatchInput::<f32>::from_record(record);
        let mut out = PatchInput {
            x20: g.apply_tensor(&input.x20),
            x10: g.apply_tensor(&input.x10),
            x5: g.apply_tensor(&input.x5),
        };
        if self.brightness != [1.0; 3] || self.contrast != [1.0; 3] {
            for t in [&mut out.x20, &mut out.x10, &mut out.x5] {
                jitter(t, &self.brightness, &self.contrast);
            }
        }
        (out, g.apply_labels(&record.target))
    }
}

pub fn augment(
    record: &PatchRecord,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> (PatchInput<f32>, LabelRaster) {
    Augmentation::draw(cfg, rng).apply(record)
}

/// Validation mIOU of `model` on un-augmented patches.
pub fn evaluate(model: &DmmnModel, patches: &[PatchRecord], workers: &Workers) -> Result<f64> {
    let preds = workers.map(patches.len(), |i| {
        model.predict(&PatchInput::from_record(&patches[i]))
    });
    let mut acc = IouAccumulator::default();
    for (pred, p) in preds.into_iter().zip(patches) {
        acc.add(&pred?, &p.target)?;
    }
    acc.miou()
}

pub fn train(
    model: &DmmnModel,
    split: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<(DmmnModel, TrainHistory)> {
    train_with_progress(model, split, cfg, |_| {})
}

/// SGD with momentum and weight decay (`v ← μv + g + λp`, `p ← p − ηv`).
/// After every epoch the model is scored on the validation side and the
/// parameters of the best-scoring epoch (earliest on ties) are returned.
pub fn train_with_progress(
    model: &DmmnModel,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<(DmmnModel, TrainHistory)> {
    cfg.validate()?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(DialError::Split(
            "training needs patches on both sides".into(),
        ));
    }
    let workers = Workers::new(cfg.workers)?;
    let n_params = model.params().len();
    let mut current = model.clone();
    let mut velocity = vec![0f32; n_params];
    let mut best: Option<(f64, DmmnModel)> = None;
    let mut history = TrainHistory::default();
    let (lr, mu, wd) = (
        cfg.learning_rate as f32,
        cfg.momentum as f32,
        cfg.weight_decay as f32,
    );
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(
            &mut SeedBuilder::new("shuffle")
                .u64(cfg.seed)
                .u64(epoch as u64)
                .rng(),
        );
        let (mut epoch_sum, mut epoch_n) = (0.0, 0u64);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<_> = batch
                .iter()
                .map(|&i| {
                    let mut rng = SeedBuilder::new("augment")
                        .u64(cfg.seed)
                        .u64(epoch as u64)
                        .u64(i as u64)
                        .rng();
                    augment(&split.train[i], &cfg.augment, &mut rng)
                })
                .collect();
            let labeled: usize = samples.iter().map(|(_, t)| t.labeled_count()).sum();
            if labeled == 0 {
                continue;
            }
            let scale = 1.0 / labeled as f64;
            let net = &current;
            let parts = workers.map(samples.len(), |k| {
                let mut g = vec![0f32; n_params];
                let (input, target) = &samples[k];
                net.accumulate_gradient(input, target, &cfg.loss_weights, scale, &mut g)
                    .map(|(s, _)| (g, s))
            });
            let mut grad = vec![0f32; n_params];
            let mut batch_sum = 0.0;
            for part in parts {
                let (g, s) = part?;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
                batch_sum += s;
            }
            let batch_loss = batch_sum / labeled as f64;
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(DialError::Diverged {
                    epoch,
                    step,
                    loss: batch_loss,
                });
            }
            epoch_sum += batch_sum;
            epoch_n += labeled as u64;
            for ((p, v), g) in current
                .params_mut()
                .iter_mut()
                .zip(&mut velocity)
                .zip(&grad)
            {
                *v = mu * *v + g + wd * *p;
                *p -= lr * *v;
            }
        }
        let val_miou = evaluate(&current, &split.val, &workers)?;
        let record = EpochRecord {
            epoch,
            train_loss: if epoch_n > 0 {
                epoch_sum / epoch_n as f64
            } else {
                0.0
            },
            val_miou,
        };
        progress(&record);
        history.epochs.push(record);
        if best.as_ref().is_none_or(|(m, _)| val_miou > *m) {
            best = Some((val_miou, current.clone()));
            history.best_epoch = epoch;
        }
    }
    let (_, model) = best.expect("at least one epoch");
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_is_a_permutation() {
        let n = 5;
        for rot in 0..4 {
            for (hflip, vflip) in [(false, false), (true, false), (false, true), (true, true)] {
                let g = Geometry { rot, hflip, vflip };
                let mut seen = vec![false; n * n];
                for y in 0..n {
                    for x in 0..n {
                        let (sx, sy) = g.source(x, y, n);
                        seen[sy * n + sx] = true;
                    }
                }
                assert!(seen.iter().all(|&s| s));
            }
        }
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let mut r = LabelRaster::unlabeled(4, 4);
        r.set(1, 0, 3);
        r.set(3, 2, 5);
        let q = Geometry {
            rot: 1,
            ..Default::default()
        };
        let once = q.apply_labels(&r);
        assert_ne!(once, r);
        let back = q.apply_labels(&q.apply_labels(&q.apply_labels(&once)));
        assert_eq!(back, r);
    }

    #[test]
    fn config_checks() {
        let mut c = TrainConfig::initial(LossWeights::uniform());
        assert!(c.validate().is_ok());
        c.epochs = 0;
        assert!(c.validate().is_err());
        let f = TrainConfig::finetune(LossWeights::uniform());
        assert_eq!(
            (f.learning_rate, f.epochs, f.weight_decay),
            (5e-6, 10, 1e-4)
        );
    }
}
