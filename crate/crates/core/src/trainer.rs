//! SGD with momentum, per-epoch learning-rate decay and best-F1 selection.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::save_checkpoint;
use crate::config::ModelConfig;
use crate::data::{augment_random, ImageSequence};
use crate::error::{Error, Result};
use crate::loss::{class_weights_from_masks, weighted_bce, LossConfig};
use crate::metrics::{confusion, mean_average_precision, metrics, ConfusionCounts, Metrics, PrCurveConfig};
use crate::model::{lane_probabilities, predict_mask, SequenceModel};
use crate::nn::{init_parameters, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassWeighting {
    /// Inverse pixel frequency of the training masks.
    Dataset,
    Uniform,
    Fixed(LossConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Learning rate at epoch `e` is `lr0 · decay^e`.
    pub decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weighting: ClassWeighting,
    /// Random flip/rotate/crop of each sample with probability ½ per epoch.
    pub augment: bool,
    /// Stop once the evaluation F1 reaches this value.
    pub target_f1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            decay: 0.95,
            momentum: 0.9,
            batch_size: 4,
            epochs: 10,
            seed: 0,
            weighting: ClassWeighting::Dataset,
            augment: false,
            target_f1: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.decay.powi(epoch as i32)
    }

    /// Apply one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("`{key}` expects {what}, got `{value}`"));
        match key {
            "lr" | "lr0" => self.lr0 = value.parse().map_err(|_| bad("a number"))?,
            "decay" => self.decay = value.parse().map_err(|_| bad("a number"))?,
            "momentum" => self.momentum = value.parse().map_err(|_| bad("a number"))?,
            "batch_size" | "batch" => self.batch_size = value.parse().map_err(|_| bad("an integer"))?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad("an integer"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("an integer"))?,
            "augment" => self.augment = matches!(value, "1" | "true"),
            "target_f1" => self.target_f1 = Some(value.parse().map_err(|_| bad("a number"))?),
            "weighting" => {
                self.weighting = match value {
                    "dataset" => ClassWeighting::Dataset,
                    "uniform" => ClassWeighting::Uniform,
                    _ => return Err(bad("`dataset` or `uniform`")),
                }
            }
            _ => return Err(Error::Config(format!("unknown training key `{key}`"))),
        }
        Ok(())
    }
}

/// `v ← μv + g`, `p ← p − lr·v`, then gradients are zeroed. A non-finite
/// gradient aborts the whole step before anything changes.
pub fn sgd_momentum_step<T: Real>(
    params: &mut ParamStore<T>,
    velocities: &mut Vec<Tensor<T>>,
    lr: T,
    momentum: T,
) -> Result<()> {
    if let Some(p) = params.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("gradient of `{}`", p.name),
        });
    }
    if velocities.is_empty() {
        *velocities = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
    }
    if velocities.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "{} velocity buffers for {} parameters",
            velocities.len(),
            params.len()
        )));
    }
    for (p, v) in params.iter_mut().zip(velocities.iter_mut()) {
        for ((pv, vv), &g) in p.value.data_mut().iter_mut().zip(v.data_mut()).zip(p.grad.data()) {
            *vv = momentum * *vv + g;
            *pv -= lr * *vv;
        }
        p.grad.fill(T::zero());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    pub map: Option<f64>,
}

impl EvalReport {
    /// `key=value` lines.
    pub fn key_values(&self) -> String {
        let mut s = format!(
            "tp={}\nfp={}\nfn={}\ntn={}\n{}\n",
            self.counts.tp, self.counts.fp, self.counts.fn_, self.counts.tn, self.metrics
        );
        if let Some(m) = self.map {
            s.push_str(&format!("map={m:.6}\n"));
        }
        s
    }
}

/// Pixel metrics summed over all sequences; mAP when `pr` is given.
pub fn evaluate(
    model: &SequenceModel,
    params: &ParamStore<f32>,
    data: &[ImageSequence],
    pr: Option<&PrCurveConfig>,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Dataset("nothing to evaluate".into()));
    }
    let mut counts = ConfusionCounts::default();
    let mut probs = Vec::new();
    let mut gts = Vec::new();
    for seq in data {
        let pass = model
            .forward(params, &seq.frames)
            .map_err(|e| Error::Dataset(format!("{}: {e}", seq.source_id)))?;
        counts.merge(&confusion(&predict_mask(&pass.logits)?, &seq.mask)?);
        if pr.is_some() {
            probs.push(lane_probabilities(&pass.logits).into_iter().map(f64::from).collect());
            gts.push(seq.mask.clone());
        }
    }
    let map = match pr {
        Some(cfg) => Some(mean_average_precision(&probs, &gts, cfg)?),
        None => None,
    };
    Ok(EvalReport {
        counts,
        metrics: metrics(&counts),
        map,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub accuracy: f64,
    pub f1: f64,
}

impl EpochStats {
    /// `epoch lr loss acc f1`.
    pub fn log_line(&self) -> String {
        format!(
            "{} {:.6e} {:.6} {:.6} {:.6}",
            self.epoch, self.lr, self.loss, self.accuracy, self.f1
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best evaluation F1, or the initialization if no
    /// epoch completed.
    pub best: ParamStore<f32>,
    pub best_f1: f64,
    pub best_epoch: Option<usize>,
    pub last: ParamStore<f32>,
    pub history: Vec<EpochStats>,
    pub loss_weights: LossConfig,
    /// Why training stopped early on a numerical failure.
    pub halted: Option<String>,
}

/// Mean loss over `batch` and its gradient accumulated (averaged) into
/// `params`.
pub fn batch_gradient(
    model: &SequenceModel,
    params: &mut ParamStore<f32>,
    batch: &[&ImageSequence],
    loss_cfg: &LossConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for seq in batch {
        let pass = model
            .forward(params, &seq.frames)
            .map_err(|e| Error::Dataset(format!("{}: {e}", seq.source_id)))?;
        let (loss, grad) = weighted_bce(&pass.logits, &seq.mask, loss_cfg)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: format!("loss on {}", seq.source_id),
            });
        }
        total += loss as f64;
        model.backward(params, &pass, &grad)?;
    }
    params.scale_grads(1.0 / batch.len() as f32);
    Ok(total / batch.len() as f64)
}

/// Trains from a seeded initialization. Epoch lines go to `log`; with a
/// `checkpoint` path, every F1 improvement is saved there.
pub fn train(
    model_cfg: &ModelConfig,
    train_set: &[ImageSequence],
    eval_set: &[ImageSequence],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Dataset("empty training set".into()));
    }
    let model = SequenceModel::new(model_cfg)?;
    let loss_cfg = match cfg.weighting {
        ClassWeighting::Dataset => class_weights_from_masks(train_set.iter().map(|s| &s.mask))?,
        ClassWeighting::Uniform => LossConfig::default(),
        ClassWeighting::Fixed(l) => l,
    };
    let eval_set = if eval_set.is_empty() { train_set } else { eval_set };
    let mut params = init_parameters::<f32>(model_cfg, cfg.seed)?;
    let mut outcome = TrainOutcome {
        best: params.clone(),
        best_f1: f64::NEG_INFINITY,
        best_epoch: None,
        last: params.clone(),
        history: Vec::new(),
        loss_weights: loss_cfg,
        halted: None,
    };
    if let Some(path) = checkpoint {
        save_checkpoint(&params, model_cfg, path)?;
    }
    let io_err = |e| Error::io("training log", e);
    writeln!(log, "# epoch lr loss acc f1").map_err(io_err)?;
    writeln!(
        log,
        "# loss weights lane={:.6} background={:.6}",
        loss_cfg.w_lane, loss_cfg.w_background
    )
    .map_err(io_err)?;

    let mut velocities = Vec::new();
    'epochs: for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let mut samples: Vec<ImageSequence> = Vec::with_capacity(order.len());
        for &i in &order {
            let seq = &train_set[i];
            if cfg.augment && rng.random_bool(0.5) {
                match augment_random(seq, rng.random()) {
                    Ok(a) => {
                        samples.push(a);
                        continue;
                    }
                    Err(e) => log::debug!("augmentation skipped: {e}"),
                }
            }
            samples.push(seq.clone());
        }

        let mut loss_sum = 0.0;
        for chunk in samples.chunks(cfg.batch_size) {
            params.zero_grad();
            let refs: Vec<&ImageSequence> = chunk.iter().collect();
            let step = batch_gradient(&model, &mut params, &refs, &loss_cfg)
                .and_then(|loss| sgd_momentum_step(&mut params, &mut velocities, lr as f32, cfg.momentum as f32).map(|_| loss));
            match step {
                Ok(loss) => loss_sum += loss * chunk.len() as f64,
                Err(e @ Error::NonFinite { .. }) => {
                    let msg = format!("epoch {epoch}: {e}");
                    log::error!("training halted: {msg}");
                    writeln!(log, "# halted: {msg}").map_err(io_err)?;
                    outcome.halted = Some(msg);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let report = evaluate(&model, &params, eval_set, None)?;
        let stats = EpochStats {
            epoch,
            lr,
            loss: loss_sum / samples.len() as f64,
            accuracy: report.metrics.accuracy,
            f1: report.metrics.f1,
        };
        writeln!(log, "{}", stats.log_line()).map_err(io_err)?;
        log::info!("{}", stats.log_line());
        outcome.history.push(stats);
        if stats.f1 > outcome.best_f1 {
            outcome.best_f1 = stats.f1;
            outcome.best_epoch = Some(epoch);
            outcome.best = params.clone();
            if let Some(path) = checkpoint {
                save_checkpoint(&params, model_cfg, path)?;
            }
        }
        if cfg.target_f1.is_some_and(|t| stats.f1 >= t) {
            break;
        }
    }
    outcome.last = params;
    if outcome.best_epoch.is_none() {
        outcome.best_f1 = 0.0;
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_sequence, ChallengeMix, SceneSpec};

    fn one_param(value: f64, grad: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::vector(vec![value])).unwrap();
        s.param_mut("p").unwrap().grad = Tensor::vector(vec![grad]);
        s
    }

    #[test]
    fn quadratic_step_without_momentum() {
        let mut s = one_param(1.0, 2.0); // d(p²)/dp at p = 1
        let mut v = Vec::new();
        sgd_momentum_step(&mut s, &mut v, 0.1, 0.0).unwrap();
        assert!((s.get("p").unwrap().data()[0] - 0.8).abs() < 1e-15);
        assert_eq!(s.param("p").unwrap().grad.data()[0], 0.0);
    }

    #[test]
    fn momentum_two_constant_steps() {
        let mut s = one_param(0.0, 1.0);
        let mut v = Vec::new();
        sgd_momentum_step(&mut s, &mut v, 0.1, 0.9).unwrap();
        s.param_mut("p").unwrap().grad = Tensor::vector(vec![1.0]);
        sgd_momentum_step(&mut s, &mut v, 0.1, 0.9).unwrap();
        assert!((s.get("p").unwrap().data()[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_decays_velocity_only() {
        let mut s = one_param(3.0, 0.0);
        let mut v = vec![Tensor::vector(vec![2.0])];
        sgd_momentum_step(&mut s, &mut v, 0.5, 0.9).unwrap();
        assert_eq!(v[0].data()[0], 1.8);
        let mut s = one_param(3.0, 0.0);
        let mut v = Vec::new();
        sgd_momentum_step(&mut s, &mut v, 0.5, 0.9).unwrap();
        assert_eq!(s.get("p").unwrap().data()[0], 3.0);
    }

    #[test]
    fn non_finite_gradient_aborts_and_names_parameter() {
        let mut s = one_param(1.0, f64::NAN);
        let mut v = Vec::new();
        let err = sgd_momentum_step(&mut s, &mut v, 0.1, 0.9).unwrap_err();
        assert!(err.to_string().contains("`p`"), "{err}");
        assert_eq!(s.get("p").unwrap().data()[0], 1.0);
    }

    #[test]
    fn schedule_and_validation() {
        let c = TrainConfig::default();
        assert!((1..20).all(|e| c.lr_at(e) < c.lr_at(e - 1)));
        assert_eq!(c.lr_at(0), 0.01);
        for bad in [
            TrainConfig { lr0: 0.0, ..c.clone() },
            TrainConfig { decay: 1.5, ..c.clone() },
            TrainConfig { momentum: 1.0, ..c.clone() },
            TrainConfig { batch_size: 0, ..c.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            frames: 2,
            height: 32,
            width: 32,
            channel_div: 8,
            ..ModelConfig::default()
        }
    }

    fn tiny_data(n: usize) -> Vec<ImageSequence> {
        (0..n)
            .map(|i| generate_sequence(&SceneSpec::random(i as u64, 32, 32, 2, &ChallengeMix::none()).unwrap()).unwrap())
            .collect()
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = tiny_model();
        let out = train(
            &cfg,
            &tiny_data(2),
            &[],
            &TrainConfig {
                epochs: 0,
                seed: 4,
                ..TrainConfig::default()
            },
            None,
            &mut Vec::new(),
        )
        .unwrap();
        assert_eq!(out.best, init_parameters::<f32>(&cfg, 4).unwrap());
        assert!(out.history.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny_data(3);
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 2,
            seed: 9,
            augment: true,
            ..TrainConfig::default()
        };
        let (mut la, mut lb) = (Vec::new(), Vec::new());
        let a = train(&tiny_model(), &data, &[], &tc, None, &mut la).unwrap();
        let b = train(&tiny_model(), &data, &[], &tc, None, &mut lb).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a.last, b.last);
        let text = String::from_utf8(la).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 2);
    }

    #[test]
    fn small_step_does_not_increase_batch_loss() {
        let cfg = tiny_model();
        let model = SequenceModel::new(&cfg).unwrap();
        let data = tiny_data(2);
        let batch: Vec<&ImageSequence> = data.iter().collect();
        let loss_cfg = class_weights_from_masks(data.iter().map(|s| &s.mask)).unwrap();
        let mut increases = 0;
        for seed in 0..10 {
            let mut p = init_parameters::<f32>(&cfg, seed).unwrap();
            let before = batch_gradient(&model, &mut p, &batch, &loss_cfg).unwrap();
            sgd_momentum_step(&mut p, &mut Vec::new(), 1e-3, 0.0).unwrap();
            let after = batch_gradient(&model, &mut p, &batch, &loss_cfg).unwrap();
            if after > before {
                increases += 1;
                eprintln!("seed {seed}: loss rose {before} -> {after}");
            }
        }
        assert!(increases <= 1, "{increases} of 10 steps increased the loss");
    }
}
