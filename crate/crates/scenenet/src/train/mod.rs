//! Desk-scale training and evaluation.
//!
//! The recipe: synchronous SGD with Nesterov momentum 0.9, weight decay
//! 1e-4 applied to every parameter (batch-norm scale/shift included), and
//! a step schedule that divides the learning rate by 10 every 30 epochs.
//! Strict mode keeps everything single-threaded so that two runs with the
//! same seed produce bit-identical checkpoints.

pub mod checkpoint;
pub mod dataset;

use crate::arch::{NanWatch, Network, OptSlot};
use crate::error::{Error, Result};
use crate::freq::FilterSpec;
use crate::layers::head::{softmax_cross_entropy_backward, softmax_cross_entropy_forward};
use crate::rng::Pcg32;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use dataset::{Dataset, Normalization};

/// Optimizer hyperparameters and run controls.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub base_lr: f64,
    /// Nesterov momentum coefficient in [0, 1).
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs between learning-rate drops.
    pub lr_step: usize,
    /// Multiplier applied at each drop.
    pub lr_factor: f64,
    pub seed: u64,
    /// Forces fully serial execution.
    pub strict_determinism: bool,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 256,
            epochs: 100,
            lr_step: 30,
            lr_factor: 0.1,
            seed: 0,
            strict_determinism: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.base_lr.is_finite() || self.base_lr <= 0.0 {
            return Err(Error::Validation("base_lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Validation("momentum must be in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Validation("weight_decay must be >= 0".into()));
        }
        if self.batch_size == 0 || self.lr_step == 0 {
            return Err(Error::Validation("batch_size and lr_step must be >= 1".into()));
        }
        if !self.lr_factor.is_finite() || self.lr_factor <= 0.0 {
            return Err(Error::Validation("lr_factor must be positive".into()));
        }
        Ok(())
    }

    /// lr(epoch) = base_lr * factor^(epoch / step), integer division.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base_lr * self.lr_factor.powi((epoch / self.lr_step) as i32)
    }
}

/// Evaluation results.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub top1: f64,
    pub top5: f64,
    pub mean_loss: f64,
    pub n: usize,
}

/// One row of the per-epoch training log.
#[derive(Debug, Clone, Copy)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_top1: f64,
    pub val_top1: f64,
    pub val_top5: f64,
}

pub fn epoch_log_csv_header() -> &'static str {
    "epoch,lr,train_loss,train_top1,val_top1,val_top5"
}

impl EpochLog {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.lr, self.train_loss, self.train_top1, self.val_top1, self.val_top5
        )
    }
}

/// One Nesterov step over a flat parameter slice:
/// g' = g + wd*w; v <- m*v + g'; w <- w - lr*(g' + m*v).
pub fn nesterov_update<S: Scalar>(
    weights: &mut [S],
    grads: &[S],
    velocity: &mut [S],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    let lr = S::from_f64(lr);
    let m = S::from_f64(momentum);
    let wd = S::from_f64(weight_decay);
    for ((w, &g), v) in weights.iter_mut().zip(grads.iter()).zip(velocity.iter_mut()) {
        let g = g + wd * *w;
        *v = m * *v + g;
        *w -= lr * (g + m * *v);
    }
}

/// Applies one optimizer step to every parameter of the network using the
/// schedule's learning rate for `epoch`. Batch-norm gamma/beta receive
/// weight decay like everything else.
pub fn sgd_step<S: Scalar>(net: &mut Network<S>, cfg: &TrainConfig, epoch: usize) {
    let lr = cfg.lr_at(epoch);
    net.visit_params_mut(&mut |_, value, slot| {
        let OptSlot { grad, velocity } = slot;
        nesterov_update(
            value.data_mut(),
            grad.data(),
            velocity.data_mut(),
            lr,
            cfg.momentum,
            cfg.weight_decay,
        );
    });
}

/// Number of samples whose true label ranks inside the top k logits; ties
/// break toward the lower class index.
pub fn topk_hits<S: Scalar>(logits: &Tensor4<S>, labels: &[usize], k: usize) -> Result<usize> {
    let s = logits.shape();
    if s.h != 1 || s.w != 1 {
        return Err(Error::Dimension(format!(
            "logits must be (n, classes, 1, 1), got {s}"
        )));
    }
    if k == 0 || k > s.c {
        return Err(Error::Validation(format!(
            "k = {k} out of range [1, {}]",
            s.c
        )));
    }
    if labels.len() != s.n {
        return Err(Error::Validation(format!(
            "{} labels for batch of {}",
            labels.len(),
            s.n
        )));
    }
    let mut hits = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        if label >= s.c {
            return Err(Error::Validation(format!(
                "label {label} out of range [0, {})",
                s.c
            )));
        }
        let target = logits.at(i, label, 0, 0);
        let mut rank = 0usize;
        for j in 0..s.c {
            let v = logits.at(i, j, 0, 0);
            if v > target || (v == target && j < label) {
                rank += 1;
            }
        }
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits)
}

/// Fraction of samples whose true label is among the k largest logits.
pub fn topk_accuracy<S: Scalar>(logits: &Tensor4<S>, labels: &[usize], k: usize) -> Result<f64> {
    Ok(topk_hits(logits, labels, k)? as f64 / labels.len().max(1) as f64)
}

/// Evaluation execution options.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub batch_size: usize,
    /// Worker threads for the batch axis; strict mode forces 1.
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> EvalOptions {
        EvalOptions {
            batch_size: 64,
            workers: 1,
        }
    }
}

/// Evaluation-mode forward of one batch, split across worker threads over
/// the batch axis. Per-sample computation is independent, so the stitched
/// logits are identical for any worker count.
fn forward_eval_chunked<S: Scalar>(
    net: &Network<S>,
    x: &Tensor4<S>,
    workers: usize,
) -> Result<Tensor4<S>> {
    let n = x.shape().n;
    let workers = workers.max(1).min(n);
    if workers == 1 {
        return net.forward_eval(x);
    }
    let chunk = n.div_ceil(workers);
    let ranges: Vec<(usize, usize)> = (0..workers)
        .map(|w| (w * chunk, ((w + 1) * chunk).min(n)))
        .filter(|(a, b)| a < b)
        .collect();
    let results: Vec<Result<Tensor4<S>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = ranges
            .iter()
            .map(|&(start, end)| {
                scope.spawn(move || {
                    let s = x.shape();
                    let sub = Tensor4::from_fn(
                        crate::tensor::Shape::new(end - start, s.c, s.h, s.w),
                        |i, j, kk, ll| x.at(start + i, j, kk, ll),
                    );
                    net.forward_eval(&sub)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut pieces = Vec::with_capacity(results.len());
    for r in results {
        pieces.push(r?);
    }
    let classes = pieces[0].shape().c;
    let mut out = Tensor4::zeros(crate::tensor::Shape::new(n, classes, 1, 1));
    let mut offset = 0usize;
    for piece in pieces {
        for i in 0..piece.shape().n {
            for j in 0..classes {
                *out.at_mut(offset + i, j, 0, 0) = piece.at(i, j, 0, 0);
            }
        }
        offset += piece.shape().n;
    }
    Ok(out)
}

/// Full-set evaluation-mode metrics, optionally filtering every image in
/// the frequency domain first. Deterministic: samples are visited in
/// dataset order.
pub fn evaluate<S: Scalar>(
    net: &Network<S>,
    data: &Dataset,
    norm: &Normalization,
    filter: Option<&FilterSpec>,
    opts: EvalOptions,
) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::Validation("dataset is empty".into()));
    }
    if data.num_classes() != net.fc.out_features() {
        return Err(Error::Validation(format!(
            "dataset has {} classes but the model classifies {}",
            data.num_classes(),
            net.fc.out_features()
        )));
    }
    if let Some(f) = filter {
        f.validate(data.side)?;
    }
    let k5 = 5.min(net.fc.out_features());
    let mut hits1 = 0usize;
    let mut hits5 = 0usize;
    let mut loss_sum = 0.0f64;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(opts.batch_size.max(1)) {
        let (x, labels) = data.batch::<S>(chunk, filter, norm)?;
        let logits = forward_eval_chunked(net, &x, opts.workers)?;
        hits1 += topk_hits(&logits, &labels, 1)?;
        hits5 += topk_hits(&logits, &labels, k5)?;
        let ce = softmax_cross_entropy_forward(&logits, &labels)?;
        loss_sum += ce.loss.to_f64() * labels.len() as f64;
    }
    let n = data.len();
    Ok(Metrics {
        top1: hits1 as f64 / n as f64,
        top5: hits5 as f64 / n as f64,
        mean_loss: loss_sum / n as f64,
        n,
    })
}

/// Epoch-at-a-time training driver. Owns the network, the optimizer
/// state (inside the network's parameter slots), and the shuffling
/// stream.
#[derive(Debug)]
pub struct Trainer<S: Scalar> {
    pub net: Network<S>,
    pub cfg: TrainConfig,
    pub data: Dataset,
    /// Validation split; the training set doubles as validation when absent.
    pub val: Option<Dataset>,
    pub norm: Normalization,
    epoch: usize,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(
        net: Network<S>,
        data: Dataset,
        val: Option<Dataset>,
        cfg: TrainConfig,
    ) -> Result<Trainer<S>> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::Validation("training dataset is empty".into()));
        }
        if data.num_classes() != net.fc.out_features() {
            return Err(Error::Validation(format!(
                "dataset has {} classes but the model classifies {}",
                data.num_classes(),
                net.fc.out_features()
            )));
        }
        let norm = data.normalization();
        Ok(Trainer {
            net,
            cfg,
            data,
            val,
            norm,
            epoch: 0,
        })
    }

    pub fn epochs_run(&self) -> usize {
        self.epoch
    }

    fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            batch_size: self.cfg.batch_size,
            workers: 1,
        }
    }

    /// Runs one epoch: shuffled batches, forward, backward, one
    /// synchronous optimizer step per batch. Aborts on a non-finite loss,
    /// naming the first offending layer.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let epoch = self.epoch;
        let lr = self.cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        // Stream keyed by epoch so every epoch reshuffles, reproducibly.
        let mut rng = Pcg32::new(self.cfg.seed, 0x7472_6169_6e00_0000 ^ epoch as u64);
        rng.shuffle(&mut order);

        let mut hits1 = 0usize;
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(self.cfg.batch_size) {
            let (x, labels) = self.data.batch::<S>(chunk, None, &self.norm)?;
            self.net.zero_grads();
            let mut watch = NanWatch::default();
            let logits = self.net.forward_train(&x, &mut watch)?;
            let ce = softmax_cross_entropy_forward(&logits, &labels)?;
            if !ce.loss.is_finite() {
                return Err(Error::NonFinite {
                    layer: watch.first.unwrap_or_else(|| "loss".into()),
                });
            }
            loss_sum += ce.loss.to_f64() * labels.len() as f64;
            hits1 += topk_hits(&logits, &labels, 1)?;
            let grad = softmax_cross_entropy_backward(&ce, &labels);
            self.net.backward(&grad)?;
            sgd_step(&mut self.net, &self.cfg, epoch);
        }
        let train_n = self.data.len() as f64;
        let val_metrics = match &self.val {
            Some(val) => evaluate(&self.net, val, &self.norm, None, self.eval_options())?,
            None => evaluate(&self.net, &self.data, &self.norm, None, self.eval_options())?,
        };
        self.epoch += 1;
        Ok(EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / train_n,
            train_top1: hits1 as f64 / train_n,
            val_top1: val_metrics.top1,
            val_top5: val_metrics.top5,
        })
    }
}

/// Trains for `cfg.epochs` epochs and returns the trained network with
/// its per-epoch log. Deterministic given the seed in strict mode.
pub fn train<S: Scalar>(
    net: Network<S>,
    data: Dataset,
    val: Option<Dataset>,
    cfg: TrainConfig,
) -> Result<(Trainer<S>, Vec<EpochLog>)> {
    let epochs = cfg.epochs;
    let mut trainer = Trainer::new(net, data, val, cfg)?;
    let mut logs = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        logs.push(trainer.run_epoch()?);
    }
    Ok((trainer, logs))
}
