//! Desk-scale supervised training: data, AdamW, label-smoothed
//! cross-entropy, and a deterministic, resumable training loop.

pub mod data;
pub mod loss;
pub mod optim;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::layers::{ParamKind, Params};
use crate::model::checkpoint::Checkpoint;
use crate::model::{ModelConfig, Pass, SnnMlp};
use crate::rng::stream;
use crate::tensor::{Real, Tensor4};

pub use data::{load_cifar10, nearest_centroid_accuracy, synth_dataset, Batch, Dataset, Normalize};
pub use loss::cross_entropy_ls;
pub use optim::{adamw_step, cosine_lr, AdamW, OptimState, Schedule};

pub const CSV_HEADER: &str = "epoch,step,loss,acc,lr";
const FLIP_STREAM: u64 = 0x464c_4950 << 32;

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synth {
        classes: usize,
        train: usize,
        test: usize,
    },
    Cifar10 {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub data: DataSource,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_epochs: usize,
    pub adamw: AdamW,
    pub smoothing: f64,
    pub seed: u64,
    /// Random horizontal flips of training images.
    pub flip: bool,
    pub norm: Normalize,
    pub metrics: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Stop after this many completed epochs without changing the schedule.
    pub stop_after: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::toy(3),
            data: DataSource::Synth {
                classes: 3,
                train: 300,
                test: 300,
            },
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            warmup_epochs: 0,
            adamw: AdamW::default(),
            smoothing: 0.1,
            seed: 0,
            flip: false,
            norm: Normalize::default(),
            metrics: None,
            checkpoint: None,
            stop_after: None,
        }
    }
}

fn triple(v: [f64; 3]) -> String {
    format!("{},{},{}", v[0], v[1], v[2])
}

fn parse_triple(key: &str, s: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::invalid(format!("bad value for {key}: {s:?}")))?;
    v.try_into()
        .map_err(|_| Error::invalid(format!("{key} needs 3 values, got {s:?}")))
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "variant",
        "dataset",
        "data_path",
        "synth_classes",
        "synth_train",
        "synth_test",
        "epochs",
        "batch_size",
        "lr",
        "warmup_epochs",
        "beta1",
        "beta2",
        "eps",
        "weight_decay",
        "smoothing",
        "seed",
        "flip",
        "mean",
        "std",
        "metrics",
        "checkpoint",
    ];

    /// Every key accepted by [`TrainConfig::apply_kv`].
    pub fn all_keys() -> Vec<&'static str> {
        let mut v = ModelConfig::KEYS.to_vec();
        v.extend_from_slice(Self::KEYS);
        v
    }

    pub fn write_kv(&self, m: &mut KvMap) {
        self.model.write_kv(m);
        match &self.data {
            DataSource::Synth {
                classes,
                train,
                test,
            } => {
                m.set("dataset", "synth");
                m.set("synth_classes", classes);
                m.set("synth_train", train);
                m.set("synth_test", test);
            }
            DataSource::Cifar10 { path } => {
                m.set("dataset", "cifar10");
                m.set("data_path", path.display());
            }
        }
        m.set("epochs", self.epochs);
        m.set("batch_size", self.batch_size);
        m.set("lr", self.lr);
        m.set("warmup_epochs", self.warmup_epochs);
        m.set("beta1", self.adamw.beta1);
        m.set("beta2", self.adamw.beta2);
        m.set("eps", self.adamw.eps);
        m.set("weight_decay", self.adamw.weight_decay);
        m.set("smoothing", self.smoothing);
        m.set("seed", self.seed);
        m.set("flip", self.flip);
        m.set("mean", triple(self.norm.mean));
        m.set("std", triple(self.norm.std));
        if let Some(p) = &self.metrics {
            m.set("metrics", p.display());
        }
        if let Some(p) = &self.checkpoint {
            m.set("checkpoint", p.display());
        }
    }

    /// Applies the keys present in `m`; unknown keys are rejected.
    pub fn apply_kv(mut self, m: &KvMap) -> Result<Self> {
        m.reject_unknown(&Self::all_keys())?;
        self.model = self.model.apply_kv(m)?;
        let get_usize = |k: &str| m.get::<usize>(k);
        match m.get_str("dataset") {
            None => {}
            Some("synth") => {
                if !matches!(self.data, DataSource::Synth { .. }) {
                    self.data = TrainConfig::default().data;
                }
            }
            Some("cifar10") => {
                let path = m
                    .get_str("data_path")
                    .ok_or_else(|| Error::invalid("dataset=cifar10 needs data_path"))?;
                self.data = DataSource::Cifar10 { path: path.into() };
            }
            Some(other) => {
                return Err(Error::invalid(format!(
                    "unknown dataset {other:?}; valid: synth, cifar10"
                )))
            }
        }
        if let DataSource::Synth {
            classes,
            train,
            test,
        } = &mut self.data
        {
            if let Some(v) = get_usize("synth_classes")? {
                *classes = v;
            }
            if let Some(v) = get_usize("synth_train")? {
                *train = v;
            }
            if let Some(v) = get_usize("synth_test")? {
                *test = v;
            }
        } else if let (DataSource::Cifar10 { path }, Some(p)) =
            (&mut self.data, m.get_str("data_path"))
        {
            *path = p.into();
        }
        macro_rules! take {
            ($($k:literal => $f:expr),* $(,)?) => {$(
                if let Some(v) = m.get($k)? { $f = v; }
            )*};
        }
        take!(
            "epochs" => self.epochs,
            "batch_size" => self.batch_size,
            "lr" => self.lr,
            "warmup_epochs" => self.warmup_epochs,
            "beta1" => self.adamw.beta1,
            "beta2" => self.adamw.beta2,
            "eps" => self.adamw.eps,
            "weight_decay" => self.adamw.weight_decay,
            "smoothing" => self.smoothing,
            "seed" => self.seed,
            "flip" => self.flip,
        );
        if let Some(s) = m.get_str("mean") {
            self.norm.mean = parse_triple("mean", s)?;
        }
        if let Some(s) = m.get_str("std") {
            self.norm.std = parse_triple("std", s)?;
        }
        if let Some(s) = m.get_str("metrics") {
            self.metrics = Some(s.into());
        }
        if let Some(s) = m.get_str("checkpoint") {
            self.checkpoint = Some(s.into());
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::invalid("warmup_epochs exceeds epochs"));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::invalid(format!(
                "smoothing {} outside [0, 1)",
                self.smoothing
            )));
        }
        if self.norm.std.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return Err(Error::invalid("std entries must be positive"));
        }
        if let DataSource::Synth { classes, .. } = self.data {
            if classes != self.model.num_classes {
                return Err(Error::invalid(format!(
                    "synth_classes {classes} differs from num_classes {}",
                    self.model.num_classes
                )));
            }
        }
        Ok(())
    }

    /// `(train, test)` datasets.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        match &self.data {
            DataSource::Synth {
                classes,
                train,
                test,
            } => Ok((
                synth_dataset(*classes, *train, self.seed)?,
                synth_dataset(*classes, *test, !self.seed)?,
            )),
            DataSource::Cifar10 { path } => {
                Ok((load_cifar10(path, true)?, load_cifar10(path, false)?))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Optimizer steps completed so far.
    pub step: u64,
    pub loss: f64,
    pub acc: f64,
    pub lr: f64,
}

impl EpochMetrics {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.step, self.loss, self.acc, self.lr
        )
    }

    fn parse(s: &str) -> Result<Self> {
        let f: Vec<&str> = s.split(',').collect();
        let bad = || Error::invalid(format!("bad metrics line {s:?}"));
        if f.len() != 5 {
            return Err(bad());
        }
        Ok(EpochMetrics {
            epoch: f[0].parse().map_err(|_| bad())?,
            step: f[1].parse().map_err(|_| bad())?,
            loss: f[2].parse().map_err(|_| bad())?,
            acc: f[3].parse().map_err(|_| bad())?,
            lr: f[4].parse().map_err(|_| bad())?,
        })
    }
}

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for m in history {
        let _ = writeln!(s, "{}", m.csv_line());
    }
    s
}

pub struct TrainOutcome<T> {
    pub model: SnnMlp<T>,
    pub opt: OptimState<T>,
    pub history: Vec<EpochMetrics>,
}

/// Serialises a training run: model, config, progress, history, moments.
pub fn training_checkpoint<T: Real>(cfg: &TrainConfig, out: &TrainOutcome<T>) -> Checkpoint<T> {
    let mut ck = Checkpoint::from_model(&out.model);
    cfg.write_kv(&mut ck.header);
    ck.header
        .set("train.epoch", out.history.last().map_or(0, |m| m.epoch));
    ck.header.set("train.step", out.opt.step);
    for (i, m) in out.history.iter().enumerate() {
        ck.header.set(&format!("history.{i:05}"), m.csv_line());
    }
    for (p, (m, v)) in out
        .model
        .params()
        .iter()
        .zip(out.opt.m.iter().zip(&out.opt.v))
    {
        let t =
            |d: &Vec<T>| Tensor4::from_vec(p.shape, d.clone()).expect("moment matches parameter");
        ck.tensors.push((format!("opt.m.{}", p.name), t(m)));
        ck.tensors.push((format!("opt.v.{}", p.name), t(v)));
    }
    ck
}

fn resume_state<T: Real>(
    cfg: &TrainConfig,
    ck: &Checkpoint<T>,
) -> Result<(TrainOutcome<T>, usize)> {
    let mut model = SnnMlp::init(&cfg.model, cfg.seed)?;
    ck.load_params(&mut model)?;
    let mut opt = OptimState::new(&model, cfg.adamw);
    opt.step = ck.header.get("train.step")?.unwrap_or(0);
    for (k, name) in opt.names.clone().iter().enumerate() {
        for (prefix, slot) in [("opt.m", &mut opt.m[k]), ("opt.v", &mut opt.v[k])] {
            let key = format!("{prefix}.{name}");
            let t = ck
                .get(&key)
                .ok_or_else(|| Error::invalid(format!("checkpoint has no tensor {key:?}")))?;
            if t.len() != slot.len() {
                return Err(Error::invalid(format!(
                    "{key}: {} values, expected {}",
                    t.len(),
                    slot.len()
                )));
            }
            slot.copy_from_slice(t.data());
        }
    }
    let history = ck
        .header
        .keys()
        .filter(|k| k.starts_with("history."))
        .map(|k| EpochMetrics::parse(ck.header.get_str(k).unwrap_or_default()))
        .collect::<Result<Vec<_>>>()?;
    let epoch = ck.header.get("train.epoch")?.unwrap_or(0);
    Ok((
        TrainOutcome {
            model,
            opt,
            history,
        },
        epoch,
    ))
}

/// Index of the largest logit per row.
pub fn predictions<T: Real>(logits: &Tensor4<T>) -> Vec<usize> {
    let k = logits.shape().c;
    logits
        .data()
        .chunks(k.max(1))
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |best, (j, &v)| {
                    if v > best.1 {
                        (j, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}

/// Top-1 accuracy over `data` in evaluation mode.
pub fn evaluate<T: Real>(
    model: &SnnMlp<T>,
    data: &Dataset,
    norm: &Normalize,
    batch_size: usize,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut hits = 0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let b: Batch<T> = data.batch(chunk, norm, None)?;
        let pred = predictions(&model.infer(&b.images)?);
        hits += pred.iter().zip(&b.labels).filter(|(p, l)| p == l).count();
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Largest change of any LIF `tau`/`v_th` between two models of equal structure.
pub fn max_lif_shift<T: Real>(a: &SnnMlp<T>, b: &SnnMlp<T>) -> f64 {
    a.params()
        .iter()
        .zip(b.params())
        .filter(|(p, _)| matches!(p.kind, ParamKind::Lif | ParamKind::Frozen) && p.shape.len() == 1)
        .map(|(p, q)| (p.data[0] - q.data[0]).abs().as_f64())
        .fold(0.0, f64::max)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Trains from scratch, or from `resume`, for the configured schedule.
/// Writes the metrics CSV and checkpoint (if configured) after every epoch.
pub fn train_loop<T: Real>(
    cfg: &TrainConfig,
    data: &Dataset,
    resume: Option<&Checkpoint<T>>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if data.num_classes != cfg.model.num_classes {
        return Err(Error::invalid(format!(
            "dataset has {} classes, model {}",
            data.num_classes, cfg.model.num_classes
        )));
    }
    let (mut st, start) = match resume {
        Some(ck) => resume_state(cfg, ck)?,
        None => {
            let model = SnnMlp::init(&cfg.model, cfg.seed)?;
            let opt = OptimState::new(&model, cfg.adamw);
            (
                TrainOutcome {
                    model,
                    opt,
                    history: Vec::new(),
                },
                0,
            )
        }
    };
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size) as u64;
    let sched = Schedule {
        base_lr: cfg.lr,
        warmup_steps: cfg.warmup_epochs as u64 * steps_per_epoch,
        total_steps: cfg.epochs as u64 * steps_per_epoch,
    };
    let end = cfg.stop_after.map_or(cfg.epochs, |s| s.min(cfg.epochs));

    for epoch in start..end {
        let order = data.epoch_order(cfg.batch_size, cfg.seed, epoch as u64);
        let first_step = st.opt.step;
        let (mut loss_sum, mut hits, mut seen, mut lr) = (0.0, 0usize, 0usize, 0.0);
        std::thread::scope(|scope| -> Result<()> {
            let (tx, rx) = sync_channel::<Result<Batch<T>>>(2);
            scope.spawn(move || {
                for (j, idx) in order.iter().enumerate() {
                    let flips: Option<Vec<bool>> = cfg.flip.then(|| {
                        let mut r = stream(cfg.seed, FLIP_STREAM ^ (first_step + j as u64));
                        idx.iter().map(|_| r.random()).collect()
                    });
                    if tx
                        .send(data.batch(idx, &cfg.norm, flips.as_deref()))
                        .is_err()
                    {
                        break;
                    }
                }
            });
            for batch in rx {
                let b = batch?;
                let step = st.opt.step;
                // a diverged model trips the LIF finiteness guard before the loss exists
                let (logits, cache) = st
                    .model
                    .forward(&b.images, Pass::train(cfg.seed, step))
                    .map_err(|e| match e {
                        Error::NonFinite { .. } => Error::NonFiniteLoss {
                            step: step as usize,
                        },
                        e => e,
                    })?;
                let (loss, d_logits) = cross_entropy_ls(&logits, &b.labels, cfg.smoothing)?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step: step as usize,
                    });
                }
                let grads = st.model.backward(&cache, &d_logits)?;
                lr = cosine_lr(&sched, step)?;
                adamw_step(&mut st.model, &grads, &mut st.opt, lr)?;
                let n = b.labels.len();
                loss_sum += loss * n as f64;
                hits += predictions(&logits)
                    .iter()
                    .zip(&b.labels)
                    .filter(|(p, l)| p == l)
                    .count();
                seen += n;
            }
            Ok(())
        })?;
        st.history.push(EpochMetrics {
            epoch: epoch + 1,
            step: st.opt.step,
            loss: loss_sum / seen as f64,
            acc: hits as f64 / seen as f64,
            lr,
        });
        if let Some(p) = &cfg.metrics {
            write_file(p, metrics_csv(&st.history).as_bytes())?;
        }
        if let Some(p) = &cfg.checkpoint {
            training_checkpoint(cfg, &st).save(p)?;
        }
    }
    Ok(st)
}
