use std::path::PathBuf;

use clap::{Args, ValueEnum};
use lifmixer::kv::KvMap;
use lifmixer::model::checkpoint::Checkpoint;
use lifmixer::model::SnnMlp;
use lifmixer::train::{evaluate, train_loop, TrainConfig};
use lifmixer::{DType, Real};

use crate::run::load_kv;
use crate::{CmdResult, Failure, Global};

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Metrics CSV path (epoch,step,loss,acc,lr).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Checkpoint written after every epoch.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many epochs, keeping the full schedule.
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Exit with status 1 when accuracy falls below this value.
    #[arg(long)]
    pub min_acc: Option<f64>,
}

fn train_config(g: &Global, a: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = TrainConfig::default().apply_kv(&load_kv(g)?)?;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if a.metrics.is_some() {
        cfg.metrics.clone_from(&a.metrics);
    }
    if a.checkpoint.is_some() {
        cfg.checkpoint.clone_from(&a.checkpoint);
    }
    cfg.stop_after = a.stop_after;
    cfg.validate()?;
    Ok(cfg)
}

fn train_typed<T: Real>(cfg: &TrainConfig, resume: Option<&PathBuf>) -> CmdResult {
    let (train, test) = cfg.load_data()?;
    let ck = resume.map(Checkpoint::<T>::load).transpose()?;
    let out = train_loop::<T>(cfg, &train, ck.as_ref())?;
    println!("{}", lifmixer::train::CSV_HEADER);
    for m in &out.history {
        println!("{}", m.csv_line());
    }
    if !test.is_empty() {
        println!(
            "test_acc {}",
            evaluate(&out.model, &test, &cfg.norm, cfg.batch_size)?
        );
    }
    Ok(())
}

pub fn run_train(g: &Global, a: &TrainArgs) -> CmdResult {
    let cfg = train_config(g, a)?;
    match g.dtype.unwrap_or(DType::F32) {
        DType::F32 => train_typed::<f32>(&cfg, a.resume.as_ref()),
        DType::F64 => train_typed::<f64>(&cfg, a.resume.as_ref()),
    }
}

/// Configuration recorded in a checkpoint header, overlaid with the user's.
fn eval_config(header: &KvMap, user: &KvMap) -> Result<TrainConfig, Failure> {
    let mut kv = KvMap::default();
    let allowed = TrainConfig::all_keys();
    for k in header.keys().filter(|k| allowed.contains(k)) {
        kv.set(k, header.get_str(k).unwrap_or_default());
    }
    kv.merge(user);
    Ok(TrainConfig::default().apply_kv(&kv)?)
}

fn eval_typed<T: Real>(g: &Global, a: &EvalArgs) -> CmdResult {
    let ck = Checkpoint::<T>::load(&a.checkpoint)?;
    let cfg = eval_config(&ck.header, &load_kv(g)?)?;
    let mut model = SnnMlp::<T>::init(&cfg.model, 0)?;
    ck.load_params(&mut model)?;
    let (train, test) = cfg.load_data()?;
    let data = match a.split {
        Split::Train => train,
        Split::Test => test,
    };
    let acc = evaluate(&model, &data, &cfg.norm, a.batch_size)?;
    println!("top1 {acc} ({} samples)", data.len());
    match a.min_acc {
        Some(min) if acc < min => Err(Failure::check(format!("accuracy {acc} below {min}"))),
        _ => Ok(()),
    }
}

pub fn run_eval(g: &Global, a: &EvalArgs) -> CmdResult {
    match g.dtype.unwrap_or(DType::F32) {
        DType::F32 => eval_typed::<f32>(g, a),
        DType::F64 => eval_typed::<f64>(g, a),
    }
}
