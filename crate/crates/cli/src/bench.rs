use std::time::{Duration, Instant};

use clap::{Args, ValueEnum};
use lifmixer::exec;
use lifmixer::layers::{dwconv3x3, DwConvParams};
use lifmixer::lif::{self, Direction, LifConfig, LifParams};
use lifmixer::model::{lif_module_forward, BlockInit, LifModuleParams};
use lifmixer::rng::stream;
use lifmixer::{Shape, Tensor4};

use crate::run::parse_shape;
use crate::{CmdResult, Failure, Global};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Op {
    LifForward,
    LifBackward,
    Dwconv3x3,
    LifModule,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub op: Op,
    #[arg(long, value_parser = parse_shape, default_value = "8x96x56x56")]
    pub shape: Shape,
    #[arg(long, value_delimiter = ',', default_value = "2,4,7,56")]
    pub groups: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    /// Run the sequential kernels instead of the data-parallel ones.
    #[arg(long)]
    pub sequential: bool,
}

/// `(median, p95)` of the samples; nearest-rank percentile.
pub fn stats(mut t: Vec<Duration>) -> (Duration, Duration) {
    t.sort();
    let n = t.len();
    let median = if n % 2 == 1 {
        t[n / 2]
    } else {
        (t[n / 2 - 1] + t[n / 2]) / 2
    };
    let p95 = t[(n * 95).div_ceil(100).max(1) - 1];
    (median, p95)
}

fn time(
    repeats: usize,
    warmup: usize,
    mut f: impl FnMut() -> lifmixer::Result<()>,
) -> lifmixer::Result<Vec<Duration>> {
    for _ in 0..warmup {
        f()?;
    }
    (0..repeats)
        .map(|_| {
            let t = Instant::now();
            f()?;
            Ok(t.elapsed())
        })
        .collect()
}

pub fn run(_g: &Global, a: &BenchArgs) -> CmdResult {
    if a.repeats == 0 {
        return Err(Failure::usage("repeats must be >= 1"));
    }
    exec::set_parallel(!a.sequential);
    let s = a.shape;
    let x = Tensor4::<f32>::from_fn(s, |i| (i as f32 * 0.754_877_7).fract() * 1.5 - 0.5);
    let groups: Vec<Option<usize>> = if a.op == Op::Dwconv3x3 {
        vec![None]
    } else {
        a.groups.iter().map(|&g| Some(g)).collect()
    };
    println!(
        "op {} shape {s} repeats {} warmup {} mode {}",
        a.op.to_possible_value().expect("not skipped").get_name(),
        a.repeats,
        a.warmup,
        if exec::parallel_enabled() {
            "parallel"
        } else {
            "sequential"
        }
    );
    println!(
        "{:>6} {:>12} {:>12} {:>14}",
        "g", "median_ms", "p95_ms", "elems_per_s"
    );
    for g in groups {
        let gv = g.unwrap_or(1);
        if gv == 0 {
            return Err(Failure::usage("groups must be >= 1"));
        }
        let p = LifParams::<f32>::default();
        let cfg = LifConfig::new(Direction::Vertical, gv);
        let times = match a.op {
            Op::LifForward => time(a.repeats, a.warmup, || lif::forward(&x, &p, &cfg).map(drop))?,
            Op::LifBackward => {
                let (_, saved) = lif::forward(&x, &p, &cfg)?;
                let d = Tensor4::full(s, 1.0f32);
                time(a.repeats, a.warmup, || lif::backward(&d, &saved).map(drop))?
            }
            Op::Dwconv3x3 => {
                let k = DwConvParams::<f32>::init(s.c, &mut stream(0, 0));
                time(a.repeats, a.warmup, || dwconv3x3(&x, &k).map(drop))?
            }
            Op::LifModule => {
                let init = BlockInit {
                    norm_groups: 1,
                    tau: lif::DEFAULT_TAU,
                    v_th: lif::DEFAULT_V_TH,
                    learn_lif: true,
                };
                let m = LifModuleParams::<f32>::init(s.c, &init, &mut stream(0, 0))?;
                time(a.repeats, a.warmup, || {
                    lif_module_forward(&x, &m, gv).map(drop)
                })?
            }
        };
        let (median, p95) = stats(times);
        let label = g.map_or("-".to_string(), |v| v.to_string());
        println!(
            "{label:>6} {:>12.3} {:>12.3} {:>14.3e}",
            median.as_secs_f64() * 1e3,
            p95.as_secs_f64() * 1e3,
            s.len() as f64 / median.as_secs_f64()
        );
    }
    Ok(())
}
