use clap::Args;
use lifmixer::gradcheck::{check_layers, OpReport, DEFAULT_STEP, DEFAULT_TOL};
use lifmixer::lif::{self, CheckOptions, Direction, LifConfig, LifGrads, LifParams, LifSaved};
use lifmixer::model::grad::{check_lif_module, check_mlp_block, check_network};
use lifmixer::{Result as LibResult, Shape, Tensor4};

use crate::run::parse_shape;
use crate::{CmdResult, Failure, Global};

/// Tolerance of the composed-module checks, whose Jacobians chain many layers.
pub const MODULE_TOL: f64 = 1e-4;

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// LIF input shapes, comma separated NxCxHxW.
    #[arg(long, value_delimiter = ',', value_parser = parse_shape,
          default_value = "2x3x8x8,1x4x7x9,2x2x5x12")]
    pub shapes: Vec<Shape>,
    /// LIF group lengths.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,7")]
    pub groups: Vec<usize>,
    /// Chain directions: v (vertical), h (horizontal).
    #[arg(long, value_delimiter = ',', value_parser = parse_direction, default_value = "v,h")]
    pub directions: Vec<Direction>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    /// Only the LIF cases.
    #[arg(long)]
    pub lif_only: bool,
    /// Corrupts one element of the LIF input gradient (negative control).
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    match s.trim() {
        "v" | "vertical" => Ok(Direction::Vertical),
        "h" | "horizontal" => Ok(Direction::Horizontal),
        _ => Err(format!("unknown direction {s:?} (expected v or h)")),
    }
}

fn dir_name(d: Direction) -> &'static str {
    match d {
        Direction::Vertical => "vertical",
        Direction::Horizontal => "horizontal",
    }
}

fn faulty_backward(d_r: &Tensor4<f64>, saved: &LifSaved<f64>) -> LibResult<LifGrads<f64>> {
    let mut g = lif::backward(d_r, saved)?;
    let n = g.d_input.len();
    if n > 0 {
        let v = &mut g.d_input.data_mut()[n / 2];
        *v = *v * 1.01 + 1e-3;
    }
    Ok(g)
}

/// g = 1 must reduce to an elementwise clamp at the threshold, bit for bit.
fn clamp_identity(shape: Shape, dir: Direction, seed: u64) -> LibResult<bool> {
    // low-discrepancy fill in [-1, 1)
    let x = Tensor4::from_fn(shape, |i| {
        (i as f64 * 0.754_877_666 + seed as f64 * 0.569_840_291).fract() * 2.0 - 1.0
    });
    let p = LifParams::<f64>::default();
    let (r, _) = lif::forward(&x, &p, &LifConfig::new(dir, 1))?;
    Ok(r.data()
        .iter()
        .zip(x.data())
        .all(|(&a, &b)| a == b.max(p.v_th)))
}

pub fn run(g: &Global, a: &GradcheckArgs) -> CmdResult {
    if a.shapes.is_empty() || a.groups.is_empty() || a.directions.is_empty() {
        return Err(Failure::usage(
            "need at least one shape, group and direction",
        ));
    }
    if a.groups.contains(&0) {
        return Err(Failure::usage("groups must be >= 1"));
    }
    let seed = g.seed.unwrap_or(7);
    let opts = CheckOptions::default();
    let mut failures = Vec::new();
    let mut total = 0usize;
    let mut case = 0u64;

    println!(
        "lif_backward: real64, step {}, margin {}, tol {:e}",
        opts.step, opts.margin, a.tol
    );
    for &shape in &a.shapes {
        for &groups in &a.groups {
            for &dir in &a.directions {
                let cfg = LifConfig::new(dir, groups);
                let cs = seed + case;
                case += 1;
                let rep = if a.inject_fault {
                    lif::forward_backward_check_with(shape, cfg, cs, &opts, faulty_backward)
                } else {
                    lif::forward_backward_check(shape, cfg, cs, &opts)
                }?;
                let ok = rep.passed(a.tol);
                let name = format!("lif_backward {shape} g={groups} {}", dir_name(dir));
                println!(
                    "{} {name:<44} d_input {:.3e}  d_tau {:.3e}  d_vth {:.3e}",
                    if ok { "PASS" } else { "FAIL" },
                    rep.d_input,
                    rep.d_tau,
                    rep.d_v_th
                );
                total += 1;
                if !ok {
                    failures.push(format!(
                        "{name}: worst d_input at index {:?}",
                        rep.worst_index
                    ));
                }
                if groups == 1 {
                    let ok = clamp_identity(shape, dir, cs)?;
                    println!(
                        "{} lif_clamp_identity {shape} g=1 {}",
                        if ok { "PASS" } else { "FAIL" },
                        dir_name(dir)
                    );
                    total += 1;
                    if !ok {
                        failures.push(format!("lif_clamp_identity {shape} {}", dir_name(dir)));
                    }
                }
            }
        }
    }

    if !a.lif_only {
        let mut record = |r: OpReport, tol: f64| {
            let ok = r.passed(tol);
            println!(
                "{} {:<44} max rel err {:.3e} (tol {:e}, worst {})",
                if ok { "PASS" } else { "FAIL" },
                r.op,
                r.max_rel_err,
                tol,
                r.worst
            );
            total += 1;
            if !ok {
                failures.push(format!("{}: {}", r.op, r.worst));
            }
        };
        for r in check_layers(seed, DEFAULT_STEP)? {
            record(r, a.tol);
        }
        record(
            check_mlp_block(Shape::new(1, 3, 4, 4), 4, seed, DEFAULT_STEP)?,
            a.tol,
        );
        record(
            check_lif_module(Shape::new(1, 4, 8, 8), 4, seed, DEFAULT_STEP)?,
            MODULE_TOL,
        );
        record(check_network(seed, DEFAULT_STEP)?, MODULE_TOL);
    }

    if failures.is_empty() {
        println!("ALL PASS ({total} checks)");
        Ok(())
    } else {
        for f in &failures {
            println!("FAILED {f}");
        }
        Err(Failure::check(format!(
            "{} of {total} gradient checks failed",
            failures.len()
        )))
    }
}
