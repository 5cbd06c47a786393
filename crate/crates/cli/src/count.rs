use clap::{Args, ValueEnum};
use lifmixer::model::{count_flops, count_params, ModelConfig, Variant};

use crate::run::load_kv;
use crate::{CmdResult, Failure, Global};

pub const PARAM_GATE: f64 = 0.05;
pub const FLOP_GATE: f64 = 0.10;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VariantArg {
    Tiny,
    Small,
    Base,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Tiny => Variant::Tiny,
            VariantArg::Small => Variant::Small,
            VariantArg::Base => Variant::Base,
        }
    }
}

#[derive(Args, Debug)]
pub struct CountArgs {
    /// Variants to count; defaults to all three unless --config is given.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub variant: Vec<VariantArg>,
    /// Square input side for the FLOP count.
    #[arg(long, default_value_t = 224)]
    pub input: usize,
}

fn human(x: f64, unit: f64, suffix: &str) -> String {
    format!("{:.2}{suffix}", x / unit)
}

fn deviation(actual: f64, reference: f64) -> f64 {
    (actual - reference) / reference
}

pub fn run(g: &Global, a: &CountArgs) -> CmdResult {
    let mut models: Vec<(String, ModelConfig)> = Vec::new();
    for &v in &a.variant {
        let v = Variant::from(v);
        models.push((v.name().to_string(), ModelConfig::variant(v)));
    }
    if g.config.is_some() || !g.set.is_empty() {
        let kv = load_kv(g)?;
        kv.reject_unknown(&[ModelConfig::KEYS, &["variant", "seed"]].concat())?;
        models.push(("config".into(), ModelConfig::default().apply_kv(&kv)?));
    }
    if models.is_empty() {
        for v in [Variant::Tiny, Variant::Small, Variant::Base] {
            models.push((v.name().to_string(), ModelConfig::variant(v)));
        }
    }

    println!(
        "{:<8} {:>14} {:>9} {:>16} {:>9}   reference   deviation",
        "model", "params", "", "flops", ""
    );
    let mut out_of_gate = Vec::new();
    for (name, cfg) in &models {
        let p = count_params(cfg);
        let f = count_flops(cfg, a.input, a.input);
        let mut line = format!(
            "{name:<8} {p:>14} {:>9} {f:>16} {:>9}",
            human(p as f64, 1e6, "M"),
            human(f as f64, 1e9, "G")
        );
        let reference = [Variant::Tiny, Variant::Small, Variant::Base]
            .into_iter()
            .find(|&v| ModelConfig::variant(v) == *cfg);
        if let (Some(v), 224) = (reference, a.input) {
            let (rp, rf) = v.reference_budget();
            let (dp, df) = (deviation(p as f64, rp), deviation(f as f64, rf));
            line.push_str(&format!(
                "   {:>4} {:>6}   {:+.2}% {:+.2}%",
                format!("{}M", rp / 1e6),
                format!("{}G", rf / 1e9),
                100.0 * dp,
                100.0 * df
            ));
            if dp.abs() > PARAM_GATE || df.abs() > FLOP_GATE {
                out_of_gate.push(name.clone());
            }
        }
        println!("{line}");
    }
    if out_of_gate.is_empty() {
        Ok(())
    } else {
        Err(Failure::check(format!(
            "budgets outside ±{}% params / ±{}% FLOPs: {}",
            PARAM_GATE * 100.0,
            FLOP_GATE * 100.0,
            out_of_gate.join(", ")
        )))
    }
}
