use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::lif;

pub const NUM_STAGES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Tiny,
    Small,
    Base,
}

impl Variant {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tiny" | "t" => Some(Variant::Tiny),
            "small" | "s" => Some(Variant::Small),
            "base" | "b" => Some(Variant::Base),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tiny => "tiny",
            Variant::Small => "small",
            Variant::Base => "base",
        }
    }

    /// Published (params, FLOPs at 224×224) budget.
    pub fn reference_budget(self) -> (f64, f64) {
        match self {
            Variant::Tiny => (28e6, 4.4e9),
            Variant::Small => (50e6, 8.5e9),
            Variant::Base => (88e6, 15.2e9),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub patch: usize,
    pub embed_dim: usize,
    pub depths: [usize; NUM_STAGES],
    /// LIF group length along each chained axis.
    pub groups: usize,
    pub mlp_ratio: f64,
    pub num_classes: usize,
    /// Maximum drop-path rate, reached at the last block.
    pub drop_path: f64,
    pub dropout: f64,
    pub norm_groups: usize,
    pub tau_init: f64,
    pub v_th_init: f64,
    pub learn_lif: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::variant(Variant::Tiny)
    }
}

impl ModelConfig {
    pub fn variant(v: Variant) -> Self {
        let (embed_dim, depths, drop_path) = match v {
            Variant::Tiny => (96, [2, 2, 6, 2], 0.1),
            Variant::Small => (96, [2, 2, 18, 2], 0.2),
            Variant::Base => (128, [2, 2, 18, 2], 0.3),
        };
        ModelConfig {
            patch: 4,
            embed_dim,
            depths,
            groups: lif::DEFAULT_GROUPS,
            mlp_ratio: 4.0,
            num_classes: 1000,
            drop_path,
            dropout: 0.0,
            norm_groups: 1,
            tau_init: lif::DEFAULT_TAU,
            v_th_init: lif::DEFAULT_V_TH,
            learn_lif: true,
        }
    }

    /// Desk-scale model for 32×32 inputs.
    pub fn toy(num_classes: usize) -> Self {
        ModelConfig {
            embed_dim: 32,
            depths: [1, 1, 2, 1],
            num_classes,
            drop_path: 0.0,
            ..Self::variant(Variant::Tiny)
        }
    }

    pub fn width(&self, stage: usize) -> usize {
        self.embed_dim << stage
    }

    pub fn hidden(&self, stage: usize) -> usize {
        (self.mlp_ratio * self.width(stage) as f64).floor() as usize
    }

    pub fn total_blocks(&self) -> usize {
        self.depths.iter().sum()
    }

    /// Drop-path rate of the `i`-th block overall, linear from 0 to `drop_path`.
    pub fn drop_path_rate(&self, i: usize) -> f64 {
        let n = self.total_blocks();
        if n <= 1 {
            0.0
        } else {
            self.drop_path * i as f64 / (n - 1) as f64
        }
    }

    /// Smallest spatial multiple an input must have.
    pub fn input_multiple(&self) -> usize {
        self.patch << (NUM_STAGES - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.patch == 0 || self.embed_dim == 0 || self.num_classes == 0 {
            return bad("patch, embed_dim and num_classes must be positive".into());
        }
        if self.depths.contains(&0) {
            return bad(format!(
                "every stage needs at least one block, got {:?}",
                self.depths
            ));
        }
        if self.groups == 0 {
            return bad("groups must be >= 1".into());
        }
        if self.norm_groups == 0 || !self.embed_dim.is_multiple_of(self.norm_groups) {
            return bad(format!(
                "norm_groups {} must divide embed_dim {}",
                self.norm_groups, self.embed_dim
            ));
        }
        if self.mlp_ratio.is_nan() || self.mlp_ratio <= 0.0 || self.hidden(0) == 0 {
            return bad(format!("mlp_ratio {} too small", self.mlp_ratio));
        }
        if !(0.0..1.0).contains(&self.drop_path) || !(0.0..1.0).contains(&self.dropout) {
            return bad("drop rates must lie in [0, 1)".into());
        }
        if !self.tau_init.is_finite() || !self.v_th_init.is_finite() {
            return bad("LIF initial values must be finite".into());
        }
        Ok(())
    }

    pub const KEYS: &'static [&'static str] = &[
        "patch",
        "embed_dim",
        "depths",
        "groups",
        "mlp_ratio",
        "num_classes",
        "drop_path",
        "dropout",
        "norm_groups",
        "tau_init",
        "v_th_init",
        "learn_lif",
    ];

    pub fn write_kv(&self, m: &mut KvMap) {
        m.set("patch", self.patch);
        m.set("embed_dim", self.embed_dim);
        m.set(
            "depths",
            self.depths
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        m.set("groups", self.groups);
        m.set("mlp_ratio", self.mlp_ratio);
        m.set("num_classes", self.num_classes);
        m.set("drop_path", self.drop_path);
        m.set("dropout", self.dropout);
        m.set("norm_groups", self.norm_groups);
        m.set("tau_init", self.tau_init);
        m.set("v_th_init", self.v_th_init);
        m.set("learn_lif", self.learn_lif);
    }

    /// Applies any model keys present in `m` on top of `self`. A `variant`
    /// key, if present, resets to that variant first.
    pub fn apply_kv(mut self, m: &KvMap) -> Result<Self> {
        if let Some(v) = m.get_str("variant") {
            self = match v {
                "toy" => Self::toy(self.num_classes),
                other => Self::variant(
                    Variant::parse(other)
                        .ok_or_else(|| Error::invalid(format!("unknown variant {other:?}")))?,
                ),
            };
        }
        if let Some(d) = m.get_str("depths") {
            let parts: Vec<usize> = d
                .split(',')
                .map(|p| p.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::invalid(format!("bad depths {d:?}")))?;
            self.depths = parts.try_into().map_err(|_| {
                Error::invalid(format!("depths needs {NUM_STAGES} entries, got {d:?}"))
            })?;
        }
        macro_rules! take {
            ($($f:ident),*) => {$(
                if let Some(v) = m.get(stringify!($f))? { self.$f = v; }
            )*};
        }
        take!(
            patch,
            embed_dim,
            groups,
            mlp_ratio,
            num_classes,
            drop_path,
            dropout,
            norm_groups,
            tau_init,
            v_th_init,
            learn_lif
        );
        self.validate()?;
        Ok(self)
    }
}
