use crate::error::{Error, Result};
use crate::layers::param::join;
use crate::layers::{
    self, GroupNormCache, GroupNormParams, LinearParams, Mask, ParamMut, ParamRef, Params,
};
use crate::rng::{layer_step_id, stream};
use crate::tensor::{Real, Shape, Tensor4};

use super::block::{
    accumulate, lif_module_backward, lif_module_forward, mlp_block_backward, mlp_block_forward,
    BlockInit, BlockParams, LifModuleCache, MlpCache,
};
use super::config::{ModelConfig, NUM_STAGES};

/// Stream id reserved for parameter initialisation.
const INIT_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct Stage<T> {
    pub blocks: Vec<BlockParams<T>>,
    /// Downsampling into the next stage; absent on the last stage.
    pub merge: Option<LinearParams<T>>,
}

/// Parameters of the whole backbone. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct SnnMlp<T> {
    pub cfg: ModelConfig,
    pub patch_embed: LinearParams<T>,
    pub stages: Vec<Stage<T>>,
    pub head_norm: GroupNormParams<T>,
    pub head: LinearParams<T>,
}

impl<T: Real> Params<T> for SnnMlp<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        self.patch_embed.visit(&join(prefix, "patch_embed"), out);
        for (s, st) in self.stages.iter().enumerate() {
            for (b, blk) in st.blocks.iter().enumerate() {
                blk.visit(&join(prefix, &format!("stage{s}.block{b}")), out);
            }
            if let Some(m) = &st.merge {
                m.visit(&join(prefix, &format!("stage{s}.merge")), out);
            }
        }
        self.head_norm.visit(&join(prefix, "head_norm"), out);
        self.head.visit(&join(prefix, "head"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        self.patch_embed
            .visit_mut(&join(prefix, "patch_embed"), out);
        for (s, st) in self.stages.iter_mut().enumerate() {
            for (b, blk) in st.blocks.iter_mut().enumerate() {
                blk.visit_mut(&join(prefix, &format!("stage{s}.block{b}")), out);
            }
            if let Some(m) = &mut st.merge {
                m.visit_mut(&join(prefix, &format!("stage{s}.merge")), out);
            }
        }
        self.head_norm.visit_mut(&join(prefix, "head_norm"), out);
        self.head.visit_mut(&join(prefix, "head"), out);
    }
}

/// Settings of one forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Pass {
    /// Enables dropout and drop-path.
    pub training: bool,
    pub seed: u64,
    /// Optimizer step, mixed into the stochastic-layer streams.
    pub step: u64,
}

impl Pass {
    pub fn eval() -> Self {
        Pass::default()
    }

    pub fn train(seed: u64, step: u64) -> Self {
        Pass {
            training: true,
            seed,
            step,
        }
    }
}

#[derive(Clone, Debug)]
struct BlockCache<T> {
    lif: LifModuleCache<T>,
    lif_mask: Mask<T>,
    mlp: MlpCache<T>,
    mlp_mask: Mask<T>,
}

/// Everything [`SnnMlp::backward`] needs from a forward pass.
#[derive(Clone, Debug)]
pub struct NetCache<T> {
    img: Tensor4<T>,
    blocks: Vec<Vec<BlockCache<T>>>,
    merge_inputs: Vec<Tensor4<T>>,
    head_in_shape: Shape,
    head_norm: GroupNormCache<T>,
    pooled: Tensor4<T>,
}

type Tap<'t, T> = Option<&'t mut dyn FnMut(&str, &Tensor4<T>)>;

impl<T: Real> SnnMlp<T> {
    /// Truncated-normal projections, unit norms, configured LIF initial values.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream(seed, INIT_STREAM);
        let b = BlockInit {
            norm_groups: cfg.norm_groups,
            tau: cfg.tau_init,
            v_th: cfg.v_th_init,
            learn_lif: cfg.learn_lif,
        };
        let patch_embed = LinearParams::init(3 * cfg.patch * cfg.patch, cfg.embed_dim, &mut rng);
        let mut stages = Vec::with_capacity(NUM_STAGES);
        for s in 0..NUM_STAGES {
            let c = cfg.width(s);
            let blocks = (0..cfg.depths[s])
                .map(|_| BlockParams::init(c, cfg.hidden(s), &b, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let merge = (s + 1 < NUM_STAGES).then(|| LinearParams::init(4 * c, 2 * c, &mut rng));
            stages.push(Stage { blocks, merge });
        }
        let c_last = cfg.width(NUM_STAGES - 1);
        Ok(SnnMlp {
            cfg: cfg.clone(),
            patch_embed,
            stages,
            head_norm: GroupNormParams::new(c_last, cfg.norm_groups)?,
            head: LinearParams::init(c_last, cfg.num_classes, &mut rng),
        })
    }

    /// Same structure with every tensor zeroed; the LIF flags are kept.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.data.fill(T::zero());
        }
        z
    }

    /// Shape of the activations entering stage `s` for an `h×w` input.
    pub fn stage_shape(&self, n: usize, h: usize, w: usize, s: usize) -> Shape {
        let d = self.cfg.patch << s;
        Shape::new(n, self.cfg.width(s), h / d, w / d)
    }

    fn check_input(&self, img: &Tensor4<T>) -> Result<()> {
        let s = img.shape();
        let m = self.cfg.input_multiple();
        if s.c != 3
            || s.n == 0
            || s.h == 0
            || s.w == 0
            || !s.h.is_multiple_of(m)
            || !s.w.is_multiple_of(m)
        {
            return Err(Error::invalid(format!(
                "input {s} must be (n, 3, h, w) with n >= 1 and h, w positive multiples of {m}"
            )));
        }
        img.check_finite()
    }

    /// Forward pass returning `(n, num_classes, 1, 1)` logits and the cache.
    pub fn forward(&self, img: &Tensor4<T>, pass: Pass) -> Result<(Tensor4<T>, NetCache<T>)> {
        let (logits, cache) = self.run(img, pass, true, None)?;
        Ok((logits, cache.expect("cache requested")))
    }

    /// Forward pass without keeping intermediates.
    pub fn infer(&self, img: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(self.run(img, Pass::eval(), false, None)?.0)
    }

    /// Every name accepted by [`SnnMlp::feature`].
    pub fn feature_names(&self) -> Vec<String> {
        let mut v = vec!["patch_embed".to_string()];
        for s in 0..NUM_STAGES {
            for b in 0..self.cfg.depths[s] {
                for t in ["lif_out", "vlif_out", "hlif_out", "mixer_out", "out"] {
                    v.push(format!("stage{s}.block{b}.{t}"));
                }
            }
            if s + 1 < NUM_STAGES {
                v.push(format!("stage{s}.merge"));
            }
        }
        v.extend(["pooled".to_string(), "logits".to_string()]);
        v
    }

    /// Intermediate activation `name` of an evaluation pass.
    pub fn feature(&self, img: &Tensor4<T>, name: &str) -> Result<Tensor4<T>> {
        let names = self.feature_names();
        if !names.iter().any(|n| n == name) {
            return Err(Error::invalid(format!(
                "unknown layer {name:?}; valid layers: {}",
                names.join(", ")
            )));
        }
        let mut found = None;
        let mut tap = |n: &str, t: &Tensor4<T>| {
            if n == name {
                found = Some(t.clone());
            }
        };
        self.run(img, Pass::eval(), false, Some(&mut tap))?;
        found.ok_or_else(|| Error::invalid(format!("layer {name:?} was not produced")))
    }

    fn run(
        &self,
        img: &Tensor4<T>,
        pass: Pass,
        keep: bool,
        mut tap: Tap<'_, T>,
    ) -> Result<(Tensor4<T>, Option<NetCache<T>>)> {
        self.check_input(img)?;
        let cfg = &self.cfg;
        let (n, h, w) = (img.shape().n, img.shape().h, img.shape().w);
        let mut emit = |name: &dyn Fn() -> String, t: &Tensor4<T>| {
            if let Some(f) = tap.as_mut() {
                f(&name(), t);
            }
        };

        let mut x = layers::patch_embed(img, &self.patch_embed, cfg.patch)?;
        emit(&|| "patch_embed".into(), &x);
        let mut blocks = Vec::new();
        let mut merge_inputs = Vec::new();
        let mut gi = 0usize;
        for (s, st) in self.stages.iter().enumerate() {
            let mut stage_caches = Vec::new();
            for (b, p) in st.blocks.iter().enumerate() {
                x.expect_shape("block input", self.stage_shape(n, h, w, s))?;
                let rate = cfg.drop_path_rate(gi);
                let id = 3 * gi as u32;
                let rng = |k: u32| stream(pass.seed, layer_step_id(id + k, pass.step));

                let (f, lc) = lif_module_forward(&x, &p.lif, cfg.groups)?;
                emit(&|| format!("stage{s}.block{b}.lif_out"), &lc.rv);
                emit(&|| format!("stage{s}.block{b}.vlif_out"), &lc.rv);
                emit(&|| format!("stage{s}.block{b}.hlif_out"), &lc.rh);
                let (f, lif_mask) = layers::drop_path(&f, rate, &mut rng(0), pass.training)?;
                x.add_assign(&f)?;
                emit(&|| format!("stage{s}.block{b}.mixer_out"), &x);

                let (g, mc) =
                    mlp_block_forward(&x, &p.mlp, cfg.dropout, &mut rng(2), pass.training)?;
                let (g, mlp_mask) = layers::drop_path(&g, rate, &mut rng(1), pass.training)?;
                x.add_assign(&g)?;
                emit(&|| format!("stage{s}.block{b}.out"), &x);

                if keep {
                    stage_caches.push(BlockCache {
                        lif: lc,
                        lif_mask,
                        mlp: mc,
                        mlp_mask,
                    });
                }
                gi += 1;
            }
            blocks.push(stage_caches);
            if let Some(m) = &st.merge {
                let y = layers::patch_merge(&x, m)?;
                if keep {
                    merge_inputs.push(std::mem::replace(&mut x, y));
                } else {
                    x = y;
                }
                emit(&|| format!("stage{s}.merge"), &x);
            }
        }
        let head_in_shape = x.shape();
        let (normed, head_norm) = layers::group_norm(&x, &self.head_norm)?;
        let pooled = normed.mean_hw()?;
        emit(&|| "pooled".into(), &pooled);
        let logits = layers::channel_mlp(&pooled, &self.head)?;
        emit(&|| "logits".into(), &logits);
        let cache = keep.then(|| NetCache {
            img: img.clone(),
            blocks,
            merge_inputs,
            head_in_shape,
            head_norm,
            pooled,
        });
        Ok((logits, cache))
    }

    /// Parameter gradients for upstream `d_logits`.
    pub fn backward(&self, cache: &NetCache<T>, d_logits: &Tensor4<T>) -> Result<Self> {
        Ok(self.backward_with_input(cache, d_logits)?.0)
    }

    /// Parameter gradients and the gradient with respect to the image.
    pub fn backward_with_input(
        &self,
        cache: &NetCache<T>,
        d_logits: &Tensor4<T>,
    ) -> Result<(Self, Tensor4<T>)> {
        let mut g = self.zeros_like();
        let (d_pooled, g_head) = layers::channel_mlp_backward(&cache.pooled, &self.head, d_logits)?;
        g.head = g_head;
        let d_normed = Tensor4::mean_hw_backward(&d_pooled, cache.head_in_shape)?;
        let (mut dx, g_hn) =
            layers::group_norm_backward(&cache.head_norm, &self.head_norm, &d_normed)?;
        g.head_norm = g_hn;

        for s in (0..self.stages.len()).rev() {
            let st = &self.stages[s];
            if let Some(m) = &st.merge {
                let (d, gm) = layers::patch_merge_backward(&cache.merge_inputs[s], m, &dx)?;
                g.stages[s].merge = Some(gm);
                dx = d;
            }
            for b in (0..st.blocks.len()).rev() {
                let c = &cache.blocks[s][b];
                let p = &st.blocks[b];
                let (d_mlp_in, g_mlp) =
                    mlp_block_backward(&c.mlp, &p.mlp, &c.mlp_mask.backward(&dx))?;
                dx.add_assign(&d_mlp_in)?;
                let (d_lif_in, g_lif) =
                    lif_module_backward(&c.lif, &p.lif, &c.lif_mask.backward(&dx))?;
                dx.add_assign(&d_lif_in)?;
                let gb = &mut g.stages[s].blocks[b];
                gb.mlp = g_mlp;
                gb.lif = g_lif;
            }
        }
        let (d_img, g_pe) =
            layers::patch_embed_backward(&cache.img, &self.patch_embed, self.cfg.patch, &dx)?;
        g.patch_embed = g_pe;
        Ok((g, d_img))
    }

    /// Adds `g` into `self` tensor by tensor.
    pub fn accumulate(&mut self, g: &Self) {
        accumulate(self, g);
    }
}

impl<T: Real> NetCache<T> {
    /// Smallest `|u - v_th|` over every LIF membrane value of the pass.
    pub fn lif_margin(&self) -> f64 {
        self.blocks
            .iter()
            .flatten()
            .map(|b| b.lif.lif_margin())
            .fold(f64::INFINITY, f64::min)
    }
}
