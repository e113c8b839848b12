//! Small pre-norm Vision Transformer encoder with per-block feature taps.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lora::{lora_linear_forward, AdapterBindings};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-6;
const CLS_STD: f64 = 1.0;
const POS_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub patch_size: usize,
    pub image_size: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
}

fn default_channels() -> usize {
    3
}

fn default_mlp_ratio() -> usize {
    4
}

impl EncoderConfig {
    /// Desk-scale teacher: depth 6, width 64, 4 heads.
    pub fn teacher() -> Self {
        EncoderConfig {
            depth: 6,
            dim: 64,
            heads: 4,
            patch_size: 4,
            image_size: 16,
            channels: 3,
            mlp_ratio: 4,
        }
    }

    /// Desk-scale student: depth 6, width 32, 2 heads.
    pub fn student() -> Self {
        EncoderConfig {
            dim: 32,
            heads: 2,
            ..Self::teacher()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("depth", self.depth),
            ("dim", self.dim),
            ("heads", self.heads),
            ("patch_size", self.patch_size),
            ("image_size", self.image_size),
            ("channels", self.channels),
            ("mlp_ratio", self.mlp_ratio),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("encoder {name} must be positive")));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "encoder dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        let per_side = self.image_size / self.patch_size;
        per_side * per_side
    }

    /// Patches plus the CLS token.
    pub fn tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn hidden_dim(&self) -> usize {
        self.dim * self.mlp_ratio
    }
}

#[derive(Clone)]
pub struct Block {
    pub norm1_weight: Tensor,
    pub norm1_bias: Tensor,
    /// Fused projection, columns ordered Q then K then V.
    pub qkv_weight: Tensor,
    /// Query and value biases. A key bias would add the same constant to
    /// every score of a query, which softmax ignores, so there is none.
    pub q_bias: Tensor,
    pub v_bias: Tensor,
    pub proj_weight: Tensor,
    pub proj_bias: Tensor,
    pub norm2_weight: Tensor,
    pub norm2_bias: Tensor,
    pub fc1_weight: Tensor,
    pub fc1_bias: Tensor,
    pub fc2_weight: Tensor,
    pub fc2_bias: Tensor,
}

impl Block {
    fn init(cfg: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        let d = cfg.dim;
        let h = cfg.hidden_dim();
        Ok(Block {
            norm1_weight: param(Tensor::ones(&[d]))?,
            norm1_bias: param(Tensor::zeros(&[d]))?,
            qkv_weight: param(lecun(&[d, 3 * d], rng))?,
            q_bias: param(Tensor::zeros(&[d]))?,
            v_bias: param(Tensor::zeros(&[d]))?,
            proj_weight: param(lecun(&[d, d], rng))?,
            proj_bias: param(Tensor::zeros(&[d]))?,
            norm2_weight: param(Tensor::ones(&[d]))?,
            norm2_bias: param(Tensor::zeros(&[d]))?,
            fc1_weight: param(lecun(&[d, h], rng))?,
            fc1_bias: param(Tensor::zeros(&[h]))?,
            fc2_weight: param(lecun(&[h, d], rng))?,
            fc2_bias: param(Tensor::zeros(&[d]))?,
        })
    }

    fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        let entries = [
            ("norm1.weight", &self.norm1_weight),
            ("norm1.bias", &self.norm1_bias),
            ("attn.qkv.weight", &self.qkv_weight),
            ("attn.q.bias", &self.q_bias),
            ("attn.v.bias", &self.v_bias),
            ("attn.proj.weight", &self.proj_weight),
            ("attn.proj.bias", &self.proj_bias),
            ("norm2.weight", &self.norm2_weight),
            ("norm2.bias", &self.norm2_bias),
            ("mlp.fc1.weight", &self.fc1_weight),
            ("mlp.fc1.bias", &self.fc1_bias),
            ("mlp.fc2.weight", &self.fc2_weight),
            ("mlp.fc2.bias", &self.fc2_bias),
        ];
        for (name, t) in entries {
            out.push((format!("{prefix}.{name}"), t.clone()));
        }
    }
}

/// LeCun-normal weights: variance-preserving for unit-variance inputs.
fn lecun(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::normal(shape, 1.0 / (shape[0] as f64).sqrt(), rng)
}

fn param(t: Tensor) -> Result<Tensor> {
    t.set_requires_grad(true)?;
    Ok(t)
}

#[derive(Clone)]
pub struct Encoder {
    config: EncoderConfig,
    pub patch_weight: Tensor,
    pub patch_bias: Tensor,
    pub cls_token: Tensor,
    pub pos_embed: Tensor,
    pub blocks: Vec<Block>,
    pub norm_weight: Tensor,
    pub norm_bias: Tensor,
}

/// Per-block token tensors (`[B, 1+P, d]` each) and the final normalised
/// tokens. `attention` holds post-softmax maps `[B·heads, N, N]` per block
/// when requested.
pub struct EncoderOutput {
    pub blocks: Vec<Tensor>,
    pub final_tokens: Tensor,
    pub attention: Vec<Tensor>,
}

impl Encoder {
    /// Fixed-seed random initialisation standing in for a pre-trained backbone.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, "encoder-init");
        let d = config.dim;
        let patch_weight = param(lecun(&[config.patch_dim(), d], &mut rng))?;
        let patch_bias = param(Tensor::zeros(&[d]))?;
        let cls_token = param(Tensor::normal(&[1, d], CLS_STD, &mut rng))?;
        let pos_embed = param(Tensor::normal(&[config.tokens(), d], POS_STD, &mut rng))?;
        let blocks = (0..config.depth)
            .map(|_| Block::init(&config, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Encoder {
            config,
            patch_weight,
            patch_bias,
            cls_token,
            pos_embed,
            blocks,
            norm_weight: param(Tensor::ones(&[d]))?,
            norm_bias: param(Tensor::zeros(&[d]))?,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Every parameter with a stable dotted name, in a fixed order.
    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("patch_embed.weight".to_string(), self.patch_weight.clone()),
            ("patch_embed.bias".to_string(), self.patch_bias.clone()),
            ("cls_token".to_string(), self.cls_token.clone()),
            ("pos_embed".to_string(), self.pos_embed.clone()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            b.named(&format!("blocks.{i}"), &mut out);
        }
        out.push(("norm.weight".into(), self.norm_weight.clone()));
        out.push(("norm.bias".into(), self.norm_bias.clone()));
        out
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }

    /// Freeze (`false`) or unfreeze every encoder weight.
    pub fn set_trainable(&self, trainable: bool) {
        for p in self.parameters() {
            p.set_requires_grad(trainable).expect("encoder weights are leaves");
        }
    }

    /// Images `[B, H, W, C]` to tokens `[B, 1+P, d]`: non-overlapping
    /// patches projected linearly, CLS prepended, positions added.
    pub fn patch_embed(&self, images: &Tensor) -> Result<Tensor> {
        let c = &self.config;
        let s = images.shape();
        if s.len() != 4 || s[1] != c.image_size || s[2] != c.image_size || s[3] != c.channels {
            return Err(Error::Config(format!(
                "images of shape {s:?} do not match encoder input {}×{}×{}",
                c.image_size, c.image_size, c.channels
            )));
        }
        let (b, p, g) = (s[0], c.patch_size, c.image_size / c.patch_size);
        let patches = images
            .reshape(&[b, g, p, g, p, c.channels])?
            .permute(&[0, 1, 3, 2, 4, 5])?
            .reshape(&[b, g * g, c.patch_dim()])?;
        let tokens = patches.matmul(&self.patch_weight)?.add(&self.patch_bias)?;
        let cls = self
            .cls_token
            .gather_rows(&vec![0; b])?
            .reshape(&[b, 1, c.dim])?;
        Tensor::concat(&[cls, tokens], 1)?.add(&self.pos_embed)
    }

    pub fn forward(&self, images: &Tensor, adapters: Option<&AdapterBindings>) -> Result<EncoderOutput> {
        self.forward_with(images, adapters, false)
    }

    pub fn forward_with(
        &self,
        images: &Tensor,
        adapters: Option<&AdapterBindings>,
        capture_attention: bool,
    ) -> Result<EncoderOutput> {
        if let Some(a) = adapters {
            a.check_against(&self.config)?;
        }
        let mut x = self.patch_embed(images)?;
        let mut blocks = Vec::with_capacity(self.config.depth);
        let mut attention = Vec::new();
        for (i, blk) in self.blocks.iter().enumerate() {
            let adapter = adapters.and_then(|a| a.slot(i));
            let scaling = adapters.map_or(1.0, |a| a.scaling());
            let (out, attn) = self.block_forward(blk, &x, adapter, scaling)?;
            if capture_attention {
                attention.push(attn);
            }
            blocks.push(out.clone());
            x = out;
        }
        let final_tokens = x.layer_norm(&self.norm_weight, &self.norm_bias, LAYER_NORM_EPS)?;
        Ok(EncoderOutput {
            blocks,
            final_tokens,
            attention,
        })
    }

    fn block_forward(
        &self,
        blk: &Block,
        x: &Tensor,
        adapter: Option<&crate::lora::AdapterRef>,
        scaling: f64,
    ) -> Result<(Tensor, Tensor)> {
        let c = &self.config;
        let (b, n, d, h, hd) = (x.shape()[0], x.shape()[1], c.dim, c.heads, c.head_dim());

        let normed = x.layer_norm(&blk.norm1_weight, &blk.norm1_bias, LAYER_NORM_EPS)?;
        let qkv = match adapter {
            Some(a) => lora_linear_forward(&normed, &blk.qkv_weight, a, scaling)?,
            None => normed.matmul(&blk.qkv_weight)?,
        }
        .add(&Tensor::concat(&[blk.q_bias.clone(), Tensor::zeros(&[d]), blk.v_bias.clone()], 0)?)?;
        let qkv = qkv
            .reshape(&[b, n, 3, h, hd])?
            .permute(&[2, 0, 3, 1, 4])?
            .reshape(&[3, b * h, n, hd])?;
        let q = qkv.narrow(0, 0, 1)?.reshape(&[b * h, n, hd])?;
        let k = qkv.narrow(0, 1, 1)?.reshape(&[b * h, n, hd])?;
        let v = qkv.narrow(0, 2, 1)?.reshape(&[b * h, n, hd])?;
        let attn = q
            .bmm(&k, true)?
            .scale(1.0 / (hd as f64).sqrt())
            .softmax()?;
        let mixed = attn
            .bmm(&v, false)?
            .reshape(&[b, h, n, hd])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, n, d])?;
        let x = x.add(&mixed.matmul(&blk.proj_weight)?.add(&blk.proj_bias)?)?;

        let normed = x.layer_norm(&blk.norm2_weight, &blk.norm2_bias, LAYER_NORM_EPS)?;
        let hidden = normed.matmul(&blk.fc1_weight)?.add(&blk.fc1_bias)?.gelu();
        let out = x.add(&hidden.matmul(&blk.fc2_weight)?.add(&blk.fc2_bias)?)?;
        Ok((out, attn))
    }
}

/// Widening plan from a narrow encoder to a wider one: every narrow channel
/// (and head, and hidden unit) is replicated `factor` times.
struct Widen {
    factor: usize,
    noise: f64,
}

impl Widen {
    /// `src: [rows, cols]` to `[rows·fr, cols·fc]`. Column `(r, c)` copies
    /// column `c`; inputs are replicated too, so values are divided by the
    /// row factor to keep outputs equal. `col_groups` splits the columns
    /// into independently replicated segments (Q, K, V). Noise has standard
    /// deviation `noise · scale`.
    fn matrix(&self, src: &Tensor, widen_rows: bool, col_groups: usize, scale: f64, rng: &mut Rng) -> Result<Tensor> {
        let (rows, cols) = (src.shape()[0], src.shape()[1]);
        let fr = if widen_rows { self.factor } else { 1 };
        let seg = cols / col_groups;
        let out_rows = rows * fr;
        let out_cols = cols * self.factor;
        let d = src.data();
        let std = self.noise * scale;
        let mut out = Vec::with_capacity(out_rows * out_cols);
        for _ in 0..fr {
            for r in 0..rows {
                for g in 0..col_groups {
                    for _ in 0..self.factor {
                        for c in 0..seg {
                            let noise: f64 = rng.sample(StandardNormal);
                            out.push(d[r * cols + g * seg + c] / fr as f64 + std * noise);
                        }
                    }
                }
            }
        }
        param(Tensor::new(&[out_rows, out_cols], out)?)
    }

    fn vector(&self, src: &Tensor, col_groups: usize) -> Result<Tensor> {
        let d = src.data();
        let seg = d.len() / col_groups;
        let mut out = Vec::with_capacity(d.len() * self.factor);
        for g in 0..col_groups {
            for _ in 0..self.factor {
                out.extend_from_slice(&d[g * seg..(g + 1) * seg]);
            }
        }
        param(Tensor::new(&[out.len()], out)?)
    }
}

impl Encoder {
    /// A wider encoder computing the same function: every channel, head and
    /// hidden unit is replicated `config.dim / self.dim` times, so each
    /// block's tokens are this encoder's tokens repeated. Block `i` lands at
    /// `placement[i]`; the remaining blocks are identities (zero output
    /// projections). Gaussian noise of relative scale `noise` is then added
    /// to every matrix. Serves as a stand-in for a pre-trained teacher and
    /// student whose representations start out closely aligned.
    pub fn widen(&self, config: EncoderConfig, placement: &[usize], noise: f64, seed: u64) -> Result<Encoder> {
        config.validate()?;
        let src = &self.config;
        let factor = config.dim / src.dim;
        let compatible = factor >= 1
            && config.dim == factor * src.dim
            && config.heads == factor * src.heads
            && config.patch_size == src.patch_size
            && config.image_size == src.image_size
            && config.channels == src.channels
            && config.mlp_ratio == src.mlp_ratio;
        if !compatible {
            return Err(Error::Config(format!("cannot widen {src:?} into {config:?}")));
        }
        let strictly_increasing = placement.windows(2).all(|w| w[0] < w[1]);
        if placement.len() != src.depth || !strictly_increasing || placement.iter().any(|&b| b >= config.depth) {
            return Err(Error::Config(format!(
                "block placement {placement:?} does not fit depth {} → {}",
                src.depth, config.depth
            )));
        }
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(Error::Config(format!("widening noise must be non-negative, got {noise}")));
        }
        let w = Widen { factor, noise };
        let fan = |n: usize| 1.0 / (n as f64).sqrt();
        let mut rng = rng::stream(seed, "widen-noise");
        let mut blocks = Vec::with_capacity(config.depth);
        for j in 0..config.depth {
            let block = match placement.iter().position(|&p| p == j) {
                Some(i) => {
                    let s = &self.blocks[i];
                    Block {
                        norm1_weight: w.vector(&s.norm1_weight, 1)?,
                        norm1_bias: w.vector(&s.norm1_bias, 1)?,
                        qkv_weight: w.matrix(&s.qkv_weight, true, 3, fan(config.dim), &mut rng)?,
                        q_bias: w.vector(&s.q_bias, 1)?,
                        v_bias: w.vector(&s.v_bias, 1)?,
                        proj_weight: w.matrix(&s.proj_weight, true, 1, fan(config.dim), &mut rng)?,
                        proj_bias: w.vector(&s.proj_bias, 1)?,
                        norm2_weight: w.vector(&s.norm2_weight, 1)?,
                        norm2_bias: w.vector(&s.norm2_bias, 1)?,
                        fc1_weight: w.matrix(&s.fc1_weight, true, 1, fan(config.dim), &mut rng)?,
                        fc1_bias: w.vector(&s.fc1_bias, 1)?,
                        fc2_weight: w.matrix(&s.fc2_weight, true, 1, fan(config.hidden_dim()), &mut rng)?,
                        fc2_bias: w.vector(&s.fc2_bias, 1)?,
                    }
                }
                None => {
                    let b = Block::init(&config, &mut rng)?;
                    b.proj_weight.data_mut().iter_mut().for_each(|v| *v *= noise);
                    b.fc2_weight.data_mut().iter_mut().for_each(|v| *v *= noise);
                    b
                }
            };
            blocks.push(block);
        }
        Ok(Encoder {
            config,
            patch_weight: w.matrix(&self.patch_weight, false, 1, fan(config.patch_dim()), &mut rng)?,
            patch_bias: w.vector(&self.patch_bias, 1)?,
            cls_token: w.matrix(&self.cls_token, false, 1, CLS_STD, &mut rng)?,
            pos_embed: w.matrix(&self.pos_embed, false, 1, POS_STD, &mut rng)?,
            blocks,
            norm_weight: w.vector(&self.norm_weight, 1)?,
            norm_bias: w.vector(&self.norm_bias, 1)?,
        })
    }
}

/// CLS vectors of the last `k` blocks, concatenated in block order:
/// `[B, k·d]`.
pub fn extract_cls_concat(per_block: &[Tensor], k: usize) -> Result<Tensor> {
    if k == 0 || k > per_block.len() {
        return Err(Error::Usage(format!(
            "cannot take CLS from the last {k} of {} blocks",
            per_block.len()
        )));
    }
    let parts = per_block[per_block.len() - k..]
        .iter()
        .map(cls_of)
        .collect::<Result<Vec<_>>>()?;
    Tensor::concat(&parts, 1)
}

/// `[B, N, d] -> [B, d]`, the token at position 0.
pub fn cls_of(tokens: &Tensor) -> Result<Tensor> {
    let s = tokens.shape();
    if s.len() != 3 {
        return Err(Error::Usage(format!("expected [B, N, d] tokens, got {s:?}")));
    }
    tokens.narrow(1, 0, 1)?.reshape(&[s[0], s[2]])
}

/// `[B, N, d] -> [B, d]`, mean over the patch tokens (CLS excluded).
pub fn mean_patch_of(tokens: &Tensor) -> Result<Tensor> {
    let s = tokens.shape();
    if s.len() != 3 || s[1] < 2 {
        return Err(Error::Usage(format!("expected [B, N, d] tokens with patches, got {s:?}")));
    }
    tokens.narrow(1, 1, s[1] - 1)?.mean_axis(1)
}
