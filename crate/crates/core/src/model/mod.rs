//! Two-expert Mixture-of-Transformers.
//!
//! Every token takes its projections, norms and feed-forward weights from
//! one expert: TEXT, ID_PROMPT and VIT tokens from the understanding
//! expert, VAE tokens from the generation expert. The experts meet only in
//! the attention product, which runs over the whole sequence under the
//! compiled mask.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::layout::{LayoutError, LayoutOptions};
use crate::mask::MaskError;
use crate::tensor::{Tape, Tensor, TensorError, Var};

mod check;
mod checkpoint;
mod encoders;
mod forward;

pub use check::check_model_gradients;
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use encoders::{
    patchify, time_features, unpatchify, vae_stub_decode, vae_stub_encode, Latent, VitStub, LATENT_BLOCK,
    LATENT_CHANNELS,
};
pub use forward::{forward, ForwardOptions, ForwardOutput, GenInput, ModelInput};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("bad dimensions: {0}")]
    BadDimensions(String),
    #[error("time {0} is outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("layout has a VAE_GEN split but no noised input and time")]
    MissingTimeInput,
    #[error("no {what} input for shot {shot}")]
    MissingImageInput { what: &'static str, shot: u32 },
    #[error("sequence of {len} positions exceeds {max}")]
    TooLong { len: usize, max: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoTConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub vocab: usize,
    pub max_positions: usize,
    pub image_size: usize,
    pub latent_channels: usize,
    pub latent_downsample: usize,
    pub latent_patch: usize,
    pub vit_patch: usize,
    pub vit_width: usize,
    pub time_width: usize,
    /// Initial attention-logit scale after QK normalization; each of the
    /// query and key gains starts at its square root.
    pub qk_scale: f64,
}

impl Default for MoTConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            width: 32,
            heads: 4,
            ffn_width: 64,
            vocab: 512,
            max_positions: 512,
            image_size: 64,
            latent_channels: LATENT_CHANNELS,
            latent_downsample: LATENT_BLOCK,
            latent_patch: 2,
            vit_patch: 8,
            vit_width: 32,
            time_width: 16,
            qk_scale: 8.0,
        }
    }
}

impl MoTConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::BadConfig(m));
        if self.layers == 0 || self.width == 0 || self.heads == 0 || self.vocab == 0 || self.ffn_width == 0 {
            return bad("layers, width, heads, ffn_width and vocab must be positive".into());
        }
        if self.width % self.heads != 0 {
            return bad(format!("width {} is not divisible by {} heads", self.width, self.heads));
        }
        if self.latent_channels != LATENT_CHANNELS || self.latent_downsample != LATENT_BLOCK {
            return bad(format!(
                "the latent stand-in produces {LATENT_CHANNELS} channels at downsample {LATENT_BLOCK}"
            ));
        }
        let cell = self.latent_downsample * self.latent_patch;
        if self.image_size == 0 || self.image_size % cell != 0 || self.image_size % self.vit_patch != 0 {
            return bad(format!("image size {} must be divisible by {cell} and {}", self.image_size, self.vit_patch));
        }
        if self.time_width < 2 || self.time_width % 2 != 0 {
            return bad("time_width must be even and at least 2".into());
        }
        if self.qk_scale <= 0.0 {
            return bad("qk_scale must be positive".into());
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.width / self.heads
    }

    /// Width of one patched latent token.
    pub fn patch_dim(&self) -> usize {
        self.latent_channels * self.latent_patch * self.latent_patch
    }

    pub fn layout_options(&self, id_prompting: bool) -> LayoutOptions {
        LayoutOptions {
            image_size: self.image_size,
            vit_patch: self.vit_patch,
            latent_downsample: self.latent_downsample,
            latent_patch: self.latent_patch,
            id_prompting,
        }
    }
}

/// Parameter subsets. Every parameter belongs to exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    /// Token and position embeddings and the text head.
    Shared,
    /// Understanding-expert layers, its final norm, and the ViT connector.
    Understanding,
    /// Generation-expert layers, its final norm, latent patch embedding,
    /// time embedding and velocity head.
    Generation,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Shared, Group::Understanding, Group::Generation];

    pub fn of(name: &str) -> Option<Group> {
        match name.split('.').next()? {
            "shared" => Some(Group::Shared),
            "und" => Some(Group::Understanding),
            "gen" => Some(Group::Generation),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: Group,
    pub value: Tensor,
}

/// Named model weights, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: MoTConfig,
    pub params: Vec<Param>,
    index: BTreeMap<String, usize>,
}

/// How a fresh parameter is filled.
#[derive(Clone, Copy)]
enum Init {
    Normal(f64),
    Const(f64),
}

/// Parameter names, shapes and initializers for one expert prefix.
fn expert_specs(cfg: &MoTConfig, prefix: &str) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.width;
    let f = cfg.ffn_width;
    let proj = Init::Normal(1.0 / (d as f64).sqrt());
    let out_scale = 1.0 / ((2 * cfg.layers) as f64).sqrt();
    let mut specs = Vec::new();
    for l in 0..cfg.layers {
        let p = |n: &str| format!("{prefix}.l{l}.{n}");
        specs.push((p("attn_norm"), vec![d], Init::Const(1.0)));
        specs.push((p("wq"), vec![d, d], proj));
        specs.push((p("wk"), vec![d, d], proj));
        specs.push((p("wv"), vec![d, d], proj));
        specs.push((p("q_gain"), vec![d], Init::Const(cfg.qk_scale.sqrt())));
        specs.push((p("k_gain"), vec![d], Init::Const(cfg.qk_scale.sqrt())));
        specs.push((p("wo"), vec![d, d], Init::Normal(out_scale / (d as f64).sqrt())));
        specs.push((p("ffn_norm"), vec![d], Init::Const(1.0)));
        specs.push((p("w1"), vec![d, f], proj));
        specs.push((p("b1"), vec![f], Init::Const(0.0)));
        specs.push((p("w2"), vec![f, d], Init::Normal(out_scale / (f as f64).sqrt())));
        specs.push((p("b2"), vec![d], Init::Const(0.0)));
    }
    specs.push((format!("{prefix}.final_norm"), vec![d], Init::Const(1.0)));
    specs
}

fn all_specs(cfg: &MoTConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.width;
    let opts = cfg.layout_options(true);
    let mut specs = vec![
        ("shared.token_embed".to_string(), vec![cfg.vocab, d], Init::Normal(1.0)),
        ("shared.pos_embed".to_string(), vec![cfg.max_positions, d], Init::Normal(0.5)),
        ("shared.text_head".to_string(), vec![d, cfg.vocab], Init::Normal(1.0 / (d as f64).sqrt())),
    ];
    specs.extend(expert_specs(cfg, "und"));
    let vw = cfg.vit_width;
    specs.extend([
        ("und.connector.w1".to_string(), vec![vw, d], Init::Normal(1.0 / (vw as f64).sqrt())),
        ("und.connector.b1".to_string(), vec![d], Init::Const(0.0)),
        ("und.connector.w2".to_string(), vec![d, d], Init::Normal(1.0 / (d as f64).sqrt())),
        ("und.connector.b2".to_string(), vec![d], Init::Const(0.0)),
        // Absolute positions do not say where a patch sits once text lengths
        // vary, so image tokens also get a position within their image.
        ("und.vit_pos".to_string(), vec![opts.vit_tokens(), d], Init::Normal(0.5)),
    ]);
    specs.extend(expert_specs(cfg, "gen"));
    let pd = cfg.patch_dim();
    specs.extend([
        ("gen.patch_embed.w".to_string(), vec![pd, d], Init::Normal(1.0 / (pd as f64).sqrt())),
        ("gen.patch_embed.b".to_string(), vec![d], Init::Const(0.0)),
        ("gen.patch_pos".to_string(), vec![opts.vae_tokens(), d], Init::Normal(0.5)),
        ("gen.time_embed.w".to_string(), vec![cfg.time_width, d], Init::Normal(1.0 / (cfg.time_width as f64).sqrt())),
        ("gen.velocity_head.w".to_string(), vec![d, pd], Init::Normal(1.0 / (d as f64).sqrt())),
        ("gen.velocity_head.b".to_string(), vec![pd], Init::Const(0.0)),
    ]);
    specs
}

/// Sub-seed stream per group, so the experts draw independently.
fn group_stream(g: Group) -> u64 {
    match g {
        Group::Shared => 0,
        Group::Understanding => 1,
        Group::Generation => 2,
    }
}

/// Scaled-normal initialization, deterministic per seed.
pub fn init_model(cfg: &MoTConfig, seed: u64) -> Result<ModelParams, ModelError> {
    cfg.validate()?;
    let mut rngs: BTreeMap<Group, ChaCha8Rng> = Group::ALL
        .iter()
        .map(|&g| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(group_stream(g));
            (g, rng)
        })
        .collect();
    let mut params = Vec::new();
    for (name, shape, init) in all_specs(cfg) {
        let group = Group::of(&name).expect("spec names carry a group prefix");
        let count: usize = shape.iter().product();
        let data = match init {
            Init::Const(c) => vec![c; count],
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("positive std");
                let rng = rngs.get_mut(&group).expect("every group has a stream");
                (0..count).map(|_| dist.sample(rng)).collect()
            }
        };
        params.push(Param { name, group, value: Tensor::new(shape, data).expect("spec shapes agree") });
    }
    Ok(ModelParams::from_params(cfg.clone(), params))
}

impl ModelParams {
    pub fn from_params(config: MoTConfig, params: Vec<Param>) -> Self {
        let index = params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        Self { config, params, index }
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn group_count(&self, g: Group) -> usize {
        self.params.iter().filter(|p| p.group == g).map(|p| p.value.len()).sum()
    }

    /// Copies of all values in `g`, for bitwise before/after comparisons.
    pub fn snapshot(&self, g: Group) -> Vec<Vec<f64>> {
        self.params.iter().filter(|p| p.group == g).map(|p| p.value.data().to_vec()).collect()
    }

    /// Checks names, groups and shapes against a fresh model of the same
    /// config.
    pub fn check_shapes(&self) -> Result<(), ModelError> {
        let specs = all_specs(&self.config);
        if specs.len() != self.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, found {}",
                specs.len(),
                self.params.len()
            )));
        }
        for ((name, shape, _), p) in specs.iter().zip(&self.params) {
            if *name != p.name || shape.as_slice() != p.value.shape() || Group::of(name) != Some(p.group) {
                return Err(ModelError::Checkpoint(format!("parameter {} does not match {name} {shape:?}", p.name)));
            }
        }
        Ok(())
    }

    /// Puts every parameter on `tape`; those whose group passes `trainable`
    /// receive gradients.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(Group) -> bool) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.value.clone(), trainable(p.group))).collect()
    }
}
