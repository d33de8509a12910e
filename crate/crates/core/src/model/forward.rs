use std::collections::BTreeMap;

use crate::layout::{Role, SequenceLayout};
use crate::mask::AttentionMask;
use crate::tensor::{Tape, Tensor, Var};

use super::{patchify, time_features, vae_stub_encode, MoTConfig, ModelError, ModelParams, VitStub};
use crate::image::Image;

const NORM_EPS: f64 = 1e-6;

/// Noised latent tokens for the VAE_GEN split and their time.
#[derive(Debug, Clone, PartialEq)]
pub struct GenInput {
    /// `[vae_tokens, patch_dim]`.
    pub x_t: Tensor,
    pub t: f64,
}

/// Everything a forward pass reads besides the weights.
#[derive(Debug, Clone)]
pub struct ModelInput<'a> {
    pub layout: &'a SequenceLayout,
    pub mask: &'a AttentionMask,
    /// Frozen ViT features `[vit_tokens, vit_width]` per shot with a VIT split.
    pub vit: BTreeMap<u32, Tensor>,
    /// Clean patched latents `[vae_tokens, patch_dim]` per shot with a
    /// VAE_COND split.
    pub vae_cond: BTreeMap<u32, Tensor>,
    pub gen: Option<GenInput>,
}

impl<'a> ModelInput<'a> {
    /// Input for a sequence without vision splits.
    pub fn text(layout: &'a SequenceLayout, mask: &'a AttentionMask) -> Self {
        Self { layout, mask, vit: BTreeMap::new(), vae_cond: BTreeMap::new(), gen: None }
    }

    /// Encodes `frames[s - 1]` through the frozen stand-ins for every shot
    /// `s` with a VIT or VAE_COND split.
    pub fn with_frames(
        layout: &'a SequenceLayout,
        mask: &'a AttentionMask,
        frames: &[Image],
        cfg: &MoTConfig,
        vit: &VitStub,
        gen: Option<GenInput>,
    ) -> Result<Self, ModelError> {
        let mut input = Self { gen, ..Self::text(layout, mask) };
        for split in &layout.splits {
            if !matches!(split.role, Role::Vit | Role::VaeCond) {
                continue;
            }
            let img = frames
                .get(split.shot as usize - 1)
                .ok_or(ModelError::MissingImageInput { what: split.role.name(), shot: split.shot })?;
            if split.role == Role::Vit {
                input.vit.insert(split.shot, vit.encode(img)?);
            } else {
                input.vae_cond.insert(split.shot, patchify(&vae_stub_encode(img)?, cfg.latent_patch)?);
            }
        }
        Ok(input)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForwardOptions {
    /// Sequence positions whose next-token logits are produced, in order.
    pub logits_at: Vec<usize>,
    /// Cut every understanding-expert row out of the graph at each layer, so
    /// generation losses send nothing back into that expert or the shared
    /// embeddings through it.
    pub detach_understanding: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `[logits_at.len(), vocab]`, absent when no positions were requested.
    pub logits: Option<Var>,
    /// `[vae_tokens, patch_dim]` velocity at the VAE_GEN rows.
    pub velocity: Option<Var>,
    /// Final-normed hidden states `[n, width]` in sequence order.
    pub hidden: Var,
}

/// Rows handled by one expert: global positions and their local index.
struct Rows {
    pos: Vec<usize>,
    local: Vec<usize>,
}

impl Rows {
    fn split(layout: &SequenceLayout, gen: bool) -> Self {
        let pos: Vec<usize> = (0..layout.len()).filter(|&p| layout.roles[p].is_vae() == gen).collect();
        let mut local = vec![usize::MAX; layout.len()];
        for (i, &p) in pos.iter().enumerate() {
            local[p] = i;
        }
        Self { pos, local }
    }

    fn locals(&self, positions: impl IntoIterator<Item = usize>) -> Vec<usize> {
        positions.into_iter().map(|p| self.local[p]).collect()
    }
}

struct Weights<'m> {
    params: &'m ModelParams,
    vars: &'m [Var],
}

impl Weights<'_> {
    fn get(&self, name: &str) -> Var {
        let i = self.params.index_of(name).unwrap_or_else(|| panic!("model has no parameter {name}"));
        self.vars[i]
    }
}

fn check_rows(what: &str, t: &Tensor, rows: usize, cols: usize) -> Result<(), ModelError> {
    if t.shape() != [rows, cols] {
        return Err(ModelError::BadDimensions(format!("{what}: expected [{rows}, {cols}], got {:?}", t.shape())));
    }
    Ok(())
}

/// `gelu(x W1 + b1) W2 + b2`.
fn mlp(tape: &mut Tape, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var, ModelError> {
    let h = tape.matmul(x, w1)?;
    let h = tape.add_row(h, b1)?;
    let h = tape.gelu(h);
    let h = tape.matmul(h, w2)?;
    Ok(tape.add_row(h, b2)?)
}

/// Adds the within-image position table to the `len` tokens of one image.
fn add_image_pos(tape: &mut Tape, e: Var, table: Var, len: usize) -> Result<Var, ModelError> {
    let rows = tape.value(table).shape()[0];
    if len != rows {
        return Err(ModelError::BadDimensions(format!("image split has {len} tokens, expected {rows}")));
    }
    Ok(tape.add(e, table)?)
}

/// Embeds the rows of one expert in local order.
fn embed_understanding(tape: &mut Tape, w: &Weights, input: &ModelInput, rows: &Rows) -> Result<Var, ModelError> {
    let cfg = &w.params.config;
    let layout = input.layout;
    let base = tape.constant(Tensor::zeros(&[rows.pos.len(), cfg.width]));
    let text_pos: Vec<usize> = rows.pos.iter().copied().filter(|&p| !layout.roles[p].is_vision()).collect();
    let mut h = base;
    if !text_pos.is_empty() {
        let ids: Vec<usize> = text_pos.iter().map(|&p| layout.tokens[p] as usize).collect();
        if let Some(&bad) = ids.iter().find(|&&id| id >= cfg.vocab) {
            return Err(ModelError::BadDimensions(format!("token id {bad} outside vocabulary of {}", cfg.vocab)));
        }
        let e = tape.gather_rows(w.get("shared.token_embed"), &ids)?;
        h = tape.scatter_rows(h, e, &rows.locals(text_pos.iter().copied()))?;
    }
    for split in layout.splits.iter().filter(|s| s.role == Role::Vit) {
        let feat = input.vit.get(&split.shot).ok_or(ModelError::MissingImageInput { what: "ViT", shot: split.shot })?;
        check_rows("ViT features", feat, split.len, cfg.vit_width)?;
        let x = tape.constant(feat.clone());
        let e = mlp(
            tape,
            x,
            w.get("und.connector.w1"),
            w.get("und.connector.b1"),
            w.get("und.connector.w2"),
            w.get("und.connector.b2"),
        )?;
        let e = add_image_pos(tape, e, w.get("und.vit_pos"), split.len)?;
        h = tape.scatter_rows(h, e, &rows.locals(split.start..split.end()))?;
    }
    Ok(h)
}

fn embed_generation(tape: &mut Tape, w: &Weights, input: &ModelInput, rows: &Rows) -> Result<Var, ModelError> {
    let cfg = &w.params.config;
    let pd = cfg.patch_dim();
    let mut h = tape.constant(Tensor::zeros(&[rows.pos.len(), cfg.width]));
    let (pw, pb) = (w.get("gen.patch_embed.w"), w.get("gen.patch_embed.b"));
    for split in input.layout.splits.iter().filter(|s| s.role.is_vae()) {
        let e = if split.role == Role::VaeGen {
            let gen = input.gen.as_ref().ok_or(ModelError::MissingTimeInput)?;
            check_rows("noised latent", &gen.x_t, split.len, pd)?;
            let tf = time_features(gen.t, cfg.time_width)?;
            let tf = tape.constant(Tensor::matrix(1, cfg.time_width, tf).expect("width matches"));
            let temb = tape.matmul(tf, w.get("gen.time_embed.w"))?;
            let temb = tape.reshape(temb, &[cfg.width])?;
            let x = tape.constant(gen.x_t.clone());
            let e = tape.matmul(x, pw)?;
            let e = tape.add_row(e, pb)?;
            tape.add_row(e, temb)?
        } else {
            let lat = input
                .vae_cond
                .get(&split.shot)
                .ok_or(ModelError::MissingImageInput { what: "VAE", shot: split.shot })?;
            check_rows("conditioning latent", lat, split.len, pd)?;
            let x = tape.constant(lat.clone());
            let e = tape.matmul(x, pw)?;
            tape.add_row(e, pb)?
        };
        let e = add_image_pos(tape, e, w.get("gen.patch_pos"), split.len)?;
        h = tape.scatter_rows(h, e, &rows.locals(split.start..split.end()))?;
    }
    Ok(h)
}

/// Pre-norm projections of one expert, QK-normalized per head.
fn project_qkv(tape: &mut Tape, w: &Weights, prefix: &str, h: Var, rows: usize) -> Result<[Var; 3], ModelError> {
    let cfg = &w.params.config;
    let (d, heads, dh) = (cfg.width, cfg.heads, cfg.head_width());
    let x = tape.rmsnorm(h, w.get(&format!("{prefix}.attn_norm")), NORM_EPS)?;
    let mut out = [x; 3];
    for (slot, name) in out.iter_mut().zip(["wq", "wk", "wv"]) {
        *slot = tape.matmul(x, w.get(&format!("{prefix}.{name}")))?;
    }
    for (slot, gain) in out.iter_mut().take(2).zip(["q_gain", "k_gain"]) {
        let per_head = tape.reshape(*slot, &[rows * heads, dh])?;
        let per_head = tape.l2_normalize(per_head);
        let back = tape.reshape(per_head, &[rows, d])?;
        *slot = tape.mul_row(back, w.get(&format!("{prefix}.{gain}")))?;
    }
    Ok(out)
}

/// Residual output projection and feed-forward block of one expert.
fn finish_layer(tape: &mut Tape, w: &Weights, prefix: &str, h: Var, attn: Var) -> Result<Var, ModelError> {
    let o = tape.matmul(attn, w.get(&format!("{prefix}.wo")))?;
    let h = tape.add(h, o)?;
    let x = tape.rmsnorm(h, w.get(&format!("{prefix}.ffn_norm")), NORM_EPS)?;
    let f = mlp(
        tape,
        x,
        w.get(&format!("{prefix}.w1")),
        w.get(&format!("{prefix}.b1")),
        w.get(&format!("{prefix}.w2")),
        w.get(&format!("{prefix}.b2")),
    )?;
    Ok(tape.add(h, f)?)
}

/// Runs the model on `tape` with weights `vars`, bound in
/// [`ModelParams::params`] order (see [`ModelParams::bind`]).
pub fn forward(
    tape: &mut Tape,
    params: &ModelParams,
    vars: &[Var],
    input: &ModelInput,
    opts: &ForwardOptions,
) -> Result<ForwardOutput, ModelError> {
    let cfg = &params.config;
    let layout = input.layout;
    let n = layout.len();
    if vars.len() != params.params.len() {
        return Err(ModelError::BadDimensions(format!("{} vars for {} parameters", vars.len(), params.params.len())));
    }
    if n == 0 {
        return Err(ModelError::BadDimensions("empty sequence".into()));
    }
    if n > cfg.max_positions {
        return Err(ModelError::TooLong { len: n, max: cfg.max_positions });
    }
    if input.mask.n() != n {
        return Err(ModelError::BadDimensions(format!("mask is {0}x{0} for {n} positions", input.mask.n())));
    }
    let w = Weights { params, vars };
    let und = Rows::split(layout, false);
    let gen = Rows::split(layout, true);
    let experts: [(&str, &Rows); 2] = [("und", &und), ("gen", &gen)];

    let mut hs: [Option<Var>; 2] = [None, None];
    if !und.pos.is_empty() {
        let e = embed_understanding(tape, &w, input, &und)?;
        let p = tape.gather_rows(w.get("shared.pos_embed"), &und.pos)?;
        hs[0] = Some(tape.add(e, p)?);
    }
    if !gen.pos.is_empty() {
        let e = embed_generation(tape, &w, input, &gen)?;
        let p = tape.gather_rows(w.get("shared.pos_embed"), &gen.pos)?;
        hs[1] = Some(tape.add(e, p)?);
    }

    let (d, dh) = (cfg.width, cfg.head_width());
    for l in 0..cfg.layers {
        if opts.detach_understanding {
            hs[0] = hs[0].map(|h| tape.stop_grad(h));
        }
        let mut merged: [Var; 3] = {
            let z = tape.constant(Tensor::zeros(&[n, d]));
            [z; 3]
        };
        for (e, (name, rows)) in experts.iter().enumerate() {
            let Some(h) = hs[e] else { continue };
            let qkv = project_qkv(tape, &w, &format!("{name}.l{l}"), h, rows.pos.len())?;
            for (m, part) in merged.iter_mut().zip(qkv) {
                *m = tape.scatter_rows(*m, part, &rows.pos)?;
            }
        }
        let [q, k, v] = merged;
        let mut heads = Vec::with_capacity(cfg.heads);
        for head in 0..cfg.heads {
            let qh = tape.col_slice(q, head * dh, dh)?;
            let kh = tape.col_slice(k, head * dh, dh)?;
            let vh = tape.col_slice(v, head * dh, dh)?;
            let scores = tape.matmul_t(qh, kh)?;
            let probs = tape.masked_softmax(scores, input.mask.bits())?;
            heads.push(tape.matmul(probs, vh)?);
        }
        let attn = tape.concat_cols(&heads)?;
        for (e, (name, rows)) in experts.iter().enumerate() {
            let Some(h) = hs[e] else { continue };
            let a = tape.gather_rows(attn, &rows.pos)?;
            hs[e] = Some(finish_layer(tape, &w, &format!("{name}.l{l}"), h, a)?);
        }
    }

    let mut hidden = tape.constant(Tensor::zeros(&[n, d]));
    let mut finals: [Option<Var>; 2] = [None, None];
    for (e, (name, rows)) in experts.iter().enumerate() {
        let Some(h) = hs[e] else { continue };
        let f = tape.rmsnorm(h, w.get(&format!("{name}.final_norm")), NORM_EPS)?;
        hidden = tape.scatter_rows(hidden, f, &rows.pos)?;
        finals[e] = Some(f);
    }

    let logits = if opts.logits_at.is_empty() {
        None
    } else {
        for &p in &opts.logits_at {
            if p >= n || layout.roles[p].is_vae() {
                return Err(ModelError::BadDimensions(format!("no text logits at position {p}")));
            }
        }
        let f = finals[0].expect("a requested text position implies understanding rows");
        let rows = tape.gather_rows(f, &und.locals(opts.logits_at.iter().copied()))?;
        Some(tape.matmul(rows, w.get("shared.text_head"))?)
    };

    let velocity = match layout.gen_split() {
        Some(split) => {
            let f = finals[1].expect("a VAE_GEN split implies generation rows");
            let rows = tape.gather_rows(f, &gen.locals(split.start..split.end()))?;
            let v = tape.matmul(rows, w.get("gen.velocity_head.w"))?;
            Some(tape.add_row(v, w.get("gen.velocity_head.b"))?)
        }
        None => None,
    };

    Ok(ForwardOutput { logits, velocity, hidden })
}
