use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::CONTINUATION_PROMPT;
use crate::image::Image;
use crate::layout::{tokenize, SequenceLayout, Vocabulary};
use crate::mask::compile_mask;
use crate::model::{forward, ForwardOptions, Latent, ModelInput, ModelParams, VitStub};
use crate::script::{parse_script, render_user_line, MarkerKind, ModeMarker, Script, UserPrompt};
use crate::tensor::Tape;

use super::sample::generate_keyframe;
use super::TrainError;

/// What the decoded text continues from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GenerationMode {
    /// A whole script from the user prompt alone.
    Draft,
    /// New shots after the prior script, steered by a new prompt.
    Extension { prompt: String },
    /// Next shots after the prior script under the fixed system prompt.
    Continuation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig {
    pub max_new_tokens: usize,
    pub ode_steps: usize,
    /// `None` decodes greedily.
    pub temperature: Option<f64>,
    pub seed: u64,
    pub id_prompting: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { max_new_tokens: 1024, ode_steps: 32, temperature: None, seed: 0, id_prompting: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOutput {
    /// Decoded text, without BOS and EOS.
    pub text: String,
    pub script: Script,
    /// One keyframe per shot of `script`, in shot order.
    pub keyframes: Vec<Image>,
    /// Latents of the keyframes generated in this call, by shot index.
    pub latents: Vec<(u32, Latent)>,
}

fn without_keyframe_refs(s: &Script) -> Script {
    let mut s = s.clone();
    for shot in &mut s.shots {
        shot.keyframe_ref = None;
    }
    s
}

/// BOS followed by the tokens the decoder continues from.
fn prefix(
    vocab: &Vocabulary,
    prompt: &UserPrompt,
    prior: Option<&Script>,
    mode: &GenerationMode,
) -> Result<Vec<u32>, TrainError> {
    let mut ids = vec![vocab.bos()];
    let marked = |kind: MarkerKind, text: &str| -> Result<Vec<u32>, TrainError> {
        let base =
            prior.ok_or_else(|| TrainError::BadConfig("extension and continuation need a prior script".into()))?;
        let mut s = without_keyframe_refs(&base.without_marker());
        s.user = prompt.clone();
        let before_shot = s.shots.iter().map(|sh| sh.index).max().unwrap_or(0) + 1;
        s.mode_marker = Some(ModeMarker { kind, before_shot, prompt: text.to_string() });
        Ok(tokenize(&s, vocab)?.ids)
    };
    match mode {
        GenerationMode::Draft => ids.extend(vocab.tokenize_text(&render_user_line(prompt))?),
        GenerationMode::Extension { prompt } => ids.extend(marked(MarkerKind::Extension, prompt)?),
        GenerationMode::Continuation => ids.extend(marked(MarkerKind::Continuation, CONTINUATION_PROMPT)?),
    }
    Ok(ids)
}

/// Index of the largest value; the first on ties.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn decode(
    model: &ModelParams,
    vocab: &Vocabulary,
    mut ids: Vec<u32>,
    cfg: &InferenceConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<u32>, TrainError> {
    for _ in 0..cfg.max_new_tokens {
        if ids.len() >= model.config.max_positions {
            break;
        }
        let layout = SequenceLayout::text(&ids);
        let mask = compile_mask(&layout)?;
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, |_| false);
        let opts = ForwardOptions { logits_at: vec![ids.len() - 1], detach_understanding: false };
        let out = forward(&mut tape, model, &vars, &ModelInput::text(&layout, &mask), &opts)?;
        let logits = tape.value(out.logits.expect("one position requested")).data();
        let next = match cfg.temperature {
            Some(temp) if temp > 0.0 => {
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = logits.iter().map(|l| ((l - max) / temp).exp()).collect();
                WeightedIndex::new(&weights).expect("finite positive weights").sample(rng)
            }
            _ => argmax(logits),
        } as u32;
        if next == vocab.eos() {
            break;
        }
        ids.push(next);
    }
    Ok(ids)
}

/// Decodes a script from the prompt, parses it, then generates the
/// keyframe of every shot in order, each conditioned on the script and on
/// all earlier keyframes. Prior keyframes are kept for the shots of a
/// prior script.
pub fn infer_script_pipeline(
    model: &ModelParams,
    vocab: &Vocabulary,
    prompt: &UserPrompt,
    prior: Option<(&Script, &[Image])>,
    mode: &GenerationMode,
    cfg: &InferenceConfig,
) -> Result<InferenceOutput, TrainError> {
    if cfg.ode_steps == 0 {
        return Err(TrainError::BadConfig("ode_steps must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = prefix(vocab, prompt, prior.map(|p| p.0), mode)?;
    let ids = decode(model, vocab, start, cfg, &mut rng)?;
    let text = vocab.detokenize(&ids[1..]).map_err(|e| TrainError::MalformedGeneration(e.to_string()))?;
    let script = parse_script(&text).map_err(|diags| {
        TrainError::MalformedGeneration(diags.iter().map(|d| d.render("generated")).collect::<Vec<_>>().join("; "))
    })?;
    let prior_shots = match (mode, prior) {
        (GenerationMode::Draft, _) | (_, None) => 0,
        (_, Some((s, _))) => s.shots.len(),
    };
    if mode != &GenerationMode::Draft && script.shots.len() <= prior_shots {
        return Err(TrainError::MalformedGeneration("no new shot was generated".into()));
    }
    let mut keyframes: Vec<Image> = match (mode, prior) {
        (GenerationMode::Draft, _) | (_, None) => Vec::new(),
        (_, Some((_, frames))) => frames.iter().take(prior_shots).cloned().collect(),
    };
    let vit = VitStub::for_config(&model.config);
    let mut latents = Vec::new();
    for shot in keyframes.len() as u32 + 1..=script.shots.len() as u32 {
        let k = generate_keyframe(
            model,
            vocab,
            &vit,
            &script,
            &keyframes,
            shot,
            cfg.ode_steps,
            cfg.id_prompting,
            &mut rng,
        )?;
        latents.push((shot, k.latent));
        keyframes.push(k.image);
    }
    Ok(InferenceOutput { text, script, keyframes, latents })
}
