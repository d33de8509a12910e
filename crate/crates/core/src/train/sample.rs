use rand::Rng;
use rand_distr::StandardNormal;

use crate::image::Image;
use crate::layout::{layout_interleaved, Vocabulary};
use crate::mask::compile_mask;
use crate::model::{
    forward, unpatchify, vae_stub_decode, ForwardOptions, GenInput, Latent, ModelInput, ModelParams, VitStub,
};
use crate::script::Script;
use crate::tensor::{Tape, Tensor};

use super::TrainError;

/// Euler integration of `dx/dt = v(x, t)` from `t = 0` to `t = 1` in
/// `steps` equal steps.
pub fn sample_ode<E>(
    x0: Vec<f64>,
    steps: usize,
    mut velocity: impl FnMut(&[f64], f64) -> Result<Vec<f64>, E>,
) -> Result<Vec<f64>, E> {
    assert!(steps >= 1, "at least one Euler step");
    let dt = 1.0 / steps as f64;
    let mut x = x0;
    for k in 0..steps {
        let v = velocity(&x, k as f64 * dt)?;
        for (xi, vi) in x.iter_mut().zip(v) {
            *xi += dt * vi;
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedKeyframe {
    /// Patched latent tokens `[vae_tokens, patch_dim]`.
    pub tokens: Tensor,
    pub latent: Latent,
    pub image: Image,
}

/// Samples the keyframe of `gen_shot` conditioned on the script and the
/// keyframes of earlier shots.
#[allow(clippy::too_many_arguments)]
pub fn generate_keyframe<R: Rng + ?Sized>(
    model: &ModelParams,
    vocab: &Vocabulary,
    vit: &VitStub,
    script: &Script,
    frames: &[Image],
    gen_shot: u32,
    steps: usize,
    id_prompting: bool,
    rng: &mut R,
) -> Result<GeneratedKeyframe, TrainError> {
    let cfg = &model.config;
    let layout = layout_interleaved(script, frames, vocab, gen_shot, &cfg.layout_options(id_prompting))?;
    let mask = compile_mask(&layout)?;
    let rows = layout.gen_split().ok_or(TrainError::MissingVelocityTargets)?.len;
    let pd = cfg.patch_dim();
    let mut input = ModelInput::with_frames(&layout, &mask, frames, cfg, vit, None)?;
    let x0: Vec<f64> = (0..rows * pd).map(|_| rng.sample(StandardNormal)).collect();
    let x1 = sample_ode(x0, steps, |x, t| -> Result<Vec<f64>, TrainError> {
        input.gen = Some(GenInput { x_t: Tensor::matrix(rows, pd, x.to_vec())?, t });
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, |_| false);
        let out = forward(&mut tape, model, &vars, &input, &ForwardOptions::default())?;
        let v = out.velocity.ok_or(TrainError::MissingVelocityTargets)?;
        Ok(tape.value(v).data().to_vec())
    })?;
    let tokens = Tensor::matrix(rows, pd, x1)?;
    let latent = unpatchify(&tokens, cfg.latent_channels, cfg.latent_patch)?;
    let image = vae_stub_decode(&latent)?;
    Ok(GeneratedKeyframe { tokens, latent, image })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_reaches_the_endpoint_for_any_step_count() {
        let x0 = vec![0.3, -1.2, 2.0];
        let x1 = vec![1.0, 0.5, -0.25];
        let v: Vec<f64> = x1.iter().zip(&x0).map(|(b, a)| b - a).collect();
        for steps in [1, 2, 7, 64] {
            let got = sample_ode::<()>(x0.clone(), steps, |_, _| Ok(v.clone())).unwrap();
            for (g, w) in got.iter().zip(&x1) {
                assert!((g - w).abs() < 1e-14, "steps={steps}");
            }
        }
    }

    #[test]
    fn times_are_left_endpoints() {
        let mut seen = Vec::new();
        sample_ode::<()>(vec![0.0], 4, |_, t| {
            seen.push(t);
            Ok(vec![0.0])
        })
        .unwrap();
        assert_eq!(seen, vec![0.0, 0.25, 0.5, 0.75]);
    }
}
