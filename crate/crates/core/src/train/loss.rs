use rand::Rng;
use rand_distr::StandardNormal;

use crate::image::Image;
use crate::layout::{layout_interleaved, layout_text, Vocabulary};
use crate::mask::compile_mask;
use crate::model::{forward, patchify, vae_stub_encode, ForwardOptions, GenInput, ModelInput, ModelParams, VitStub};
use crate::script::Script;
use crate::tensor::{Tape, Tensor, Var};

use super::TrainError;

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// `logits`.
pub fn ntp_loss(tape: &mut Tape, logits: Var, targets: &[u32]) -> Result<Var, TrainError> {
    if targets.is_empty() {
        return Err(TrainError::EmptyTargets);
    }
    Ok(tape.cross_entropy(logits, targets)?)
}

/// Mean squared error between predicted velocity and `target`.
pub fn rf_loss(tape: &mut Tape, velocity: Var, target: &Tensor) -> Result<Var, TrainError> {
    if target.is_empty() {
        return Err(TrainError::MissingVelocityTargets);
    }
    let t = tape.constant(target.clone());
    Ok(tape.mse(velocity, t)?)
}

/// A point on the straight path from noise `x0` to data `x1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RFExample {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub t: f64,
    /// `(1 - t) x0 + t x1`.
    pub xt: Vec<f64>,
}

impl RFExample {
    pub fn new(x0: Vec<f64>, x1: Vec<f64>, t: f64) -> Self {
        assert_eq!(x0.len(), x1.len(), "noise and data must have the same size");
        let xt = x0.iter().zip(&x1).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        Self { x0, x1, t, xt }
    }

    /// Standard-normal noise and uniform time.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, x1: Vec<f64>) -> Self {
        let x0 = (0..x1.len()).map(|_| rng.sample(StandardNormal)).collect();
        let t = rng.gen_range(0.0..=1.0);
        Self::new(x0, x1, t)
    }

    /// Velocity of the straight path, `x1 - x0`.
    pub fn target(&self) -> Vec<f64> {
        self.x1.iter().zip(&self.x0).map(|(b, a)| b - a).collect()
    }
}

/// Next-token loss of `script` as a text-only sequence.
pub fn text_loss(
    tape: &mut Tape,
    model: &ModelParams,
    vars: &[Var],
    vocab: &Vocabulary,
    script: &Script,
) -> Result<Var, TrainError> {
    let layout = layout_text(script, vocab)?;
    let mask = compile_mask(&layout)?;
    let (positions, ids): (Vec<usize>, Vec<u32>) = layout.text_targets().into_iter().unzip();
    let opts = ForwardOptions { logits_at: positions, detach_understanding: false };
    let out = forward(tape, model, vars, &ModelInput::text(&layout, &mask), &opts)?;
    ntp_loss(tape, out.logits.ok_or(TrainError::EmptyTargets)?, &ids)
}

/// A script with keyframes and the shot whose keyframe is generated.
#[derive(Debug, Clone, Copy)]
pub struct FlowSample<'a> {
    pub script: &'a Script,
    /// `frames[i]` belongs to shot `i + 1`.
    pub frames: &'a [Image],
    pub gen_shot: u32,
}

impl FlowSample<'_> {
    /// Clean patched latent of the generated shot's keyframe.
    pub fn target_latent(&self, model: &ModelParams) -> Result<Tensor, TrainError> {
        let img = self
            .frames
            .get(self.gen_shot as usize - 1)
            .ok_or(crate::layout::LayoutError::MissingKeyframe(self.gen_shot))?;
        Ok(patchify(&vae_stub_encode(img)?, model.config.latent_patch)?)
    }
}

/// Flow-matching loss at `example`, whose `xt` fills the VAE_GEN split of
/// `sample`'s interleaved sequence.
#[allow(clippy::too_many_arguments)]
pub fn flow_loss(
    tape: &mut Tape,
    model: &ModelParams,
    vars: &[Var],
    vocab: &Vocabulary,
    vit: &VitStub,
    sample: &FlowSample,
    example: &RFExample,
    detach_understanding: bool,
    id_prompting: bool,
) -> Result<Var, TrainError> {
    let cfg = &model.config;
    let layout =
        layout_interleaved(sample.script, sample.frames, vocab, sample.gen_shot, &cfg.layout_options(id_prompting))?;
    let mask = compile_mask(&layout)?;
    let rows = layout.gen_split().ok_or(TrainError::MissingVelocityTargets)?.len;
    let pd = cfg.patch_dim();
    let shape_err = || {
        crate::model::ModelError::BadDimensions(format!(
            "flow example of {} values for [{rows}, {pd}]",
            example.xt.len()
        ))
    };
    let x_t = Tensor::matrix(rows, pd, example.xt.clone()).map_err(|_| shape_err())?;
    let target = Tensor::matrix(rows, pd, example.target()).map_err(|_| shape_err())?;
    let input = ModelInput::with_frames(&layout, &mask, sample.frames, cfg, vit, Some(GenInput { x_t, t: example.t }))?;
    let opts = ForwardOptions { logits_at: Vec::new(), detach_understanding };
    let out = forward(tape, model, vars, &input, &opts)?;
    rf_loss(tape, out.velocity.ok_or(TrainError::MissingVelocityTargets)?, &target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn value(logits: Tensor, targets: &[u32]) -> f64 {
        let mut tape = Tape::new();
        let l = tape.constant(logits);
        let loss = ntp_loss(&mut tape, l, targets).unwrap();
        tape.value(loss).item()
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let v = 17;
        let got = value(Tensor::zeros(&[5, v]), &[0, 3, 16, 8, 8]);
        assert!((got - (v as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_give_near_zero() {
        let logits = Tensor::from_fn(3, 6, |r, c| if c == r { 40.0 } else { 0.0 });
        assert!(value(logits, &[0, 1, 2]) < 1e-6);
    }

    #[test]
    fn matches_scalar_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (r, c) = (7, 11);
        let mut logits = Tensor::zeros(&[r, c]);
        for v in logits.data_mut() {
            *v = rng.gen_range(-6.0..6.0);
        }
        let targets: Vec<u32> = (0..r).map(|_| rng.gen_range(0..c as u32)).collect();
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = logits.row(i);
            let mut z = 0.0;
            for &x in row {
                z += x.exp();
            }
            total -= (row[t as usize].exp() / z).ln();
        }
        let reference = total / r as f64;
        assert!((value(logits, &targets) - reference).abs() < 1e-12);
    }

    #[test]
    fn empty_targets_are_an_error() {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::zeros(&[0, 3]));
        assert!(matches!(ntp_loss(&mut tape, l, &[]), Err(TrainError::EmptyTargets)));
    }

    fn rf_value(pred: Vec<f64>, target: Vec<f64>) -> f64 {
        let mut tape = Tape::new();
        let n = pred.len();
        let p = tape.constant(Tensor::matrix(1, n, pred).unwrap());
        let loss = rf_loss(&mut tape, p, &Tensor::matrix(1, n, target).unwrap()).unwrap();
        tape.value(loss).item()
    }

    #[test]
    fn rf_loss_cases() {
        let ex = RFExample::new(vec![0.3, -1.0], vec![2.0, 0.5], 0.25);
        assert_eq!(rf_value(ex.target(), ex.target()), 0.0);
        let same = RFExample::new(vec![0.7, 0.1], vec![0.7, 0.1], 0.6);
        assert_eq!(rf_value(vec![0.0, 0.0], same.target()), 0.0);
        let scalar = RFExample::new(vec![0.0], vec![1.0], 0.5);
        assert_eq!(scalar.xt, vec![0.5]);
        assert_eq!(scalar.target(), vec![1.0]);
        for c in [-1.0, 0.0, 0.3, 2.5] {
            assert!((rf_value(vec![c], scalar.target()) - (1.0 - c) * (1.0 - c)).abs() < 1e-15);
        }
    }

    #[test]
    fn sampled_examples_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let x1: Vec<f64> = (0..9).map(|i| i as f64 * 0.1 - 0.4).collect();
            let ex = RFExample::sample(&mut rng, x1.clone());
            assert!((0.0..=1.0).contains(&ex.t));
            for i in 0..9 {
                assert!((ex.xt[i] - ((1.0 - ex.t) * ex.x0[i] + ex.t * ex.x1[i])).abs() < 1e-12);
                assert_eq!(ex.target()[i], ex.x1[i] - ex.x0[i]);
            }
        }
    }
}
