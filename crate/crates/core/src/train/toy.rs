//! Two-dimensional flow-matching check: standard normal noise to a ring of
//! eight Gaussians, with a small MLP velocity field trained on the tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::model::time_features;
use crate::tensor::{Tape, Tensor, TensorError, Var};

use super::sample::sample_ode;
use super::{adam_step, AdamConfig, AdamState, GradRoute};
use crate::model::{Group, MoTConfig, ModelParams, Param};

pub const RING_MODES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct RingConfig {
    pub radius: f64,
    pub mode_std: f64,
}

impl Default for RingConfig {
    fn default() -> Self {
        Self { radius: 2.0, mode_std: 0.1 }
    }
}

impl RingConfig {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<[f64; 2]> {
        let noise = Normal::new(0.0, self.mode_std).expect("positive std");
        (0..n)
            .map(|_| {
                let k = rng.gen_range(0..RING_MODES) as f64;
                let a = k * std::f64::consts::TAU / RING_MODES as f64;
                [self.radius * a.cos() + noise.sample(rng), self.radius * a.sin() + noise.sample(rng)]
            })
            .collect()
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<[f64; 2]> {
    (0..n).map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)]).collect()
}

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn mean_pair_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let mut total = 0.0;
    for x in a {
        for y in b {
            total += dist(x, y);
        }
    }
    total / (a.len() * b.len()) as f64
}

/// V-statistic energy distance `2 E|X - Y| - E|X - X'| - E|Y - Y'|`.
pub fn energy_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    2.0 * mean_pair_distance(a, b) - mean_pair_distance(a, a) - mean_pair_distance(b, b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub ring: RingConfig,
    pub hidden: usize,
    pub time_width: usize,
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            ring: RingConfig::default(),
            hidden: 64,
            time_width: 8,
            steps: 3000,
            batch: 256,
            learning_rate: 3e-3,
            seed: 0,
        }
    }
}

/// Velocity MLP `[x, t, features(t)] -> hidden -> hidden -> 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyField {
    pub weights: Vec<Tensor>,
    pub time_width: usize,
}

const LAYER_NAMES: [&str; 6] = ["w1", "b1", "w2", "b2", "w3", "b3"];

impl ToyField {
    pub fn new(hidden: usize, time_width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = 3 + time_width;
        let mut normal = |rows: usize, cols: usize| {
            let std = 1.0 / (rows as f64).sqrt();
            let data = (0..rows * cols).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
            Tensor::matrix(rows, cols, data).expect("sizes agree")
        };
        let weights = vec![
            normal(input, hidden),
            Tensor::vector(vec![0.0; hidden]),
            normal(hidden, hidden),
            Tensor::vector(vec![0.0; hidden]),
            normal(hidden, 2),
            Tensor::vector(vec![0.0; 2]),
        ];
        Self { weights, time_width }
    }

    fn features(&self, xs: &[[f64; 2]], ts: &[f64]) -> Tensor {
        let width = 3 + self.time_width;
        let mut data = Vec::with_capacity(xs.len() * width);
        for (x, &t) in xs.iter().zip(ts) {
            data.extend_from_slice(x);
            data.push(t);
            data.extend(time_features(t, self.time_width).expect("t in [0, 1]"));
        }
        Tensor::matrix(xs.len(), width, data).expect("sizes agree")
    }

    fn apply(&self, tape: &mut Tape, w: &[Var], input: Var) -> Result<Var, TensorError> {
        let mut h = input;
        for layer in 0..3 {
            h = tape.matmul(h, w[2 * layer])?;
            h = tape.add_row(h, w[2 * layer + 1])?;
            if layer < 2 {
                h = tape.gelu(h);
            }
        }
        Ok(h)
    }

    /// Velocities at points `xs` with per-point times `ts`.
    pub fn velocity(&self, xs: &[[f64; 2]], ts: &[f64]) -> Vec<[f64; 2]> {
        let mut tape = Tape::new();
        let w: Vec<Var> = self.weights.iter().map(|t| tape.constant(t.clone())).collect();
        let input = tape.constant(self.features(xs, ts));
        let out = self.apply(&mut tape, &w, input).expect("shapes fixed at construction");
        tape.value(out).data().chunks(2).map(|c| [c[0], c[1]]).collect()
    }

    /// Euler-integrates every point of `x0` with `steps` steps.
    pub fn sample(&self, x0: &[[f64; 2]], steps: usize) -> Vec<[f64; 2]> {
        let flat: Vec<f64> = x0.iter().flatten().copied().collect();
        let out = sample_ode::<()>(flat, steps, |x, t| {
            let pts: Vec<[f64; 2]> = x.chunks(2).map(|c| [c[0], c[1]]).collect();
            Ok(self.velocity(&pts, &vec![t; pts.len()]).into_iter().flatten().collect())
        })
        .expect("infallible field");
        out.chunks(2).map(|c| [c[0], c[1]]).collect()
    }
}

/// Trains a [`ToyField`] on straight noise-to-ring paths; returns it with
/// the per-step loss.
pub fn train_toy(cfg: &ToyConfig) -> (ToyField, Vec<f64>) {
    let mut field = ToyField::new(cfg.hidden, cfg.time_width, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    // Adam runs over a parameter set shaped like model weights, all in one group.
    let as_params = |f: &ToyField| {
        let params = f
            .weights
            .iter()
            .zip(LAYER_NAMES)
            .map(|(t, n)| Param { name: format!("gen.toy.{n}"), group: Group::Generation, value: t.clone() })
            .collect();
        ModelParams::from_params(MoTConfig::default(), params)
    };
    let mut params = as_params(&field);
    let mut adam = AdamState::new(&params);
    let opt = AdamConfig { learning_rate: cfg.learning_rate, ..AdamConfig::default() };
    let route = GradRoute::generation(false);
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let x0 = standard_normal(&mut rng, cfg.batch);
        let x1 = cfg.ring.sample(&mut rng, cfg.batch);
        let ts: Vec<f64> = (0..cfg.batch).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let xt: Vec<[f64; 2]> = (0..cfg.batch)
            .map(|i| {
                let t = ts[i];
                [(1.0 - t) * x0[i][0] + t * x1[i][0], (1.0 - t) * x0[i][1] + t * x1[i][1]]
            })
            .collect();
        let target: Vec<f64> = (0..cfg.batch).flat_map(|i| [x1[i][0] - x0[i][0], x1[i][1] - x0[i][1]]).collect();
        let mut tape = Tape::new();
        let w: Vec<Var> = field.weights.iter().map(|t| tape.leaf(t.clone())).collect();
        let input = tape.constant(field.features(&xt, &ts));
        let pred = field.apply(&mut tape, &w, input).expect("shapes fixed at construction");
        let target = tape.constant(Tensor::matrix(cfg.batch, 2, target).expect("sizes agree"));
        let loss = tape.mse(pred, target).expect("same shape");
        losses.push(tape.value(loss).item());
        tape.backward(loss).expect("scalar loss");
        let grads: Vec<Option<Vec<f64>>> = w.iter().map(|&v| tape.grad(v).map(<[f64]>::to_vec)).collect();
        adam_step(&mut params, &grads, &opt, &mut adam, &route);
        field.weights = params.params.iter().map(|p| p.value.clone()).collect();
    }
    (field, losses)
}

/// Sample quality of a trained field on the ring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingReport {
    /// Energy distance to fresh ring samples after 64 and 8 Euler steps.
    pub energy_64: f64,
    pub energy_8: f64,
    /// RMS distance between 8-step and 64-step endpoints from the same
    /// noise, over the RMS norm of the 64-step endpoints.
    pub relative_8_vs_64: f64,
}

/// Integrates `n` seeded noise points with 8 and 64 steps and compares
/// both against `n` ring samples from the same stream.
pub fn evaluate_ring(field: &ToyField, ring: &RingConfig, n: usize, seed: u64) -> RingReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = standard_normal(&mut rng, n);
    let target = ring.sample(&mut rng, n);
    let s8 = field.sample(&x0, 8);
    let s64 = field.sample(&x0, 64);
    let diff: f64 = s8.iter().zip(&s64).map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sum();
    let norm: f64 = s64.iter().map(|b| b[0] * b[0] + b[1] * b[1]).sum();
    RingReport {
        energy_64: energy_distance(&s64, &target),
        energy_8: energy_distance(&s8, &target),
        relative_8_vs_64: (diff / norm).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_distance_of_a_set_with_itself_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = standard_normal(&mut rng, 100);
        assert!(energy_distance(&a, &a).abs() < 1e-12);
    }

    #[test]
    fn energy_distance_detects_a_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = standard_normal(&mut rng, 300);
        let b = standard_normal(&mut rng, 300);
        let shifted: Vec<[f64; 2]> = b.iter().map(|p| [p[0] + 1.0, p[1]]).collect();
        assert!(energy_distance(&a, &b) < 0.05);
        assert!(energy_distance(&a, &shifted) > 0.3);
    }

    #[test]
    fn ring_samples_sit_on_the_ring() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ring = RingConfig::default();
        let pts = ring.sample(&mut rng, 500);
        let mean_r = pts.iter().map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt()).sum::<f64>() / 500.0;
        assert!((mean_r - ring.radius).abs() < 0.05);
    }

    #[test]
    fn short_training_reduces_loss() {
        let cfg = ToyConfig { steps: 150, batch: 64, hidden: 32, ..ToyConfig::default() };
        let (_, losses) = train_toy(&cfg);
        let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = losses[losses.len() - 10..].iter().sum::<f64>() / 10.0;
        assert!(tail < head, "{head} -> {tail}");
    }
}
