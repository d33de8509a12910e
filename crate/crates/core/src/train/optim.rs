use crate::model::ModelParams;

use super::GradRoute;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moments and step counts per parameter. A parameter's count advances
/// only on steps that update it, so bias correction stays per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: Vec<u32>,
}

impl AdamState {
    pub fn new(model: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = model.params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self { m: zeros.clone(), v: zeros, steps: vec![0; model.params.len()] }
    }

    pub fn steps(&self, param: usize) -> u32 {
        self.steps[param]
    }
}

/// One Adam update of every parameter in the route's update set.
/// `grads[i]` is the gradient of parameter `i`; `None` counts as zero.
/// Parameters outside the update set are not touched.
pub fn adam_step(
    model: &mut ModelParams,
    grads: &[Option<Vec<f64>>],
    cfg: &AdamConfig,
    state: &mut AdamState,
    route: &GradRoute,
) {
    assert_eq!(grads.len(), model.params.len(), "one gradient slot per parameter");
    for (i, p) in model.params.iter_mut().enumerate() {
        if !route.updates(p.group) {
            continue;
        }
        state.steps[i] += 1;
        let t = state.steps[i] as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let g = grads[i].as_deref();
        for (j, w) in p.value.data_mut().iter_mut().enumerate() {
            let gj = g.map_or(0.0, |g| g[j]);
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            *w -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, Group, MoTConfig};

    fn model() -> ModelParams {
        let cfg = MoTConfig {
            layers: 1,
            width: 4,
            heads: 1,
            ffn_width: 4,
            vocab: 6,
            max_positions: 8,
            image_size: 16,
            vit_width: 2,
            time_width: 2,
            ..Default::default()
        };
        init_model(&cfg, 1).unwrap()
    }

    fn constant_grads(m: &ModelParams, g: f64) -> Vec<Option<Vec<f64>>> {
        m.params.iter().map(|p| Some(vec![g; p.value.len()])).collect()
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut m = model();
        let before = m.clone();
        let mut st = AdamState::new(&m);
        let grads = constant_grads(&m, 0.0);
        adam_step(&mut m, &grads, &AdamConfig::default(), &mut st, &GradRoute::joint());
        assert_eq!(m, before);
    }

    #[test]
    fn first_steps_match_reference_loop() {
        let cfg = AdamConfig { learning_rate: 0.01, ..Default::default() };
        let mut m = model();
        let w0 = m.params[0].value.data()[0];
        let mut st = AdamState::new(&m);
        let gs = [0.5, -2.0, 0.25];
        // Scalar reference of the textbook update.
        let (mut mm, mut vv, mut w) = (0.0f64, 0.0f64, w0);
        for (k, &g) in gs.iter().enumerate() {
            let grads = constant_grads(&m, g);
            adam_step(&mut m, &grads, &cfg, &mut st, &GradRoute::joint());
            mm = 0.9 * mm + 0.1 * g;
            vv = 0.999 * vv + 0.001 * g * g;
            let t = (k + 1) as i32;
            w -= 0.01 * (mm / (1.0 - 0.9f64.powi(t))) / ((vv / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            if k == 0 {
                // From a zero state the first move is -sign(g) * lr up to eps.
                assert!((m.params[0].value.data()[0] - (w0 - 0.01)).abs() < 1e-9);
            }
        }
        assert!((m.params[0].value.data()[0] - w).abs() < 1e-14);
        assert_eq!(st.steps(0), 3);
    }

    #[test]
    fn routed_step_leaves_frozen_groups_bitwise_intact() {
        let mut m = model();
        let before = m.clone();
        let mut st = AdamState::new(&m);
        let route = GradRoute::generation(true);
        let grads = constant_grads(&m, 1.0);
        adam_step(&mut m, &grads, &AdamConfig::default(), &mut st, &route);
        for g in [Group::Shared, Group::Understanding] {
            assert_eq!(m.snapshot(g), before.snapshot(g));
        }
        assert_ne!(m.snapshot(Group::Generation), before.snapshot(Group::Generation));
    }
}
