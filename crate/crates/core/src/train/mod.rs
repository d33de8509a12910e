//! Training objectives, optimizer, the two training stages, the Euler
//! sampler and script-to-keyframes inference.

use std::fmt;
use std::io::Write;

use thiserror::Error;

use crate::data::DataError;
use crate::layout::LayoutError;
use crate::mask::MaskError;
use crate::model::{Group, ModelError};
use crate::tensor::TensorError;

mod infer;
mod loss;
mod optim;
mod sample;
mod stage;
pub mod toy;

pub use infer::{infer_script_pipeline, GenerationMode, InferenceConfig, InferenceOutput};
pub use loss::{flow_loss, ntp_loss, rf_loss, text_loss, FlowSample, RFExample};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use sample::{generate_keyframe, sample_ode, GeneratedKeyframe};
pub use stage::{train_stage1, train_stage2, Trainer};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("no next-token targets")]
    EmptyTargets,
    #[error("no VAE_GEN velocity to compare")]
    MissingVelocityTargets,
    #[error("nothing to train on: {0}")]
    EmptyCorpus(String),
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("generated text is not a valid script: {0}")]
    MalformedGeneration(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Weight of the flow loss against next-token loss in stage 1.
    pub flow_weight: f64,
    /// Stage-2 round-robin weights for text, interleaved and image-pair
    /// batches.
    pub stage2_mix: [usize; 3],
    /// Cut understanding rows out of the graph on stage-2 flow steps.
    pub detach: bool,
    pub id_prompting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            steps: 200,
            batch_size: 1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            flow_weight: 1.0,
            stage2_mix: [1, 1, 1],
            detach: true,
            id_prompting: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::BadConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.steps == 0 || self.batch_size == 0 {
            return bad("steps and batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("betas must lie in [0, 1) and eps must be positive");
        }
        if self.flow_weight < 0.0 {
            return bad("flow_weight must be non-negative");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

/// Which parameter subsets a step updates, and whether understanding rows
/// are detached from the backward graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradRoute {
    update: [bool; 3],
    pub detach_understanding: bool,
}

fn slot(g: Group) -> usize {
    match g {
        Group::Shared => 0,
        Group::Understanding => 1,
        Group::Generation => 2,
    }
}

impl GradRoute {
    pub fn new(update: &[Group], detach_understanding: bool) -> Self {
        let mut u = [false; 3];
        for &g in update {
            u[slot(g)] = true;
        }
        Self { update: u, detach_understanding }
    }

    /// Stage 1: everything learns jointly.
    pub fn joint() -> Self {
        Self::new(&Group::ALL, false)
    }

    /// Stage-2 text step: understanding expert plus shared embeddings and head.
    pub fn text() -> Self {
        Self::new(&[Group::Shared, Group::Understanding], false)
    }

    /// Stage-2 flow step: generation expert only.
    pub fn generation(detach: bool) -> Self {
        Self::new(&[Group::Generation], detach)
    }

    pub fn updates(&self, g: Group) -> bool {
        self.update[slot(g)]
    }

    pub fn frozen(&self) -> Vec<Group> {
        Group::ALL.into_iter().filter(|&g| !self.updates(g)).collect()
    }
}

/// Data subset a step drew from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subset {
    Interleaved,
    Text,
    Pairs,
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::Interleaved => "interleaved",
            Subset::Text => "text",
            Subset::Pairs => "pairs",
        })
    }
}

/// One line of the loss trace. Absent losses were not computed that step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss_ntp: Option<f64>,
    pub loss_rf: Option<f64>,
    pub subset: Subset,
}

impl LossRecord {
    /// `ntp + weight · rf` over the parts that were computed.
    pub fn combined(&self, flow_weight: f64) -> f64 {
        self.loss_ntp.unwrap_or(0.0) + flow_weight * self.loss_rf.unwrap_or(0.0)
    }

    pub fn csv_line(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.17e}"));
        format!("{},{},{},{}", self.step, f(self.loss_ntp), f(self.loss_rf), self.subset)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub records: Vec<LossRecord>,
}

impl LossTrace {
    pub const HEADER: &'static str = "step,loss_ntp,loss_rf,subset";

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        for r in &self.records {
            writeln!(w, "{}", r.csv_line())?;
        }
        Ok(())
    }
}
