use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Corpus, InterleavedSample};
use crate::layout::Vocabulary;
use crate::model::{ModelParams, VitStub};
use crate::script::Script;
use crate::tensor::{Tape, Var};

use super::loss::{flow_loss, text_loss, FlowSample, RFExample};
use super::{adam_step, AdamState, GradRoute, LossRecord, LossTrace, Subset, TrainConfig, TrainError};

/// Owns the model and optimizer state across steps of either stage.
pub struct Trainer<'v> {
    pub model: ModelParams,
    pub config: TrainConfig,
    pub trace: LossTrace,
    vocab: &'v Vocabulary,
    vit: VitStub,
    adam: AdamState,
    rng: ChaCha8Rng,
}

/// Sum of `parts` divided by their count.
fn mean_of(tape: &mut Tape, parts: &[Var]) -> Result<Option<Var>, TrainError> {
    let Some((&first, rest)) = parts.split_first() else { return Ok(None) };
    let mut acc = first;
    for &p in rest {
        acc = tape.add(acc, p)?;
    }
    Ok(Some(tape.scale(acc, 1.0 / parts.len() as f64)))
}

impl<'v> Trainer<'v> {
    pub fn new(model: ModelParams, vocab: &'v Vocabulary, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        if vocab.len() != model.config.vocab {
            return Err(TrainError::BadConfig(format!(
                "vocabulary has {} tokens but the model expects {}",
                vocab.len(),
                model.config.vocab
            )));
        }
        Ok(Self {
            vit: VitStub::for_config(&model.config),
            adam: AdamState::new(&model),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            trace: LossTrace::default(),
            model,
            config,
            vocab,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.trace.records.len()
    }

    /// Draws the generated shot, noise and time for one flow sample.
    fn flow_example(&mut self, sample: &FlowSample) -> Result<RFExample, TrainError> {
        let x1 = sample.target_latent(&self.model)?.into_data();
        Ok(RFExample::sample(&mut self.rng, x1))
    }

    /// Backpropagates `loss`, applies Adam over the route and records the step.
    fn finish(
        &mut self,
        mut tape: Tape,
        vars: &[Var],
        loss: Var,
        route: &GradRoute,
        record: LossRecord,
    ) -> Result<LossRecord, TrainError> {
        tape.backward(loss)?;
        let grads: Vec<Option<Vec<f64>>> = vars.iter().map(|&v| tape.grad(v).map(<[f64]>::to_vec)).collect();
        adam_step(&mut self.model, &grads, &self.config.adam(), &mut self.adam, route);
        self.trace.records.push(record);
        Ok(record)
    }

    /// Stage-1 step: next-token loss on each script plus weighted flow loss
    /// on one of its keyframes, both experts and the shared weights
    /// updated together.
    pub fn joint_step(&mut self, batch: &[&InterleavedSample]) -> Result<LossRecord, TrainError> {
        let route = GradRoute::joint();
        let mut tape = Tape::new();
        let vars = self.model.bind(&mut tape, |g| route.updates(g));
        let (mut ntp, mut rf) = (Vec::new(), Vec::new());
        for s in batch {
            ntp.push(text_loss(&mut tape, &self.model, &vars, self.vocab, &s.script)?);
            let sample = self.interleaved_flow_sample(s);
            let ex = self.flow_example(&sample)?;
            rf.push(flow_loss(
                &mut tape,
                &self.model,
                &vars,
                self.vocab,
                &self.vit,
                &sample,
                &ex,
                false,
                self.config.id_prompting,
            )?);
        }
        let ntp = mean_of(&mut tape, &ntp)?.ok_or_else(|| TrainError::EmptyCorpus("empty batch".into()))?;
        let rf = mean_of(&mut tape, &rf)?.expect("same length as ntp");
        let weighted = tape.scale(rf, self.config.flow_weight);
        let loss = tape.add(ntp, weighted)?;
        let record = LossRecord {
            step: self.steps_taken(),
            loss_ntp: Some(tape.value(ntp).item()),
            loss_rf: Some(tape.value(rf).item()),
            subset: Subset::Interleaved,
        };
        self.finish(tape, &vars, loss, &route, record)
    }

    /// Stage-2 text step: next-token loss, understanding expert and shared
    /// weights only.
    pub fn text_step(&mut self, batch: &[&Script]) -> Result<LossRecord, TrainError> {
        let route = GradRoute::text();
        let mut tape = Tape::new();
        let vars = self.model.bind(&mut tape, |g| route.updates(g));
        let mut parts = Vec::new();
        for s in batch {
            parts.push(text_loss(&mut tape, &self.model, &vars, self.vocab, s)?);
        }
        let loss = mean_of(&mut tape, &parts)?.ok_or_else(|| TrainError::EmptyCorpus("empty batch".into()))?;
        let record = LossRecord {
            step: self.steps_taken(),
            loss_ntp: Some(tape.value(loss).item()),
            loss_rf: None,
            subset: Subset::Text,
        };
        self.finish(tape, &vars, loss, &route, record)
    }

    /// Stage-2 flow step: generation expert only, understanding rows
    /// detached when the config says so.
    pub fn flow_step(&mut self, batch: &[FlowSample], subset: Subset) -> Result<LossRecord, TrainError> {
        let route = GradRoute::generation(self.config.detach);
        let mut tape = Tape::new();
        let vars = self.model.bind(&mut tape, |g| route.updates(g));
        let mut parts = Vec::new();
        for sample in batch {
            let ex = self.flow_example(sample)?;
            parts.push(flow_loss(
                &mut tape,
                &self.model,
                &vars,
                self.vocab,
                &self.vit,
                sample,
                &ex,
                route.detach_understanding,
                self.config.id_prompting,
            )?);
        }
        let loss = mean_of(&mut tape, &parts)?.ok_or_else(|| TrainError::EmptyCorpus("empty batch".into()))?;
        let record =
            LossRecord { step: self.steps_taken(), loss_ntp: None, loss_rf: Some(tape.value(loss).item()), subset };
        self.finish(tape, &vars, loss, &route, record)
    }

    /// Picks a generated shot uniformly for an interleaved sample.
    pub fn interleaved_flow_sample<'s>(&mut self, s: &'s InterleavedSample) -> FlowSample<'s> {
        let gen_shot = self.rng.gen_range(1..=s.script.shots.len() as u32);
        FlowSample { script: &s.script, frames: &s.keyframes, gen_shot }
    }
}

/// Indices `step * batch .. (step + 1) * batch`, wrapped over `len`.
fn cycle(step: usize, batch: usize, len: usize) -> impl Iterator<Item = usize> {
    (step * batch..(step + 1) * batch).map(move |i| i % len)
}

/// Stage 1 over the interleaved subset for `config.steps` steps.
pub fn train_stage1(
    model: ModelParams,
    corpus: &Corpus,
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<(ModelParams, LossTrace), TrainError> {
    if corpus.interleaved.is_empty() {
        return Err(TrainError::EmptyCorpus("stage 1 needs interleaved samples".into()));
    }
    let mut t = Trainer::new(model, vocab, config.clone())?;
    for step in 0..config.steps {
        let batch: Vec<&InterleavedSample> =
            cycle(step, config.batch_size, corpus.interleaved.len()).map(|i| &corpus.interleaved[i]).collect();
        t.joint_step(&batch)?;
    }
    Ok((t.model, t.trace))
}

/// Stage 2: round-robin over text, interleaved and image-pair batches by
/// `config.stage2_mix`, skipping subsets that are empty or weighted zero.
/// `observe` sees every record with the parameters right after its step.
pub fn train_stage2(
    model: ModelParams,
    corpus: &Corpus,
    vocab: &Vocabulary,
    config: &TrainConfig,
    mut observe: impl FnMut(&LossRecord, &ModelParams),
) -> Result<(ModelParams, LossTrace), TrainError> {
    let sizes = [corpus.text.len(), corpus.interleaved.len(), corpus.pairs.len()];
    let subsets = [Subset::Text, Subset::Interleaved, Subset::Pairs];
    // One round holds mix[i] batches of subset i, alternating so equal
    // weights interleave.
    let mut left: Vec<usize> = (0..3).map(|i| if sizes[i] > 0 { config.stage2_mix[i] } else { 0 }).collect();
    let mut order = Vec::new();
    while left.iter().any(|&n| n > 0) {
        for i in 0..3 {
            if left[i] > 0 {
                left[i] -= 1;
                order.push(subsets[i]);
            }
        }
    }
    if order.is_empty() {
        return Err(TrainError::EmptyCorpus("stage 2 has no non-empty subset with positive weight".into()));
    }
    let mut t = Trainer::new(model, vocab, config.clone())?;
    let mut cursor = [0usize; 3];
    for step in 0..config.steps {
        let subset = order[step % order.len()];
        let which = subsets.iter().position(|&x| x == subset).expect("known subset");
        let idx: Vec<usize> = cycle(cursor[which], config.batch_size, sizes[which]).collect();
        cursor[which] += 1;
        let record = match subset {
            Subset::Text => {
                let batch: Vec<&Script> = idx.iter().map(|&i| &corpus.text[i].script).collect();
                t.text_step(&batch)?
            }
            Subset::Interleaved => {
                let batch: Vec<FlowSample> =
                    idx.iter().map(|&i| t.interleaved_flow_sample(&corpus.interleaved[i])).collect();
                t.flow_step(&batch, subset)?
            }
            Subset::Pairs => {
                let batch: Vec<FlowSample> = idx
                    .iter()
                    .map(|&i| FlowSample {
                        script: &corpus.pairs[i].script,
                        frames: std::slice::from_ref(&corpus.pairs[i].keyframe),
                        gen_shot: 1,
                    })
                    .collect();
                t.flow_step(&batch, subset)?
            }
        };
        observe(&record, &t.model);
    }
    Ok((t.model, t.trace))
}
