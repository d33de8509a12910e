use crate::tensor::{grad_check, GradCheckOptions, GradCheckReport, Tape, Tensor, TensorError, Var};

use super::{forward, ForwardOptions, ModelError, ModelInput, ModelParams};

/// Joint objective on one sequence: next-token cross-entropy at the layout's
/// text targets plus velocity MSE against `velocity_target`.
fn joint_objective(
    tape: &mut Tape,
    model: &ModelParams,
    vars: &[Var],
    input: &ModelInput,
    velocity_target: &Tensor,
) -> Result<Var, ModelError> {
    let (positions, ids): (Vec<usize>, Vec<u32>) = input.layout.text_targets().into_iter().unzip();
    let opts = ForwardOptions { logits_at: positions, ..Default::default() };
    let out = forward(tape, model, vars, input, &opts)?;
    let mut loss = None;
    if let Some(logits) = out.logits {
        loss = Some(tape.cross_entropy(logits, &ids)?);
    }
    if let Some(v) = out.velocity {
        let target = tape.constant(velocity_target.clone());
        let mse = tape.mse(v, target)?;
        loss = Some(match loss {
            Some(ce) => tape.add(ce, mse)?,
            None => mse,
        });
    }
    loss.ok_or_else(|| ModelError::BadDimensions("sequence has neither text targets nor a generated image".into()))
}

/// Finite-difference check of every parameter of `model` through the joint
/// objective on `input`.
pub fn check_model_gradients(
    model: &ModelParams,
    input: &ModelInput,
    velocity_target: &Tensor,
    opts: GradCheckOptions,
) -> Result<GradCheckReport, ModelError> {
    // Errors other than tensor errors depend only on the input, so one dry
    // run rules them out for the perturbed evaluations.
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, |_| false);
    joint_objective(&mut tape, model, &vars, input, velocity_target)?;
    let params: Vec<(String, Tensor)> = model.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
    let report = grad_check(
        |tape: &mut Tape, vars: &[Var]| -> Result<Var, TensorError> {
            joint_objective(tape, model, vars, input, velocity_target).map_err(|e| match e {
                ModelError::Tensor(t) => t,
                other => unreachable!("input validated before checking: {other}"),
            })
        },
        &params,
        opts,
    )?;
    Ok(report)
}
