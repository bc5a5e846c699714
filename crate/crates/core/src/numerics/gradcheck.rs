use super::{finite_diff_grad, max_relative_error, GradSet, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

/// Worst analytic-vs-numeric disagreement over one parameter tensor or input.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupError {
    pub name: String,
    pub size: usize,
    pub max_rel_err: f64,
}

/// Gradients below this magnitude are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Compare tape gradients of the scalar built by `build` against central
/// differences, for every parameter in `store` and every tensor in `inputs`.
///
/// `build` must be deterministic: it is re-run for every perturbation.
/// `fault` flips the sign of one op's backward rule on the analytic pass.
pub fn check_gradients<F>(
    store: &ParamStore,
    inputs: &[Tensor],
    h: f64,
    fault: Option<&'static str>,
    build: F,
) -> Result<Vec<GroupError>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    if let Some(op) = fault {
        tape.inject_sign_flip(op);
    }
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss);
    let mut param_grads = GradSet::new(store.len());
    tape.collect_param_grads(&grads, &mut param_grads);
    let input_grads: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.wrt(*v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();
    drop(tape);

    let eval = |s: &ParamStore, ins: &[Tensor]| -> f64 {
        let mut t = Tape::new(s);
        let vars: Vec<Var> = ins.iter().map(|x| t.constant(x.clone())).collect();
        match build(&mut t, &vars) {
            Ok(l) => t.scalar(l),
            Err(_) => f64::NAN,
        }
    };

    let mut out = Vec::new();
    let mut probe = store.clone();
    for (id, name, tensor) in store.iter() {
        let analytic = param_grads.get(id).map_or_else(|| vec![0.0; tensor.len()], <[f64]>::to_vec);
        let numeric = finite_diff_grad(
            |x| {
                probe.get_mut(id).values_mut().copy_from_slice(x.values());
                eval(&probe, inputs)
            },
            tensor,
            h,
        );
        probe.get_mut(id).values_mut().copy_from_slice(tensor.values());
        out.push(GroupError {
            name: name.to_string(),
            size: tensor.len(),
            max_rel_err: max_relative_error(&analytic, numeric.values(), REL_ERR_FLOOR),
        });
    }
    for (k, input) in inputs.iter().enumerate() {
        let mut ins = inputs.to_vec();
        let numeric = finite_diff_grad(
            |x| {
                ins[k] = x.clone();
                eval(store, &ins)
            },
            input,
            h,
        );
        out.push(GroupError {
            name: format!("input[{k}]"),
            size: input.len(),
            max_rel_err: max_relative_error(&input_grads[k], numeric.values(), REL_ERR_FLOOR),
        });
    }
    Ok(out)
}

/// Largest error across groups; NaN counts as a failure.
pub fn worst(groups: &[GroupError]) -> f64 {
    groups
        .iter()
        .map(|g| if g.max_rel_err.is_nan() { f64::INFINITY } else { g.max_rel_err })
        .fold(0.0, f64::max)
}
