use super::{AutodiffError, Tape, Tensor, Var};

/// Largest relative discrepancy between the tape gradient of `f` at `x` and
/// a central finite difference with the given `step`.
///
/// The error per coordinate is `|analytic − numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64, AutodiffError>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>, AutodiffError>,
{
    grad_check_with_inputs(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), step)
}

/// [`grad_check`] over several differentiable inputs at once.
pub fn grad_check_with_inputs<F>(f: F, inputs: &[Tensor], step: f64) -> Result<f64, AutodiffError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, AutodiffError>,
{
    if !(step > 0.0) {
        return Err(AutodiffError::InvalidStep(step));
    }
    let eval = |vals: &[Tensor]| -> Result<f64, AutodiffError> {
        let tape = Tape::new();
        let vars: Vec<_> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let value = scalar_of(out)?;
        Ok(value)
    };

    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    scalar_of(out)?;
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var);
        for i in 0..inputs[k].numel() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + step;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = orig - step;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn scalar_of(v: Var<'_>) -> Result<f64, AutodiffError> {
    let t = v.value();
    if t.numel() != 1 {
        return Err(AutodiffError::NonScalarRoot {
            shape: t.shape().to_vec(),
        });
    }
    let value = t.item();
    if !value.is_finite() {
        return Err(AutodiffError::NonFinite { value });
    }
    Ok(value)
}
