use super::{Result, Scalar, Tape, Tensor, TensorError, Var};

/// Compares tape gradients with central differences.
///
/// `f` receives a fresh tape and one variable per input tensor and must
/// return a scalar. Each input coordinate is perturbed by `±eps`; the result
/// is the largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
/// `f` is evaluated twice at the unperturbed point first, and a mismatch is
/// reported as [`TensorError::NonDeterministic`].
pub fn finite_diff_check<T, F>(f: F, inputs: &[Tensor<T>], eps: f64) -> Result<f64>
where
    T: Scalar,
    F: FnMut(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    Ok(finite_diff_errors(f, inputs, eps)?.into_iter().fold(0.0, f64::max))
}

/// Like [`finite_diff_check`], but reports the worst error per input tensor.
pub fn finite_diff_errors<T, F>(f: F, inputs: &[Tensor<T>], eps: f64) -> Result<Vec<f64>>
where
    T: Scalar,
    F: FnMut(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let pairs = finite_diff_pairs(f, inputs, eps)?;
    Ok(pairs
        .iter()
        .map(|coords| {
            coords.iter().fold(0.0f64, |worst, &(a, n)| {
                let err = relative_error(a, n);
                if err.is_nan() || worst.is_nan() {
                    f64::NAN
                } else {
                    worst.max(err)
                }
            })
        })
        .collect())
}

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-12);
    (analytic - numeric).abs() / denom
}

/// `(analytic, numeric)` derivative for every coordinate of every input.
pub fn finite_diff_pairs<T, F>(mut f: F, inputs: &[Tensor<T>], eps: f64) -> Result<Vec<Vec<(f64, f64)>>>
where
    T: Scalar,
    F: FnMut(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let analytic = tape_gradients(&mut f, inputs)?;
    let numeric = central_differences(&mut f, inputs, eps)?;
    Ok(analytic
        .into_iter()
        .zip(numeric)
        .map(|(a, n)| a.into_iter().zip(n).collect())
        .collect())
}

/// Reverse-mode derivative of `f` for every coordinate of every input.
pub fn tape_gradients<T, F>(mut f: F, inputs: &[Tensor<T>]) -> Result<Vec<Vec<f64>>>
where
    T: Scalar,
    F: FnMut(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    scalar_value(&tape, out)?;
    let grads = tape.backward(out)?;
    let mut flat = Vec::with_capacity(vars.len());
    for (v, t) in vars.iter().zip(inputs) {
        flat.push(match grads.get(*v)? {
            Some(g) => g.iter().copied().map(to_f64).collect(),
            None => vec![0.0; t.len()],
        });
    }
    Ok(flat)
}

/// Central-difference derivative of `f` for every coordinate of every input.
///
/// Perturbation and quotient are computed in `T`, with the step taken as the
/// representable distance between the two probe points.
pub fn central_differences<T, F>(mut f: F, inputs: &[Tensor<T>], eps: f64) -> Result<Vec<Vec<f64>>>
where
    T: Scalar,
    F: FnMut(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(TensorError::Parameter(format!("eps must be > 0, got {eps}")));
    }
    let mut eval = |values: &[Tensor<T>]| -> Result<T> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone(), false)).collect();
        let out = f(&mut tape, &vars)?;
        scalar_value(&tape, out)
    };

    let first = to_f64(eval(inputs)?);
    let second = to_f64(eval(inputs)?);
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::NonDeterministic { first, second });
    }

    let step = T::from_f64_lossy(eps);
    let mut out = Vec::with_capacity(inputs.len());
    let mut probe: Vec<Tensor<T>> = inputs.to_vec();
    for t in 0..inputs.len() {
        let mut coords = Vec::with_capacity(inputs[t].len());
        for c in 0..inputs[t].len() {
            let orig = inputs[t].data()[c];
            let (hi, lo) = (orig + step, orig - step);
            probe[t].data_mut()[c] = hi;
            let plus = eval(&probe)?;
            probe[t].data_mut()[c] = lo;
            let minus = eval(&probe)?;
            probe[t].data_mut()[c] = orig;
            coords.push(to_f64((plus - minus) / (hi - lo)));
        }
        out.push(coords);
    }
    Ok(out)
}

fn scalar_value<T: Scalar>(tape: &Tape<T>, out: Var) -> Result<T> {
    let value = tape.value(out)?;
    if value.len() != 1 {
        return Err(TensorError::NotScalar(value.shape().to_vec()));
    }
    Ok(value.data()[0])
}

fn to_f64<T: Scalar>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}
