//! Central-difference verification of backward rules (64-bit only).

use crate::{EngineError, Tape, Tensor, Var};

/// `|a - b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn evaluate<F, E>(f: &F, points: &[Tensor<f64>], requires_grad: bool) -> Result<(Tape<f64>, Vec<Var>, Var), E>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var, E>,
    E: From<EngineError>,
{
    let tape = Tape::new();
    let leaves: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone(), requires_grad)).collect();
    let out = f(&tape, &leaves)?;
    if let Some((node, op)) = tape.first_non_finite() {
        return Err(EngineError::NonFinite { node: node.0, op }.into());
    }
    let shape = tape.shape_of(out)?;
    if shape.iter().product::<usize>() != 1 {
        return Err(EngineError::contract("grad_check", format!("function must return a scalar, got {shape:?}")).into());
    }
    Ok((tape, leaves, out))
}

/// Largest coordinate-wise relative error between `backward` and central
/// differences, over every coordinate of every input.

///
/// `f` must be deterministic; it receives one leaf per entry of `points`.
/// Its error type only needs to absorb engine errors.
pub fn grad_check_many<F, E>(f: F, points: &[Tensor<f64>], epsilon: f64) -> Result<f64, E>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var, E>,
    E: From<EngineError>,
{
    let (tape, leaves, out) = evaluate(&f, points, true)?;
    let grads = tape.backward(out)?;
    let mut worst: f64 = 0.0;
    let mut probe = points.to_vec();
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(*leaf).cloned().unwrap_or_else(|| Tensor::zeros(points[i].shape().to_vec()));
        for j in 0..points[i].numel() {
            let orig = points[i].data()[j];
            probe[i].data_mut()[j] = orig + epsilon;
            let (t, _, o) = evaluate(&f, &probe, false)?;
            let plus = t.value(o)?.item();
            probe[i].data_mut()[j] = orig - epsilon;
            let (t, _, o) = evaluate(&f, &probe, false)?;
            let minus = t.value(o)?.item();
            probe[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            worst = worst.max(relative_error(analytic.data()[j], numeric));
        }
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F, E>(f: F, point: &Tensor<f64>, epsilon: f64) -> Result<f64, E>
where
    F: Fn(&Tape<f64>, Var) -> Result<Var, E>,
    E: From<EngineError>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(point), epsilon)
}
