//! Central-difference gradient oracle.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1e-8)
}

fn scalar_of(tape: &Tape, loss: Var) -> Result<f64> {
    let t = tape.value(loss);
    if !t.is_scalar() {
        return Err(Error::NotScalar(t.shape().to_vec()));
    }
    Ok(t.item())
}

/// Max over coordinates of `|g_analytic − g_fd| / max(1e-8, |g_fd|)` for a
/// scalar function of one tensor.
pub fn finite_diff_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let params = ParamSet::from([(String::new(), point.clone())]);
    finite_diff_check_params(
        |tape, vars| f(tape, vars[""]),
        &params,
        &ParamCheck {
            eps,
            ..ParamCheck::default()
        },
    )
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub eps: f64,
    /// Check at most this many randomly chosen coordinates per tensor.
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
    /// Tensors left out of the check, matched by name suffix.
    pub skip: Vec<String>,
}

impl Default for ParamCheck {
    fn default() -> Self {
        ParamCheck {
            eps: 1e-5,
            max_coords_per_tensor: None,
            seed: 0,
            skip: Vec::new(),
        }
    }
}

/// Gradient check over every tensor of a parameter set.
pub fn finite_diff_check_params<F>(f: F, params: &ParamSet, check: &ParamCheck) -> Result<f64>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var>,
{
    if check.eps <= 0.0 || !check.eps.is_finite() {
        return Err(Error::Config(format!("eps must be positive, got {}", check.eps)));
    }
    let eval = |set: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = tape.constants(set);
        let loss = f(&mut tape, &vars)?;
        scalar_of(&tape, loss)
    };

    let mut tape = Tape::new();
    let vars = tape.params(params);
    let loss = f(&mut tape, &vars)?;
    let first = scalar_of(&tape, loss)?;
    let second = eval(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }
    let grads = tape.backward(loss)?.for_params(&vars);

    let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for (name, value) in params {
        if check.skip.iter().any(|s| name.ends_with(s.as_str())) {
            continue;
        }
        let coords: Vec<usize> = match check.max_coords_per_tensor {
            Some(k) if k < value.len() => sample(&mut rng, value.len(), k).into_vec(),
            _ => (0..value.len()).collect(),
        };
        for i in coords {
            let x = value.data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = x + check.eps;
            let plus = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = x - check.eps;
            let minus = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = x;
            let numeric = (plus - minus) / (2.0 * check.eps);
            worst = worst.max(relative_error(grads[name].data()[i], numeric));
        }
    }
    Ok(worst)
}
