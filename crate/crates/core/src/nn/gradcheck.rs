//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::param::ParamSet;
use super::tape::{Tape, Var};
use crate::error::Result;

/// Denominator floor for the relative error, so that coordinates whose true
/// gradient is zero are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// (group name, flat index, analytic, numeric) of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn eval_loss<F>(params: &ParamSet, forward: &F) -> Result<f64>
where
    F: for<'p> Fn(&mut Tape<'p>, &'p ParamSet) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = forward(&mut tape, params)?;
    Ok(tape.value(loss).item())
}

/// Compares `backward` against the fourth-order central difference
/// `(-f(θ+2eps) + 8f(θ+eps) - 8f(θ-eps) + f(θ-2eps)) / 12eps` on up to
/// `coords_per_group` sampled coordinates of every group (all of them when
/// the group is smaller). `forward` must build a scalar loss.
pub fn grad_check<F>(params: &ParamSet, eps: f64, coords_per_group: usize, seed: u64, forward: F) -> Result<GradCheckReport>
where
    F: for<'p> Fn(&mut Tape<'p>, &'p ParamSet) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let loss = forward(&mut tape, params)?;
        tape.backward(loss)?.into_param_grads()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, coords_checked: 0, worst: None };

    for id in params.ids() {
        let n = params.value(id).len();
        let coords: Vec<usize> = if n <= coords_per_group {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, coords_per_group).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let original = params.value(id).data()[i];
            let mut at = |delta: f64| -> Result<f64> {
                probe.value_mut(id).data_mut()[i] = original + delta;
                eval_loss(&probe, &forward)
            };
            let (p1, m1, p2, m2) = (at(eps)?, at(-eps)?, at(2.0 * eps)?, at(-2.0 * eps)?);
            probe.value_mut(id).data_mut()[i] = original;

            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[i]);
            let err = relative_error(a, numeric);
            report.coords_checked += 1;
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((params.get(id).name.clone(), i, a, numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Matrix;

    #[test]
    fn constant_model_has_zero_gradients() {
        let mut params = ParamSet::new();
        params.add("w", Matrix::from_rows(&[[1.0, 2.0]]));
        let report = grad_check(&params, 1e-5, 10, 0, |tape, _p| Ok(tape.input(Matrix::scalar(3.0)))).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
        assert_eq!(report.coords_checked, 2);
    }

    #[test]
    fn scaled_square_matches() {
        let mut params = ParamSet::new();
        let id = params.add("w", Matrix::from_rows(&[[0.5]]));
        let ok = grad_check(&params, 1e-5, 10, 0, |tape, p| {
            let w = tape.param(p, id);
            let y = tape.matmul(w, w)?;
            Ok(tape.scale(y, 3.0))
        })
        .unwrap();
        assert!(ok.max_rel_error < 1e-9);
        assert_eq!(relative_error(1.0, 2.0), 0.5);
    }
}
