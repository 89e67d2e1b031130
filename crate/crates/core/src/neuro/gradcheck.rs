use super::lstm::{backward, forward, LstmParams};
use super::{FlatMap, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Distinct coordinates sampled from each tensor; index 0 is always among
/// them. Thirteen tensors, one of them a scalar, give 12 * 18 + 1 = 217.
const PER_TENSOR: usize = 18;
const SAMPLE_SEED: u64 = 0x6772_6164;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: (&'static str, usize),
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Compares [`backward`] against central differences of
/// `0.5 * (forward - target)^2` on a fixed sample of coordinates.
pub fn grad_check(params: &LstmParams, seq: &[FlatMap], target: f64, eps: f64) -> Result<GradCheckReport> {
    grad_check_with(params, seq, target, eps, |p, s, y| backward(p, s, y).map(|(_, g)| g))
}

/// As [`grad_check`] with a caller-supplied analytic gradient.
pub fn grad_check_with<F>(
    params: &LstmParams,
    seq: &[FlatMap],
    target: f64,
    eps: f64,
    analytic: F,
) -> Result<GradCheckReport>
where
    F: Fn(&LstmParams, &[FlatMap], f64) -> Result<LstmParams>,
{
    assert!(eps > 0.0, "eps must be positive");
    let grad = analytic(params, seq, target)?;
    let loss = |p: &LstmParams| -> Result<f64> {
        let s = forward(p, seq)?;
        Ok(0.5 * (s - target) * (s - target))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        worst: ("", 0),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let grads = grad.tensors();
    for (ti, (name, values)) in params.tensors().iter().enumerate() {
        let len = values.len();
        let mut coords: Vec<usize> = std::iter::once(0)
            .chain(
                rand::seq::index::sample(&mut rng, len - 1, PER_TENSOR.min(len) - 1)
                    .into_iter()
                    .map(|i| i + 1),
            )
            .collect();
        coords.sort_unstable();
        for idx in coords {
            let original = values[idx];
            probe.tensors_mut()[ti].1[idx] = original + eps;
            let plus = loss(&probe)?;
            probe.tensors_mut()[ti].1[idx] = original - eps;
            let minus = loss(&probe)?;
            probe.tensors_mut()[ti].1[idx] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let ga = grads[ti].1[idx];
            let rel = (ga - numeric).abs() / (ga.abs() + numeric.abs()).max(1e-12);
            report.coords_checked += 1;
            if rel > report.max_rel_error || report.worst.0.is_empty() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = (name, idx);
                report.worst_analytic = ga;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuro::{INPUT_DIM, SEQ_LEN};
    use rand::Rng;

    fn seq(seed: u64) -> Vec<FlatMap> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..SEQ_LEN)
            .map(|_| {
                let mut v = [0.0; INPUT_DIM];
                v.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
                FlatMap(v)
            })
            .collect()
    }

    #[test]
    fn covers_every_tensor_with_at_least_200_coords() {
        let r = grad_check(&LstmParams::init(1), &seq(1), 0.3, 1e-5).unwrap();
        assert!(r.coords_checked >= 200, "{}", r.coords_checked);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn zero_params_have_no_error() {
        let r = grad_check(&LstmParams::zeros(), &seq(2), 0.0, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn zeroed_gradient_is_detected() {
        let params = LstmParams::init(5);
        let r = grad_check_with(&params, &seq(3), 0.4, 1e-5, |p, s, y| {
            let (_, mut g) = backward(p, s, y)?;
            g.dense_out.w[0] = 0.0;
            Ok(g)
        })
        .unwrap();
        assert!(r.max_rel_error > 0.1, "{r:?}");
        assert_eq!(r.worst, ("dense_out.w", 0));
    }
}
