//! Central-difference gradient checking in double precision.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{no_grad, Tensor};
use crate::error::Result;

/// Worst mismatch found by [`check_inputs`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst mismatch.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates_checked: usize,
}

/// |a − n| / max(1, |a|, |n|)
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Max relative error between autodiff and central differences of a scalar
/// function, over every coordinate of `x`.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, epsilon: f64) -> Result<f64>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let report = check_inputs(|xs| f(&xs[0]), std::slice::from_ref(x), epsilon, None, 0)?;
    Ok(report.max_rel_error)
}

/// Gradient check over several inputs at once.
///
/// With `max_coords_per_input = Some(k)`, at most `k` coordinates of each
/// input are probed, chosen by `seed`; otherwise every coordinate is.
pub fn check_inputs<F>(
    f: F,
    inputs: &[Tensor<f64>],
    epsilon: f64,
    max_coords_per_input: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let params: Vec<Tensor<f64>> = inputs.iter().map(|t| t.detach().into_param()).collect();
    f(&params)?.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let _guard = no_grad();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates_checked: 0,
    };
    let mut probe = params.clone();
    for (which, base) in params.iter().enumerate() {
        let n = base.numel();
        let coords: Vec<usize> = match max_coords_per_input {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let x0 = base.data()[i];
            probe[which] = base.with_value_at(i, x0 + epsilon);
            let plus = f(&probe)?.item();
            probe[which] = base.with_value_at(i, x0 - epsilon);
            let minus = f(&probe)?.item();
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[which][i];
            let err = relative_error(a, numeric);
            report.coordinates_checked += 1;
            if err > report.max_rel_error || report.coordinates_checked == 1 {
                report.max_rel_error = err;
                report.worst = (which, i);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        probe[which] = base.clone();
    }
    Ok(report)
}
