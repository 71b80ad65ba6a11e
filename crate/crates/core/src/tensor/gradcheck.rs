//! Central finite-difference verification of analytic gradients.
//!
//! The checker only ever evaluates the loss closure forward, so it is
//! independent of the backward rules it validates. All checks run in
//! `f64` with the perturbation size fixed at [`EPSILON`].

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;

/// Perturbation used for central differences.
pub const EPSILON: f64 = 1e-5;

/// Relative-error denominators are floored here so that finite-difference
/// noise on near-zero gradients cannot fire false alarms.
const REL_FLOOR: f64 = 1e-3;

/// Differences below this are treated as exact agreement.
const ABS_NOISE: f64 = 1e-9;

/// Outcome of one finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error seen over all sampled coordinates.
    pub max_rel_err: f64,
    /// Number of coordinates compared.
    pub coords_checked: usize,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff < ABS_NOISE {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients against central finite differences.
///
/// `params` are the tensors being perturbed, `analytic` the gradients to
/// verify (same order, same lengths), and `loss` re-evaluates the scalar
/// objective from the current parameter values. Up to
/// `samples_per_tensor` coordinates are drawn per tensor; `0` checks
/// every coordinate.
pub fn check_gradients<F, Er>(
    names: &[&str],
    params: &mut [Tensor<f64>],
    analytic: &[Vec<f64>],
    mut loss: F,
    samples_per_tensor: usize,
    rng: &mut ChaCha8Rng,
) -> Result<GradCheckReport, Er>
where
    F: FnMut(&[Tensor<f64>]) -> Result<f64, Er>,
{
    assert_eq!(params.len(), analytic.len());
    assert_eq!(params.len(), names.len());
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        coords_checked: 0,
        worst: None,
    };
    for t in 0..params.len() {
        let numel = params[t].numel();
        let coords: Vec<usize> = if samples_per_tensor == 0 || numel <= samples_per_tensor {
            (0..numel).collect()
        } else {
            let mut all: Vec<usize> = (0..numel).collect();
            all.shuffle(rng);
            all.truncate(samples_per_tensor);
            all
        };
        for &i in &coords {
            let original = params[t].data()[i];
            params[t].data_mut()[i] = original + EPSILON;
            let plus = loss(params)?;
            params[t].data_mut()[i] = original - EPSILON;
            let minus = loss(params)?;
            params[t].data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * EPSILON);
            let err = rel_err(analytic[t][i], numeric);
            report.coords_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((names[t].to_string(), i));
            }
        }
    }
    Ok(report)
}

/// Fills a tensor with `uniform(-scale, scale)` draws.
pub fn random_tensor(shape: Vec<usize>, scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape, data).expect("random tensor shape")
}
