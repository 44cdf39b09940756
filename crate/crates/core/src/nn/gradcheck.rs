use rand::seq::index::sample;

use super::{NnError, Parameterized};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    /// max |analytic − numeric| / max(1, |numeric|) over checked entries.
    pub max_relative_error: f64,
    /// Worst error per parameter name.
    pub per_param: Vec<(String, f64)>,
    pub checked_entries: usize,
    /// Frozen entries whose analytic gradient was not exactly zero.
    pub frozen_nonzero: usize,
}

/// Compares analytic gradients with central differences.
///
/// `objective` returns the loss and the gradient buffer for the model it is
/// given. Up to `samples_per_param` entries of every trainable parameter are
/// perturbed by ±`epsilon`; frozen parameters are only checked for having an
/// all-zero analytic gradient.
pub fn grad_check<P, F>(
    model: &P,
    mut objective: F,
    epsilon: f64,
    samples_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport, NnError>
where
    P: Parameterized + Clone,
    F: FnMut(&P) -> Result<(f64, P), NnError>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(NnError::InvalidConfig(format!("epsilon {epsilon} outside (0, 1e-2]")));
    }
    let (_, analytic) = objective(model)?;
    let mut rng = crate::rng::stream(seed, "grad_check");
    let mut report = GradCheckReport::default();
    let mut probe = model.clone();
    let grads = analytic.params();
    for (pi, (p, g)) in model.params().iter().zip(&grads).enumerate() {
        if !g.tensor.is_finite() {
            return Err(NnError::NonFiniteGradient(p.name.clone()));
        }
        if p.frozen {
            report.frozen_nonzero += g.tensor.data().iter().filter(|v| **v != 0.0).count();
            continue;
        }
        let n = p.tensor.len();
        let picks: Vec<usize> = if n <= samples_per_param {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, samples_per_param).into_vec();
            v.sort_unstable();
            v
        };
        let mut worst: f64 = 0.0;
        for idx in picks {
            let original = p.tensor.data()[idx];
            probe.params_mut()[pi].tensor.data_mut()[idx] = original + epsilon;
            let (plus, _) = objective(&probe)?;
            probe.params_mut()[pi].tensor.data_mut()[idx] = original - epsilon;
            let (minus, _) = objective(&probe)?;
            probe.params_mut()[pi].tensor.data_mut()[idx] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            if !numeric.is_finite() {
                return Err(NnError::NonFiniteGradient(p.name.clone()));
            }
            let err = (g.tensor.data()[idx] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
            report.checked_entries += 1;
        }
        report.max_relative_error = report.max_relative_error.max(worst);
        report.per_param.push((p.name.clone(), worst));
    }
    Ok(report)
}
