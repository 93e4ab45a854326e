//! Finite-difference gradient verification.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::NnError;
use crate::params::ParameterStore;
use crate::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tolerance: f64,
    /// Coordinates checked per parameter tensor; `None` checks all of them.
    pub coords_per_param: Option<usize>,
    pub seed: u64,
    /// Smallest denominator of the relative error. Keeps derivatives that
    /// are exactly zero (attention key biases, for one) from turning
    /// roundoff into large ratios.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { eps: 1e-4, tolerance: 1e-4, coords_per_param: None, seed: 0, floor: 1e-6 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Relative error `|a - n| / max(floor, |a|, |n|)` between an analytic and a
/// numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(analytic.abs()).max(floor)
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences on the parameters in `store`.
pub fn grad_check<F, E>(store: &ParameterStore, config: &GradCheckConfig, f: F) -> std::result::Result<GradCheckReport, E>
where
    F: Fn(&mut Tape) -> std::result::Result<Var, E>,
    E: From<NnError>,
{
    grad_check_where(store, config, |_| true, f)
}

/// [`grad_check`] restricted to parameters whose name passes `select`.
pub fn grad_check_where<F, E>(
    store: &ParameterStore,
    config: &GradCheckConfig,
    select: impl Fn(&str) -> bool,
    f: F,
) -> std::result::Result<GradCheckReport, E>
where
    F: Fn(&mut Tape) -> std::result::Result<Var, E>,
    E: From<NnError>,
{
    let grads = {
        let mut t = Tape::new(store);
        let loss = f(&mut t)?;
        t.backward(loss)?
    };
    let eval = |s: &ParameterStore| -> std::result::Result<f64, E> {
        let mut t = Tape::new(s);
        let loss = f(&mut t)?;
        Ok(t.scalar(loss))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut probe = store.clone();
    let mut report =
        GradCheckReport { max_rel_error: 0.0, worst: String::new(), checked: 0, tolerance: config.tolerance };
    let ids: Vec<_> =
        store.iter().filter(|(_, name, _)| select(name)).map(|(id, name, t)| (id, name.to_string(), t.len())).collect();
    for (id, name, len) in ids {
        let coords: Vec<usize> = match config.coords_per_param {
            Some(k) if k < len => sample(&mut rng, len, k).into_vec(),
            _ => (0..len).collect(),
        };
        for c in coords {
            let orig = probe.value(id).data()[c];
            probe.value_mut(id).data_mut()[c] = orig + config.eps;
            let plus = eval(&probe)?;
            probe.value_mut(id).data_mut()[c] = orig - config.eps;
            let minus = eval(&probe)?;
            probe.value_mut(id).data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * config.eps);
            let err = relative_error(grads.get(id)[c], numeric, config.floor);
            report.checked += 1;
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst = format!("{name}[{c}]");
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_correct_gradient_of_cubic() {
        let mut s = ParameterStore::new(0);
        let w = s.init_uniform("w", vec![3], 1).unwrap();
        let report = grad_check(&s, &GradCheckConfig::default(), |t| -> crate::Result<Var> {
            let x = t.param(w);
            let x2 = t.square(x);
            let x3 = t.mul(x2, x)?;
            Ok(t.sum_all(x3))
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.checked, 3);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1e-9, 0.0, 1e-6), 1e-3);
        assert_eq!(relative_error(2.0, 1.0, 1e-6), 0.5);
    }
}
