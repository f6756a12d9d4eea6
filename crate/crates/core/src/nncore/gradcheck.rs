//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Coordinates sampled per parameter tensor; `0` checks all of them.
    pub samples_per_param: usize,
    /// Lower bound on the denominator of the relative error, so coordinates
    /// whose true gradient is ~0 are compared absolutely.
    pub denominator_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { epsilon: 1e-4, tolerance: 1e-3, samples_per_param: 8, denominator_floor: 1e-4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<CoordinateCheck>,
    pub passed: bool,
}

/// Compares the gradients already stored in `store` against central
/// differences of `f`. Frozen parameters are skipped. Parameter values are
/// restored bit-exactly afterwards.
pub fn finite_difference_check<T: Real>(
    store: &mut ParamStore<T>,
    mut f: impl FnMut(&ParamStore<T>) -> T,
    cfg: &GradCheckConfig,
) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eps = T::of(cfg.epsilon);
    let mut checked = 0;
    let mut worst: Option<CoordinateCheck> = None;
    for p in 0..store.len() {
        let entry = &store.entries()[p];
        if entry.frozen {
            continue;
        }
        let n = entry.value.len();
        let picks: Vec<usize> = if cfg.samples_per_param == 0 || cfg.samples_per_param >= n {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, cfg.samples_per_param).into_vec();
            v.sort_unstable();
            v
        };
        for i in picks {
            let analytic = store.entries()[p].grad.data()[i].as_f64();
            let original = store.entries()[p].value.data()[i];
            store.entries_mut()[p].value.data_mut()[i] = original + eps;
            let plus = f(store).as_f64();
            store.entries_mut()[p].value.data_mut()[i] = original - eps;
            let minus = f(store).as_f64();
            store.entries_mut()[p].value.data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * cfg.epsilon);
            let denom = analytic.abs().max(numeric.abs()).max(cfg.denominator_floor);
            let rel_error = (analytic - numeric).abs() / denom;
            checked += 1;
            if worst.as_ref().is_none_or(|w| rel_error > w.rel_error) || !rel_error.is_finite() {
                worst = Some(CoordinateCheck {
                    param: store.entries()[p].name.clone(),
                    index: i,
                    analytic,
                    numeric,
                    rel_error,
                });
            }
        }
    }
    let max_rel_error = worst.as_ref().map_or(0.0, |w| w.rel_error);
    GradCheckReport { checked, max_rel_error, passed: max_rel_error < cfg.tolerance, worst }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::Tensor;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("p", Tensor::from_f64(&[4], &[0.5, -1.5, 2.0, 3.25]).unwrap()).unwrap();
        let g = store.value(id).clone();
        store.accumulate(id, &g).unwrap();
        let f = |s: &ParamStore<f64>| 0.5 * s.entries()[0].value.sum_sq();
        let cfg = GradCheckConfig { samples_per_param: 0, ..Default::default() };
        let report = finite_difference_check(&mut store, f, &cfg);
        assert_eq!(report.checked, 4);
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        assert!(report.passed);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let mut store = ParamStore::<f64>::new();
        store.insert("p", Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap()).unwrap();
        let report = finite_difference_check(&mut store, |_| 7.0, &GradCheckConfig::default());
        assert_eq!(report.max_rel_error, 0.0);
        let w = report.worst.unwrap();
        assert_eq!((w.analytic, w.numeric), (0.0, 0.0));
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("p", Tensor::from_f64(&[1], &[2.0]).unwrap()).unwrap();
        store.accumulate(id, &Tensor::from_f64(&[1], &[1.0]).unwrap()).unwrap();
        let report = finite_difference_check(&mut store, |s| s.entries()[0].value.sum_sq(), &GradCheckConfig::default());
        assert!(!report.passed);
        assert_eq!(report.worst.unwrap().param, "p");
    }
}
