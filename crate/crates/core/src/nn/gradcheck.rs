//! Central finite-difference gradient checking in double precision.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so entries whose true gradient
/// is numerically zero are compared absolutely.
pub const DEFAULT_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    pub floor: f64,
    /// Fraction of the elements of each parameter to probe (1.0 = all).
    pub fraction: f64,
    pub seed: u64,
}

impl GradCheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            step: DEFAULT_STEP,
            tolerance,
            floor: DEFAULT_FLOOR,
            fraction: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradient returned by `f` with central differences.
///
/// `f` maps a parameter list to `(value, gradient per parameter)`.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], names: &[String], opts: &GradCheckOptions) -> GradCheckReport
where
    F: Fn(&[Tensor<f64>]) -> (f64, Vec<Tensor<f64>>),
{
    assert_eq!(params.len(), names.len(), "one name per parameter");
    let (_, analytic) = f(params);
    assert_eq!(analytic.len(), params.len(), "one gradient per parameter");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.to_vec();
    let mut report = Vec::with_capacity(params.len());
    for (p, (grad, name)) in analytic.iter().zip(names).enumerate() {
        assert_eq!(grad.shape(), params[p].shape(), "gradient shape of {name}");
        let n = params[p].len();
        let k = ((n as f64 * opts.fraction).ceil() as usize).clamp(n.min(1), n);
        let mut idx = if k == n {
            (0..n).collect::<Vec<_>>()
        } else {
            sample(&mut rng, n, k).into_vec()
        };
        idx.sort_unstable();
        let mut check = ParamCheck {
            name: name.clone(),
            checked: idx.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        };
        for i in idx {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + opts.step;
            let up = f(&work).0;
            work[p].data_mut()[i] = orig - opts.step;
            let down = f(&work).0;
            work[p].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = grad.data()[i];
            check.max_abs_error = check.max_abs_error.max((a - numeric).abs());
            check.max_rel_error = check.max_rel_error.max(relative_error(a, numeric, opts.floor));
        }
        report.push(check);
    }
    GradCheckReport {
        params: report,
        tolerance: opts.tolerance,
    }
}
