//! T₂ extraction from coherence curves.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ensemble_average, mean_curve, CceSettings, EnsembleResult};
use crate::crystal::BathConfiguration;
use crate::error::{Error, Result};
use crate::fitter::lm::{levenberg_marquardt, LmOptions};
use crate::hamiltonian::ExperimentConditions;
use crate::rng::{derive_seed, stream_rng};
use crate::sequences::SequenceTemplate;

pub const STRETCH_RANGE: (f64, f64) = (0.5, 4.0);

/// Stretched-exponential fit L(t) ≈ A·exp[−(t/T₂)^x]; T₂ is the 1/e time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T2Estimate {
    /// Seconds.
    pub t2: f64,
    pub stretch: f64,
    pub amplitude: f64,
    /// 1σ from the fit covariance (or the bootstrap, once attached).
    pub t2_sigma: f64,
    pub stretch_sigma: f64,
    /// 16th/84th bootstrap percentiles of T₂, when computed.
    pub t2_lo: Option<f64>,
    pub t2_hi: Option<f64>,
    pub converged: bool,
}

/// First time the curve drops below `level`, by linear interpolation.
pub(crate) fn crossing(times: &[f64], values: &[f64], level: f64) -> Option<f64> {
    for k in 1..values.len() {
        if values[k] < level {
            let (t0, t1, v0, v1) = (times[k - 1], times[k], values[k - 1], values[k]);
            return Some(if v0 == v1 { t1 } else { t0 + (v0 - level) / (v0 - v1) * (t1 - t0) });
        }
    }
    None
}

/// Unweighted least-squares fit of A·exp[−(t/T₂)^x]. With `fixed_stretch`
/// the exponent is held at that value.
pub fn fit_t2(times: &[f64], values: &[f64], fixed_stretch: Option<f64>) -> Result<T2Estimate> {
    if times.len() != values.len() || times.len() < 6 {
        return Err(Error::Invalid("T2 fit needs at least 6 points".into()));
    }
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    let guess_t2 = crossing(times, values, values[0] / std::f64::consts::E).unwrap_or_else(|| {
        let end = values.last().copied().unwrap_or(1.0).clamp(1e-3, 0.999);
        t_max / (-end.ln()).sqrt()
    });
    let (x_lo, x_hi) = STRETCH_RANGE;
    let opts = LmOptions::default();
    let residuals = |a: f64, t2: f64, x: f64| -> Vec<f64> {
        times
            .iter()
            .zip(values)
            .map(|(&t, &v)| a * (-(t / t2).powf(x)).exp() - v)
            .collect()
    };
    let t2_bounds = (guess_t2 * 1e-3, guess_t2 * 1e3);
    let mut best: Option<(f64, T2Estimate)> = None;
    let mut failures = Vec::new();
    let starts: Vec<f64> = match fixed_stretch {
        Some(x) => vec![x],
        None => vec![1.0, 2.0, 3.0],
    };
    for x0 in starts {
        let outcome = match fixed_stretch {
            Some(x) => levenberg_marquardt(
                |p| residuals(p[0], p[1], x),
                &[values[0].clamp(0.01, 1.9), guess_t2],
                &[0.0, t2_bounds.0],
                &[2.0, t2_bounds.1],
                &opts,
            )
            .map(|o| {
                let n = o.params.len();
                (o.params[0], o.params[1], x, o.ssr, o.inverse_normal, o.residuals.len(), n, o.converged)
            }),
            None => levenberg_marquardt(
                |p| residuals(p[0], p[1], p[2]),
                &[values[0].clamp(0.01, 1.9), guess_t2, x0],
                &[0.0, t2_bounds.0, x_lo],
                &[2.0, t2_bounds.1, x_hi],
                &opts,
            )
            .map(|o| {
                let n = o.params.len();
                (o.params[0], o.params[1], o.params[2], o.ssr, o.inverse_normal, o.residuals.len(), n, o.converged)
            }),
        };
        match outcome {
            Ok((a, t2, x, ssr, inv, m, n, converged)) => {
                let dof = (m - n).max(1) as f64;
                let s2 = ssr / dof;
                let est = T2Estimate {
                    t2,
                    stretch: x,
                    amplitude: a,
                    t2_sigma: (inv[(1, 1)] * s2).sqrt(),
                    stretch_sigma: if n == 3 { (inv[(2, 2)] * s2).sqrt() } else { 0.0 },
                    t2_lo: None,
                    t2_hi: None,
                    converged,
                };
                if best.as_ref().is_none_or(|(b, _)| ssr < *b) {
                    best = Some((ssr, est));
                }
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    best.map(|(_, e)| e).ok_or_else(|| {
        Error::NonConvergence(format!("stretched-exponential fit failed: {}", failures.join("; ")))
    })
}

/// Bootstrap of T₂ over bath configurations: each resample draws whole
/// configurations (with their bath samples) with replacement and refits.
/// Returns the 16th and 84th percentiles.
pub fn mc_bootstrap_t2(
    times: &[f64],
    samples: &[Vec<Complex64>],
    samples_per_config: usize,
    fixed_stretch: Option<f64>,
    n_resamples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if samples_per_config == 0 || samples.len() % samples_per_config != 0 {
        return Err(Error::Invalid("samples must group evenly into configurations".into()));
    }
    let n_cfg = samples.len() / samples_per_config;
    let mut fits: Vec<f64> = (0..n_resamples)
        .into_par_iter()
        .filter_map(|k| {
            let mut rng = stream_rng(derive_seed(seed, k as u64 + 1), 0);
            let mut pick: Vec<Vec<Complex64>> = Vec::with_capacity(samples.len());
            for _ in 0..n_cfg {
                let c = rng.random_range(0..n_cfg);
                pick.extend_from_slice(&samples[c * samples_per_config..(c + 1) * samples_per_config]);
            }
            let (l, _) = mean_curve(&pick);
            fit_t2(times, &l, fixed_stretch).ok().map(|e| e.t2)
        })
        .collect();
    if fits.len() < n_resamples / 2 || fits.is_empty() {
        return Err(Error::NonConvergence("too many bootstrap refits failed".into()));
    }
    fits.sort_by(f64::total_cmp);
    Ok((percentile(&fits, 0.16), percentile(&fits, 0.84)))
}

pub(crate) fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// Time-grid search for a T₂ run: a coarse pass brackets the decay, then
/// the final grid spans `span` 1/e times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveGrid {
    /// Seconds.
    pub initial_t_max: f64,
    /// Seconds; no decay by this time is an error.
    pub max_t: f64,
    pub coarse_points: usize,
    pub final_points: usize,
    pub span: f64,
    pub n_bootstrap: usize,
    pub fixed_stretch: Option<f64>,
}

impl Default for AdaptiveGrid {
    fn default() -> Self {
        Self {
            initial_t_max: 200e-6,
            max_t: 10.0,
            coarse_points: 13,
            final_points: 41,
            span: 2.5,
            n_bootstrap: 200,
            fixed_stretch: None,
        }
    }
}

pub(crate) fn linspace(t_max: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| t_max * k as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone)]
pub struct T2Run {
    pub result: EnsembleResult,
    pub estimate: T2Estimate,
}

/// Ensemble coherence on an automatically chosen time grid plus its T₂ fit.
pub fn estimate_t2(
    configs: &[BathConfiguration],
    settings: &CceSettings,
    conditions: &ExperimentConditions,
    template: &SequenceTemplate,
    grid: &AdaptiveGrid,
) -> Result<T2Run> {
    if grid.coarse_points < 6 || grid.final_points < 6 || !(grid.initial_t_max > 0.0) || !(grid.span > 1.0) {
        return Err(Error::Invalid("adaptive grid needs ≥ 6 points, t_max > 0, span > 1".into()));
    }
    let run = |t_max: f64, n: usize| -> Result<EnsembleResult> {
        let mut s = settings.clone();
        s.time_grid = linspace(t_max, n);
        ensemble_average(configs, &s, conditions, template)
    };
    let mut t_max = grid.initial_t_max;
    let mut shrunk = false;
    let mut t_e = None;
    for _ in 0..40 {
        let coarse = run(t_max, grid.coarse_points)?;
        let l = &coarse.curve.l_abs;
        let times = &coarse.curve.times;
        match crossing(times, l, 1.0 / std::f64::consts::E) {
            None => {
                if t_max * 4.0 > grid.max_t {
                    return Err(Error::NonConvergence(format!(
                        "coherence does not decay within {:.3e} s",
                        grid.max_t
                    )));
                }
                t_max *= 4.0;
            }
            Some(te) if te < t_max / 6.0 && !shrunk => {
                t_max /= 4.0;
                shrunk = true;
            }
            Some(te) => {
                t_e = Some(te);
                break;
            }
        }
    }
    let t_e = t_e.ok_or_else(|| Error::NonConvergence("time-grid search did not settle".into()))?;
    let result = run(grid.span * t_e, grid.final_points)?;
    let mut estimate = fit_t2(&result.curve.times, &result.curve.l_abs, grid.fixed_stretch)?;
    if grid.n_bootstrap > 0 && result.diagnostics.n_configurations > 1 {
        let (lo, hi) = mc_bootstrap_t2(
            &result.curve.times,
            &result.samples,
            result.diagnostics.n_samples_per_configuration,
            grid.fixed_stretch,
            grid.n_bootstrap,
            settings.seed ^ 0x7432,
        )?;
        estimate.t2_lo = Some(lo);
        estimate.t2_hi = Some(hi);
        estimate.t2_sigma = 0.5 * (hi - lo);
    }
    Ok(T2Run { result, estimate })
}
