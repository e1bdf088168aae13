//! Weighted nonlinear least squares over the model registry.

pub mod lm;
mod models;
pub mod synthetic;

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};
use lm::{levenberg_marquardt, LmOptions};
pub use models::{model_by_name, ModelDef, ParamSpec, CEO2_ER_DENSITY_M3, REGISTRY};

/// Recognized independent-variable columns.
pub const AXES: [&str; 5] = ["tau_us", "tw_us", "temperature_mK", "f_sin2", "t_us"];

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub vars: BTreeMap<String, f64>,
    pub observed: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
}

impl Dataset {
    /// Reads CSV with an `amplitude` column, an optional `sigma` column
    /// (default 1) and any of the [`AXES`].
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| headers.iter().position(|h| h == name);
        let amp = find("amplitude").ok_or_else(|| Error::MissingColumns(vec!["amplitude".into()]))?;
        let sigma = find("sigma");
        for h in headers.iter() {
            if h != "amplitude" && h != "sigma" && !AXES.contains(&h) {
                return Err(Error::Invalid(format!("unknown column '{h}'")));
            }
        }
        let axes: Vec<(String, usize)> = AXES
            .iter()
            .filter_map(|a| find(a).map(|i| (a.to_string(), i)))
            .collect();
        let mut records = Vec::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row?;
            let num = |i: usize| -> Result<f64> {
                row.get(i)
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Invalid(format!("row {}: column {} is not a number", line + 2, headers[i].to_string())))
            };
            let mut vars = BTreeMap::new();
            for (name, i) in &axes {
                vars.insert(name.clone(), num(*i)?);
            }
            let s = match sigma {
                Some(i) => num(i)?,
                None => 1.0,
            };
            if !(s > 0.0) {
                return Err(Error::Invalid(format!("row {}: sigma must be positive", line + 2)));
            }
            records.push(Record {
                vars,
                observed: num(amp)?,
                sigma: s,
            });
        }
        Ok(Self { records })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_csv(std::fs::File::open(path)?)
    }

    /// CSV text with the given axes, `amplitude` and `sigma`.
    pub fn to_csv(&self, axes: &[&str]) -> String {
        let mut out = axes.join(",");
        out.push_str(",amplitude,sigma\n");
        for r in &self.records {
            for a in axes {
                out.push_str(&format!("{:e},", r.vars.get(*a).copied().unwrap_or(f64::NAN)));
            }
            out.push_str(&format!("{:e},{:e}\n", r.observed, r.sigma));
        }
        out
    }

    pub fn has_axis(&self, name: &str) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.vars.contains_key(name))
    }

    /// (axis, observed) pairs sorted by the axis.
    pub fn series(&self, axis: &str) -> (Vec<f64>, Vec<f64>) {
        let mut pts: Vec<(f64, f64)> = self
            .records
            .iter()
            .map(|r| (r.vars.get(axis).copied().unwrap_or(f64::NAN), r.observed))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.into_iter().unzip()
    }

    pub fn require_axes(&self, axes: &[&str]) -> Result<()> {
        let missing: Vec<String> = axes
            .iter()
            .filter(|a| !self.has_axis(a))
            .map(|a| a.to_string())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingColumns(missing))
        }
    }

    fn canonical(&self) -> Self {
        let mut records = self.records.clone();
        records.sort_by(|a, b| {
            a.vars
                .values()
                .zip(b.vars.values())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.observed.total_cmp(&b.observed))
                .then(a.sigma.total_cmp(&b.sigma))
        });
        Self { records }
    }
}

type EvalFn = dyn Fn(&[f64], &Record) -> f64 + Send + Sync;

/// A model with every parameter either free (with bounds and a start) or fixed.
#[derive(Clone)]
pub struct FitProblem {
    pub model: String,
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub free: Vec<bool>,
    pub max_iter: usize,
    eval: Arc<EvalFn>,
}

impl std::fmt::Debug for FitProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FitProblem")
            .field("model", &self.model)
            .field("names", &self.names)
            .field("values", &self.values)
            .field("free", &self.free)
            .finish()
    }
}

/// Caller overrides applied on top of a model's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    /// Parameters held at the given values.
    #[serde(default)]
    pub fix: BTreeMap<String, f64>,
    /// Parameters freed from their default fixed value.
    #[serde(default)]
    pub free: Vec<String>,
    /// Starting values replacing the heuristic guesses.
    #[serde(default)]
    pub initial: BTreeMap<String, f64>,
    #[serde(default)]
    pub bounds: BTreeMap<String, (f64, f64)>,
    #[serde(default)]
    pub n_bootstrap: usize,
    #[serde(default)]
    pub seed: u64,
    /// Iteration cap; the optimizer default when unset.
    #[serde(default)]
    pub max_iter: Option<usize>,
}

impl FitProblem {
    pub fn from_model(model: &'static ModelDef, data: &Dataset, opts: &FitOptions) -> Result<Self> {
        data.require_axes(model.axes)?;
        let guess = (model.guess)(data);
        let mut p = Self {
            model: model.name.to_string(),
            names: model.params.iter().map(|s| s.name.to_string()).collect(),
            values: model
                .params
                .iter()
                .zip(&guess)
                .map(|(s, g)| s.fixed.unwrap_or(*g))
                .collect(),
            lo: model.params.iter().map(|s| s.lo).collect(),
            hi: model.params.iter().map(|s| s.hi).collect(),
            free: model.params.iter().map(|s| s.fixed.is_none()).collect(),
            max_iter: LmOptions::default().max_iter,
            eval: Arc::new(model.eval),
        };
        p.apply(opts)?;
        Ok(p)
    }

    pub fn by_name(name: &str, data: &Dataset, opts: &FitOptions) -> Result<Self> {
        let model = model_by_name(name).ok_or_else(|| Error::UnknownModel(name.to_string()))?;
        Self::from_model(model, data, opts)
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Invalid(format!("model {} has no parameter '{name}'", self.model)))
    }

    fn apply(&mut self, opts: &FitOptions) -> Result<()> {
        if let Some(n) = opts.max_iter {
            self.max_iter = n.max(1);
        }
        for name in &opts.free {
            let i = self.index(name)?;
            self.free[i] = true;
        }
        for (name, &(lo, hi)) in &opts.bounds {
            let i = self.index(name)?;
            self.lo[i] = lo;
            self.hi[i] = hi;
        }
        for (name, &v) in &opts.initial {
            let i = self.index(name)?;
            self.values[i] = v;
        }
        for (name, &v) in &opts.fix {
            let i = self.index(name)?;
            self.values[i] = v;
            self.free[i] = false;
        }
        for i in 0..self.names.len() {
            if self.free[i] {
                if !(self.lo[i] < self.hi[i]) {
                    return Err(Error::Invalid(format!("bounds of '{}' are empty", self.names[i])));
                }
                self.values[i] = self.values[i].clamp(self.lo[i], self.hi[i]);
            }
        }
        Ok(())
    }

    pub fn n_free(&self) -> usize {
        self.free.iter().filter(|f| **f).count()
    }

    fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut full = self.values.clone();
        let mut k = 0;
        for (i, f) in self.free.iter().enumerate() {
            if *f {
                full[i] = x[k];
                k += 1;
            }
        }
        full
    }

    pub fn predict(&self, params: &[f64], record: &Record) -> f64 {
        (self.eval)(params, record)
    }

    fn free_part(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.free).filter(|(_, f)| **f).map(|(x, _)| *x).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub value: f64,
    /// Covariance 1σ; 0 for fixed parameters.
    pub sigma: f64,
    /// 16th percentile (bootstrap) or value − σ.
    pub lo: f64,
    /// 84th percentile (bootstrap) or value + σ.
    pub hi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fixed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub params: BTreeMap<String, ParamEstimate>,
    pub chi2_red: f64,
    pub converged: bool,
    pub n_iter: usize,
    pub ssr: f64,
    /// Free-parameter names in covariance order.
    pub free_params: Vec<String>,
    pub covariance: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.params.get(name).map(|p| p.value)
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.params.get(name).map(|p| p.sigma)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "model {}  chi2_red {:.4}  converged {}  iterations {}\n",
            self.model, self.chi2_red, self.converged, self.n_iter
        );
        for (name, p) in &self.params {
            if p.fixed {
                s.push_str(&format!("  {name:<16} {:>14.6e}  (fixed)\n", p.value));
            } else {
                s.push_str(&format!("  {name:<16} {:>14.6e} ± {:.3e}\n", p.value, p.sigma));
            }
        }
        for w in &self.warnings {
            s.push_str(&format!("  warning: {w}\n"));
        }
        s
    }
}

fn residuals(problem: &FitProblem, data: &Dataset, observed: &[f64], full: &[f64]) -> Vec<f64> {
    data.records
        .iter()
        .zip(observed)
        .map(|(r, y)| (problem.predict(full, r) - y) / r.sigma)
        .collect()
}

fn minimize_observed(problem: &FitProblem, data: &Dataset, observed: &[f64], start: &[f64]) -> Result<lm::LmOutcome> {
    let n_free = problem.n_free();
    if n_free == 0 {
        return Err(Error::Invalid("no free parameters".into()));
    }
    if data.records.len() < n_free + 1 {
        return Err(Error::Invalid(format!(
            "{} records cannot fit {n_free} free parameters",
            data.records.len()
        )));
    }
    let lo = problem.free_part(&problem.lo);
    let hi = problem.free_part(&problem.hi);
    levenberg_marquardt(
        |x| residuals(problem, data, observed, &problem.expand(x)),
        start,
        &lo,
        &hi,
        &LmOptions {
            max_iter: problem.max_iter,
            ..LmOptions::default()
        },
    )
}

/// Weighted least-squares fit; covariance is scaled by the reduced χ².
pub fn minimize(problem: &FitProblem, data: &Dataset) -> Result<FitResult> {
    let observed: Vec<f64> = data.records.iter().map(|r| r.observed).collect();
    let out = minimize_observed(problem, data, &observed, &problem.free_part(&problem.values))?;
    let n_free = problem.n_free();
    let dof = data.records.len() - n_free;
    let chi2_red = out.ssr / dof as f64;
    let full = problem.expand(&out.params);
    let cov: Vec<Vec<f64>> = (0..n_free)
        .map(|i| (0..n_free).map(|j| out.inverse_normal[(i, j)] * chi2_red).collect())
        .collect();
    let mut params = BTreeMap::new();
    let mut k = 0;
    for (i, name) in problem.names.iter().enumerate() {
        let (sigma, fixed) = if problem.free[i] {
            k += 1;
            (cov[k - 1][k - 1].max(0.0).sqrt(), false)
        } else {
            (0.0, true)
        };
        params.insert(
            name.clone(),
            ParamEstimate {
                value: full[i],
                sigma,
                lo: full[i] - sigma,
                hi: full[i] + sigma,
                bootstrap_sigma: None,
                fixed,
            },
        );
    }
    Ok(FitResult {
        model: problem.model.clone(),
        params,
        chi2_red,
        converged: out.converged,
        n_iter: out.n_iter,
        ssr: out.ssr,
        free_params: problem
            .names
            .iter()
            .zip(&problem.free)
            .filter(|(_, f)| **f)
            .map(|(n, _)| n.clone())
            .collect(),
        covariance: cov,
        warnings: Vec::new(),
    })
}

/// Percentile intervals of the free parameters from residual resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapIntervals {
    /// name → (16th percentile, 84th percentile, (q84 − q16)/2).
    pub intervals: BTreeMap<String, (f64, f64, f64)>,
    pub n_failed: usize,
}

/// Residual bootstrap around the fit in `result`: weighted residuals are
/// resampled with replacement, added back to the fitted curve and refit.
pub fn bootstrap(
    problem: &FitProblem,
    data: &Dataset,
    result: &FitResult,
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapIntervals> {
    if n_resamples < 100 {
        return Err(Error::Invalid("bootstrap needs at least 100 resamples".into()));
    }
    let full: Vec<f64> = problem.names.iter().map(|n| result.params[n].value).collect();
    let fitted: Vec<f64> = data.records.iter().map(|r| problem.predict(&full, r)).collect();
    let weighted: Vec<f64> = data
        .records
        .iter()
        .zip(&fitted)
        .map(|(r, f)| (r.observed - f) / r.sigma)
        .collect();
    let start = problem.free_part(&full);
    let fits: Vec<Option<Vec<f64>>> = (0..n_resamples)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(derive_seed(seed, k as u64 + 1), 2);
            let observed: Vec<f64> = data
                .records
                .iter()
                .zip(&fitted)
                .map(|(r, f)| f + r.sigma * weighted[rng.random_range(0..weighted.len())])
                .collect();
            minimize_observed(problem, data, &observed, &start).ok().map(|o| o.params)
        })
        .collect();
    let ok: Vec<&Vec<f64>> = fits.iter().flatten().collect();
    if ok.len() < n_resamples / 2 {
        return Err(Error::NonConvergence("most bootstrap refits failed".into()));
    }
    let mut intervals = BTreeMap::new();
    for (j, name) in result.free_params.iter().enumerate() {
        let mut v: Vec<f64> = ok.iter().map(|p| p[j]).collect();
        v.sort_by(f64::total_cmp);
        let (q16, q84) = (
            crate::cce::percentile(&v, 0.16),
            crate::cce::percentile(&v, 0.84),
        );
        intervals.insert(name.clone(), (q16, q84, 0.5 * (q84 - q16)));
    }
    Ok(BootstrapIntervals {
        intervals,
        n_failed: n_resamples - ok.len(),
    })
}

/// Fit plus optional bootstrap, per the options.
pub fn fit(model: &str, data: &Dataset, opts: &FitOptions) -> Result<FitResult> {
    let problem = FitProblem::by_name(model, data, opts)?;
    let mut result = minimize(&problem, data)?;
    attach_bootstrap(&problem, data, &mut result, opts)?;
    Ok(result)
}

fn attach_bootstrap(problem: &FitProblem, data: &Dataset, result: &mut FitResult, opts: &FitOptions) -> Result<()> {
    if opts.n_bootstrap == 0 {
        return Ok(());
    }
    let b = bootstrap(problem, data, result, opts.n_bootstrap, opts.seed)?;
    for (name, (lo, hi, s)) in b.intervals {
        let p = result.params.get_mut(&name).expect("free parameter present");
        p.lo = lo;
        p.hi = hi;
        p.bootstrap_sigma = Some(s);
    }
    if b.n_failed > 0 {
        result
            .warnings
            .push(format!("{} of {} bootstrap refits failed", b.n_failed, opts.n_bootstrap));
    }
    Ok(())
}

/// Three-pulse echo decays at several τ fitted together: Γ0, Γ_SD, R and T1
/// shared, one amplitude per τ group (or a single shared amplitude).
///
/// With per-group amplitudes, exp(−2πΓ0τ) is indistinguishable from the
/// amplitude, so Γ0 stays fixed unless explicitly freed.
pub fn global_fit_three_pulse(data: &Dataset, shared_amplitude: bool, opts: &FitOptions) -> Result<FitResult> {
    let model = model_by_name("eq1_three_pulse").expect("registered");
    data.require_axes(model.axes)?;
    let data = data.canonical();
    let mut taus: Vec<f64> = data.records.iter().map(|r| r.vars["tau_us"]).collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    if taus.len() < 2 || shared_amplitude {
        let mut result = {
            let problem = FitProblem::from_model(model, &data, opts)?;
            let mut r = minimize(&problem, &data)?;
            attach_bootstrap(&problem, &data, &mut r, opts)?;
            r
        };
        if taus.len() < 2 {
            result
                .warnings
                .push("single τ group: fitted as one curve".into());
        }
        return Ok(result);
    }
    let base = FitProblem::from_model(model, &data, opts)?;
    // Parameter layout: the model's own list with a0 removed, then a0 per group.
    let a0_index = model.index_of("a0").expect("a0");
    let mut names: Vec<String> = Vec::new();
    let mut values = Vec::new();
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    let mut free = Vec::new();
    for i in 0..base.names.len() {
        if i != a0_index {
            names.push(base.names[i].clone());
            values.push(base.values[i]);
            lo.push(base.lo[i]);
            hi.push(base.hi[i]);
            free.push(base.free[i]);
        }
    }
    let n_shared = names.len();
    for (g, &tau) in taus.iter().enumerate() {
        let first = data
            .records
            .iter()
            .filter(|r| r.vars["tau_us"] == tau)
            .min_by(|a, b| a.vars["tw_us"].total_cmp(&b.vars["tw_us"]))
            .map_or(1.0, |r| r.observed);
        names.push(format!("a0_tau{}", g + 1));
        values.push(opts.initial.get(&format!("a0_tau{}", g + 1)).copied().unwrap_or(first.max(1e-9)));
        lo.push(base.lo[a0_index]);
        hi.push(base.hi[a0_index]);
        free.push(true);
    }
    let taus_eval = taus.clone();
    let eval = move |p: &[f64], r: &Record| -> f64 {
        let tau = r.vars["tau_us"];
        let g = taus_eval.iter().position(|t| *t == tau).unwrap_or(0);
        let mut full = Vec::with_capacity(n_shared + 1);
        full.push(p[n_shared + g]);
        full.extend_from_slice(&p[..n_shared]);
        (model.eval)(&full, r)
    };
    let problem = FitProblem {
        model: model.name.to_string(),
        names,
        values,
        lo,
        hi,
        free,
        max_iter: opts.max_iter.unwrap_or(LmOptions::default().max_iter).max(1),
        eval: Arc::new(eval),
    };
    let mut result = minimize(&problem, &data)?;
    attach_bootstrap(&problem, &data, &mut result, opts)?;
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemperatureLaw {
    GammaSdSech2,
    RateEq2,
}

impl TemperatureLaw {
    pub fn model_name(self) -> &'static str {
        match self {
            TemperatureLaw::GammaSdSech2 => "gamma_sd_sech2",
            TemperatureLaw::RateEq2 => "rate_eq2",
        }
    }
}

/// Fits Γ_SD(T) or R(T) data (temperature in mK); needs ≥ 4 distinct temperatures.
pub fn fit_temperature_laws(data: &Dataset, law: TemperatureLaw, opts: &FitOptions) -> Result<FitResult> {
    data.require_axes(&["temperature_mK"])?;
    let mut temps: Vec<f64> = data.records.iter().map(|r| r.vars["temperature_mK"]).collect();
    temps.sort_by(f64::total_cmp);
    temps.dedup();
    if temps.len() < 4 {
        return Err(Error::Degenerate(format!(
            "{} distinct temperatures; at least 4 are needed",
            temps.len()
        )));
    }
    fit(law.model_name(), &data.canonical(), opts)
}

#[cfg(test)]
mod tests;
