//! Synthetic datasets drawn from the registered models with Gaussian noise.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};

use super::{model_by_name, Dataset, Record};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    /// σ = level.
    Absolute(f64),
    /// σ = level · |model value|.
    Relative(f64),
}

/// Evaluates `model` (display units, full parameter vector in registry
/// order) at each point and adds noise. Each point is a list of
/// (axis, value) pairs.
pub fn generate(
    model: &str,
    params: &[f64],
    points: &[Vec<(&str, f64)>],
    noise: Noise,
    seed: u64,
) -> Result<Dataset> {
    let def = model_by_name(model).ok_or_else(|| Error::UnknownModel(model.to_string()))?;
    if params.len() != def.params.len() {
        return Err(Error::Invalid(format!(
            "{model} takes {} parameters",
            def.params.len()
        )));
    }
    let mut rng = stream_rng(seed, 3);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut records = Vec::with_capacity(points.len());
    for pt in points {
        let vars: BTreeMap<String, f64> = pt.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let mut r = Record {
            vars,
            observed: 0.0,
            sigma: 1.0,
        };
        let y = (def.eval)(params, &r);
        let sigma = match noise {
            Noise::Absolute(s) => s,
            Noise::Relative(s) => s * y.abs(),
        };
        r.observed = y + if sigma > 0.0 { sigma * unit.sample(&mut rng) } else { 0.0 };
        r.sigma = if sigma > 0.0 { sigma } else { 1.0 };
        records.push(r);
    }
    Ok(Dataset { records })
}

/// Log-spaced values from `a` to `b` inclusive.
pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|k| (la + (lb - la) * k as f64 / (n - 1).max(1) as f64).exp())
        .collect()
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| a + (b - a) * k as f64 / (n - 1).max(1) as f64).collect()
}

/// Three-pulse decays at each τ (μs) over log-spaced T_W (μs).
pub fn three_pulse_points(taus_us: &[f64], tws_us: &[f64]) -> Vec<Vec<(&'static str, f64)>> {
    taus_us
        .iter()
        .flat_map(|&tau| tws_us.iter().map(move |&tw| vec![("tau_us", tau), ("tw_us", tw)]))
        .collect()
}

pub fn axis_points(axis: &'static str, values: &[f64]) -> Vec<Vec<(&'static str, f64)>> {
    values.iter().map(|&v| vec![(axis, v)]).collect()
}
