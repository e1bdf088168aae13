//! `simulate`: coherence curves and T₂ tables over temperatures and sequence variants.

use std::fmt::Write as _;

use clap::ValueEnum;
use serde::Serialize;

use crate::cce::{estimate_t2, CoherenceCurve};
use crate::config::RunConfig;
use crate::crystal::BathConfiguration;
use crate::error::Result;
use crate::sequences::SequenceTemplate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Hahn echo at every temperature.
    Hahn,
    /// Hahn plus XY8 for each `sweep.n_pulses`.
    Xy8,
    /// Generalized Hahn for each `sweep.theta_deg`.
    Id,
    /// The configured sequence at every temperature.
    SweepTemperature,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct T2Row {
    pub temperature_mK: f64,
    pub sequence: String,
    /// Refocusing pulses; 1 for Hahn-type echoes.
    pub n_pulses: usize,
    pub theta_deg: f64,
    pub f_sin2: f64,
    pub t2_us: f64,
    /// Bootstrap 16th/84th percentiles, when resampled.
    pub t2_lo_us: Option<f64>,
    pub t2_hi_us: Option<f64>,
    pub stretch: f64,
    pub amplitude: f64,
    pub converged: bool,
    pub divergent_clusters: usize,
    pub curve: String,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub rows: Vec<T2Row>,
    pub curves: Vec<(String, CoherenceCurve)>,
}

impl Simulation {
    pub fn t2_csv(&self) -> String {
        let mut out = String::from(
            "temperature_mK,sequence,n_pulses,theta_deg,f_sin2,t2_us,t2_lo_us,t2_hi_us,stretch,amplitude,converged,divergent_clusters\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.9e},{:.9e},{},{},{:.6},{:.6},{},{}",
                r.temperature_mK,
                r.sequence,
                r.n_pulses,
                r.theta_deg,
                r.f_sin2,
                r.t2_us,
                opt(r.t2_lo_us),
                opt(r.t2_hi_us),
                r.stretch,
                r.amplitude,
                r.converged,
                r.divergent_clusters
            );
        }
        out
    }

    pub fn t2_json(&self) -> String {
        serde_json::to_string_pretty(&self.rows).expect("rows serialize") + "\n"
    }

    pub fn row(&self, temperature_mk: f64, n_pulses: usize) -> Option<&T2Row> {
        self.rows
            .iter()
            .find(|r| r.temperature_mK == temperature_mk && r.n_pulses == n_pulses)
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.9e}")).unwrap_or_default()
}

fn variants(config: &RunConfig, mode: Mode) -> Result<Vec<SequenceTemplate>> {
    Ok(match mode {
        Mode::Hahn => vec![SequenceTemplate::Hahn],
        Mode::Xy8 => std::iter::once(SequenceTemplate::Hahn)
            .chain(config.sweep.n_pulses.iter().map(|&n| SequenceTemplate::Xy8 { n_pulses: n }))
            .collect(),
        Mode::Id => config
            .sweep
            .theta_deg
            .iter()
            .map(|t| SequenceTemplate::GeneralizedHahn { theta: t.to_radians() })
            .collect(),
        Mode::SweepTemperature => vec![config.template()?],
    })
}

fn short_label(t: &SequenceTemplate) -> String {
    match t {
        SequenceTemplate::Hahn => "hahn".into(),
        SequenceTemplate::GeneralizedHahn { theta } => format!("ghahn{}deg", trim(theta.to_degrees())),
        SequenceTemplate::Xy8 { n_pulses } => format!("xy8_N{n_pulses}"),
        SequenceTemplate::ThreePulse => "three_pulse".into(),
    }
}

fn trim(x: f64) -> String {
    let s = format!("{x:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Runs every (temperature, variant) job on the given configurations.
pub fn run(config: &RunConfig, mode: Mode, configs: &[BathConfiguration]) -> Result<Simulation> {
    let templates = variants(config, mode)?;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for t_mk in config.temperatures_mk() {
        let conditions = config.conditions_at(t_mk)?;
        for template in &templates {
            let run = estimate_t2(configs, &config.cce, &conditions, template, &config.t2)?;
            let name = format!("curve_{}mK_{}.csv", trim(t_mk), short_label(template));
            let (n_pulses, theta) = match *template {
                SequenceTemplate::Xy8 { n_pulses } => (n_pulses, std::f64::consts::PI),
                SequenceTemplate::GeneralizedHahn { theta } => (1, theta),
                _ => (1, std::f64::consts::PI),
            };
            let e = &run.estimate;
            rows.push(T2Row {
                temperature_mK: t_mk,
                sequence: template.label(),
                n_pulses,
                theta_deg: theta.to_degrees(),
                f_sin2: (theta / 2.0).sin().powi(2),
                t2_us: e.t2 * 1e6,
                t2_lo_us: e.t2_lo.map(|v| v * 1e6),
                t2_hi_us: e.t2_hi.map(|v| v * 1e6),
                stretch: e.stretch,
                amplitude: e.amplitude,
                converged: e.converged,
                divergent_clusters: run.result.diagnostics.divergent_clusters,
                curve: name.clone(),
            });
            curves.push((name, run.result.curve));
        }
    }
    Ok(Simulation { rows, curves })
}
