//! Canned pipelines for each figure: synthetic data plus a fit where the
//! figure shows measurements, CCE at desk-scale settings where it shows theory.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::cce::{AdaptiveGrid, CceSettings};
use crate::config::{Conditions, RunConfig, Sweep};
use crate::crystal::{LatticeSpec, SpeciesSpec, Sublattice};
use crate::error::{Error, Result};
use crate::fitter::synthetic::{axis_points, generate, linspace, logspace, three_pulse_points, Noise};
use crate::fitter::{fit, fit_temperature_laws, global_fit_three_pulse, model_by_name, FitOptions, FitResult, Record, TemperatureLaw};
use crate::fitter::CEO2_ER_DENSITY_M3;
use crate::sequences::{SequenceKind, SequenceSpec};

use super::simulate::{self, Mode, Simulation};

pub const FIGURES: [&str; 12] = ["2a", "2b", "2c", "2d", "2e", "3a", "3b", "3c", "3d", "4a", "4b", "4c"];

/// Reference numbers quoted with the figures.
pub mod reference {
    pub const HAHN_T2_US: f64 = 38.8;
    pub const T1_LONG_MS: f64 = 119.3;
    pub const T1_SHORT_MS: f64 = 8.0;
    pub const T2_SD_US: f64 = 54.0;
    pub const T2_ID_US: f64 = 158.9;
    pub const XY8_64_T2_US: f64 = 176.4;
    pub const GAMMA_SD_KHZ: f64 = 82.8;
    pub const FLIP_RATE_PER_MS: f64 = 3.2;
    pub const GAMMA_MAX_KHZ: f64 = 706.7;
    pub const G_S_SECH2: f64 = 6.17;
    pub const G_S_RATE: f64 = 7.34;
    pub const FIELD_MT: f64 = 58.9;
    pub const T_BATH_MK: f64 = 77.2;
    pub const O17_LIMITED_T2_US: f64 = 24_000.0;
    pub const G2_LIMITED_T2_US: f64 = 4_000.0;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub quantity: String,
    pub unit: String,
    pub reference: f64,
    pub reproduced: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Reproduction {
    pub files: Vec<(String, Vec<u8>)>,
    pub comparison: Vec<ComparisonRow>,
    /// Resolved configurations of the CCE runs, by name.
    pub configs: Vec<(String, RunConfig)>,
}

impl Reproduction {
    fn file(&mut self, name: &str, text: String) {
        self.files.push((name.to_string(), text.into_bytes()));
    }

    fn compare(&mut self, quantity: &str, unit: &str, reference: f64, reproduced: f64) {
        self.comparison.push(ComparisonRow {
            quantity: quantity.into(),
            unit: unit.into(),
            reference,
            reproduced,
        });
    }

    fn fit_json(&mut self, name: &str, r: &FitResult) -> Result<()> {
        self.file(name, r.to_json()? + "\n");
        Ok(())
    }

    fn simulation(&mut self, prefix: &str, sim: &Simulation) {
        for (name, curve) in &sim.curves {
            self.file(&format!("{prefix}{name}"), curve.to_csv());
        }
        self.file(&format!("{prefix}t2.csv"), sim.t2_csv());
        self.file(&format!("{prefix}t2.json"), sim.t2_json());
    }

    pub fn comparison_csv(&self) -> String {
        let mut out = String::from("quantity,unit,reference,reproduced,ratio\n");
        for r in &self.comparison {
            let _ = writeln!(
                out,
                "{},{},{},{:.6e},{:.4}",
                r.quantity,
                r.unit,
                r.reference,
                r.reproduced,
                r.reproduced / r.reference
            );
        }
        out
    }
}

/// Bath compositions used by the theory figures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bath {
    /// 2 ppm Er on cation sites.
    Erbium,
    /// 2 ppm Er plus ¹⁷O at natural abundance.
    ErbiumOxygen,
    /// ¹⁷O only; the Er central spin has no Er neighbours.
    Oxygen,
    /// ¹⁷O plus `ppm` of g = 2 impurities.
    OxygenG2 { ppm: f64 },
}

/// ¹⁷O fraction of anion sites (0.04 %).
pub const O17_ABUNDANCE: f64 = 4e-4;

/// Desk-scale settings: a few minutes per sweep on one core.
pub fn desk_config(bath: Bath, temperatures_mk: &[f64], seed: u64) -> RunConfig {
    let mut oxygen = SpeciesSpec::oxygen17(O17_ABUNDANCE);
    oxygen.radius_nm = Some(20.0);
    let (radius, species, n_configs, n_samples) = match bath {
        Bath::Erbium => (75.0, vec![SpeciesSpec::erbium(2e-6)], 10, 40),
        Bath::ErbiumOxygen => (75.0, vec![SpeciesSpec::erbium(2e-6), oxygen], 10, 40),
        Bath::Oxygen => (100.0, vec![SpeciesSpec::erbium(0.0), oxygen], 6, 30),
        Bath::OxygenG2 { ppm } => {
            let mut g2 = SpeciesSpec::isotropic("g2", 2.0, ppm * 1e-6, Sublattice::Cation);
            g2.radius_nm = Some(100.0);
            (100.0, vec![SpeciesSpec::erbium(0.0), oxygen, g2], 6, 30)
        }
    };
    let cce = CceSettings {
        n_configurations: n_configs,
        n_bath_samples: n_samples,
        bath_radius_nm: 75.0,
        seed,
        ..CceSettings::default()
    };
    let (single, list) = match temperatures_mk {
        [t] => (Some(*t), None),
        ts => (None, Some(ts.to_vec())),
    };
    RunConfig {
        seed,
        output_dir: PathBuf::from("out"),
        bath_dir: None,
        lattice: LatticeSpec::ceo2(radius),
        species,
        central: Some("Er".into()),
        conditions: Conditions {
            field_mT: reference::FIELD_MT,
            temperature_mK: single,
            temperatures_mK: list,
        },
        cce,
        sequence: SequenceSpec {
            kind: SequenceKind::Hahn,
            tau_us: None,
            theta_deg: None,
            n_pulses: None,
            tw_us: None,
        },
        t2: AdaptiveGrid::default(),
        sweep: Sweep::default(),
    }
}

/// Runs a desk-scale CCE job; the configuration is validated first.
pub fn simulate_desk(config: &RunConfig, mode: Mode) -> Result<Simulation> {
    config.validate()?;
    simulate::run(config, mode, &config.sample_configurations()?)
}

fn fit_opts(seed: u64) -> FitOptions {
    FitOptions {
        n_bootstrap: 200,
        seed,
        ..FitOptions::default()
    }
}

pub fn reproduce(figure: &str, seed: u64) -> Result<Reproduction> {
    let mut out = Reproduction::default();
    match figure {
        "2a" => {
            let t = linspace(0.0, 160.0, 41);
            let d = generate("stretched_exp", &[1.0, reference::HAHN_T2_US, 1.0], &axis_points("t_us", &t), Noise::Absolute(0.01), seed)?;
            let r = fit("stretched_exp", &d, &fit_opts(seed))?;
            out.file("data.csv", d.to_csv(&["t_us"]));
            out.fit_json("fit.json", &r)?;
            out.compare("T2", "us", reference::HAHN_T2_US, r.value("t2_us").unwrap_or(f64::NAN));
        }
        "2b" => {
            let taus = logspace(100.0, 600_000.0, 40);
            let params = [0.7, reference::T1_LONG_MS, 0.3, reference::T1_SHORT_MS, 0.0];
            let d = generate("t1_biexp", &params, &axis_points("tau_us", &taus), Noise::Absolute(0.003), seed)?;
            let r = fit("t1_biexp", &d, &fit_opts(seed))?;
            out.file("data.csv", d.to_csv(&["tau_us"]));
            out.fit_json("fit.json", &r)?;
            out.compare("T1_long", "ms", reference::T1_LONG_MS, r.value("t1_long_ms").unwrap_or(f64::NAN));
            out.compare("T1_short", "ms", reference::T1_SHORT_MS, r.value("t1_short_ms").unwrap_or(f64::NAN));
        }
        "2c" => {
            let f = linspace(0.1, 1.0, 7);
            let truth = [1e3 / reference::T2_SD_US, 1e3 / reference::T2_ID_US];
            let d = generate("id_line", &truth, &axis_points("f_sin2", &f), Noise::Relative(0.02), seed)?;
            let r = fit("id_line", &d, &fit_opts(seed))?;
            let (sd, id) = (r.value("rate_sd_per_ms").unwrap_or(f64::NAN), r.value("rate_id_per_ms").unwrap_or(f64::NAN));
            let mut line = String::from("f_sin2,inv_t2_per_ms,fit_inv_t2_per_ms\n");
            for rec in &d.records {
                let x = rec.vars["f_sin2"];
                let _ = writeln!(line, "{x:.6},{:.9e},{:.9e}", rec.observed, sd + id * x);
            }
            out.file("data.csv", d.to_csv(&["f_sin2"]));
            out.file("line.csv", line);
            out.fit_json("fit.json", &r)?;
            out.compare("T2_SD (intercept)", "us", reference::T2_SD_US, 1e3 / sd);
            out.compare("T2_ID (slope)", "us", reference::T2_ID_US, 1e3 / id);
            out.compare("T2 at f = 1", "us", reference::HAHN_T2_US, 1e3 / (sd + id));
        }
        "2d" => {
            let mut cfg = desk_config(Bath::Erbium, &[reference::T_BATH_MK], seed);
            cfg.sweep.n_pulses = vec![8, 16, 32, 64];
            let sim = simulate_desk(&cfg, Mode::Xy8)?;
            out.simulation("", &sim);
            let t64 = sim.row(reference::T_BATH_MK, 64).map_or(f64::NAN, |r| r.t2_us);
            out.compare("T2 XY8 N = 64", "us", reference::XY8_64_T2_US, t64);
            out.configs.push(("xy8".into(), cfg));
        }
        "2e" => {
            let params = [1.0, 3.0, reference::GAMMA_SD_KHZ, reference::FLIP_RATE_PER_MS, reference::T1_LONG_MS];
            let tws = logspace(10.0, 300_000.0, 30);
            let d = generate("eq1_three_pulse", &params, &three_pulse_points(&[0.9, 1.5, 2.0, 3.0, 4.0], &tws), Noise::Absolute(0.01), seed)?;
            let r = global_fit_three_pulse(&d, false, &fit_opts(seed))?;
            out.file("data.csv", d.to_csv(&["tau_us", "tw_us"]));
            out.fit_json("fit.json", &r)?;
            out.compare("Gamma_SD", "kHz", reference::GAMMA_SD_KHZ, r.value("gamma_sd_khz").unwrap_or(f64::NAN));
            out.compare("R", "1/ms", reference::FLIP_RATE_PER_MS, r.value("r_per_ms").unwrap_or(f64::NAN));
            out.compare("T1", "ms", reference::T1_LONG_MS, r.value("t1_ms").unwrap_or(f64::NAN));
        }
        "3a" => {
            let params = [reference::GAMMA_MAX_KHZ, reference::G_S_SECH2, reference::FIELD_MT];
            out.file("curve.csv", law_curve("gamma_sd_sech2", &params, "gamma_sd_khz"));
            let d = generate("gamma_sd_sech2", &params, &axis_points("temperature_mK", &linspace(60.0, 500.0, 6)), Noise::Relative(0.05), seed)?;
            let r = fit_temperature_laws(&d, TemperatureLaw::GammaSdSech2, &fit_opts(seed))?;
            out.file("data.csv", d.to_csv(&["temperature_mK"]));
            out.fit_json("fit.json", &r)?;
            out.compare("Gamma_MAX", "kHz", reference::GAMMA_MAX_KHZ, r.value("gamma_max_khz").unwrap_or(f64::NAN));
            out.compare("g_s", "", reference::G_S_SECH2, r.value("g_s").unwrap_or(f64::NAN));
        }
        "3b" => {
            let params = rate_params();
            out.file("curve.csv", law_curve("rate_eq2", &params, "r_per_ms"));
            let d = generate("rate_eq2", &params, &axis_points("temperature_mK", &linspace(60.0, 500.0, 8)), Noise::Relative(0.05), seed)?;
            let r = fit_temperature_laws(&d, TemperatureLaw::RateEq2, &fit_opts(seed))?;
            out.file("data.csv", d.to_csv(&["temperature_mK"]));
            out.fit_json("fit.json", &r)?;
            out.compare("g_s", "", reference::G_S_RATE, r.value("g_s").unwrap_or(f64::NAN));
        }
        "3c" => {
            let cfg = desk_config(Bath::ErbiumOxygen, &[20.0, 40.0, reference::T_BATH_MK, 100.0, 200.0, 400.0], seed);
            let sim = simulate_desk(&cfg, Mode::Hahn)?;
            out.simulation("", &sim);
            let t = sim.row(reference::T_BATH_MK, 1).map_or(f64::NAN, |r| r.t2_us);
            out.compare("T2_SD at 77.2 mK", "us", reference::T2_SD_US, t);
            out.configs.push(("sd".into(), cfg));
        }
        "3d" => {
            let temps = [reference::T_BATH_MK, 100.0, 200.0, 400.0];
            let cfg = desk_config(Bath::ErbiumOxygen, &temps, seed);
            let sd = simulate_desk(&cfg, Mode::Hahn)?;
            let total = simulate_desk(&cfg, Mode::Id)?;
            out.simulation("sd_", &sd);
            out.simulation("total_", &total);
            let mut table = String::from("temperature_mK,t2_sd_us,t2_us,t2_id_us\n");
            for &t in &temps {
                let a = sd.row(t, 1).map_or(f64::NAN, |r| r.t2_us);
                let b = total.row(t, 1).map_or(f64::NAN, |r| r.t2_us);
                let _ = writeln!(table, "{t},{a:.9e},{b:.9e},{:.9e}", 1.0 / (1.0 / b - 1.0 / a));
            }
            out.file("sd_id.csv", table);
            let a = sd.row(reference::T_BATH_MK, 1).map_or(f64::NAN, |r| r.t2_us);
            let b = total.row(reference::T_BATH_MK, 1).map_or(f64::NAN, |r| r.t2_us);
            out.compare("T2_SD at 77.2 mK", "us", reference::T2_SD_US, a);
            out.compare("T2_ID at 77.2 mK", "us", reference::T2_ID_US, 1.0 / (1.0 / b - 1.0 / a));
            out.compare("T2 at 77.2 mK", "us", reference::HAHN_T2_US, b);
            out.configs.push(("sd_id".into(), cfg));
        }
        "4a" => {
            let cfg = desk_config(Bath::Oxygen, &[20.0, 40.0, 60.0, 80.0, 100.0], seed);
            let sim = simulate_desk(&cfg, Mode::Hahn)?;
            out.simulation("", &sim);
            let t = sim.row(20.0, 1).map_or(f64::NAN, |r| r.t2_us);
            out.compare("T2_SD at 20 mK, 17O bath", "us", reference::O17_LIMITED_T2_US, t);
            out.configs.push(("oxygen".into(), cfg));
        }
        "4b" => {
            let base = desk_config(Bath::Oxygen, &[20.0], seed);
            let sim = simulate_desk(&base, Mode::Hahn)?;
            out.simulation("o17_", &sim);
            out.configs.push(("oxygen".into(), base));
            for ppm in [0.5, 1.0] {
                let cfg = desk_config(Bath::OxygenG2 { ppm }, &[20.0], seed);
                let sim = simulate_desk(&cfg, Mode::Hahn)?;
                let prefix = format!("g2_{ppm}ppm_");
                out.simulation(&prefix, &sim);
                if ppm == 1.0 {
                    let t = sim.row(20.0, 1).map_or(f64::NAN, |r| r.t2_us);
                    out.compare("T2_SD at 20 mK, 17O + 1 ppm g=2", "us", reference::G2_LIMITED_T2_US, t);
                }
                out.configs.push((format!("g2_{ppm}ppm"), cfg));
            }
        }
        "4c" => {
            let temps = [20.0, 40.0, 60.0, 100.0];
            let base = desk_config(Bath::Oxygen, &temps, seed);
            let with = desk_config(Bath::OxygenG2 { ppm: 1.0 }, &temps, seed);
            let a = simulate_desk(&base, Mode::Hahn)?;
            let b = simulate_desk(&with, Mode::Hahn)?;
            out.simulation("o17_", &a);
            out.simulation("g2_1ppm_", &b);
            let mut table = String::from("temperature_mK,t2_o17_us,t2_g2_us,reduction\n");
            for &t in &temps {
                let x = a.row(t, 1).map_or(f64::NAN, |r| r.t2_us);
                let y = b.row(t, 1).map_or(f64::NAN, |r| r.t2_us);
                let _ = writeln!(table, "{t},{x:.9e},{y:.9e},{:.4}", x / y);
            }
            out.file("impurity_effect.csv", table);
            let x = b.row(20.0, 1).map_or(f64::NAN, |r| r.t2_us);
            out.compare("T2_SD at 20 mK, 17O + 1 ppm g=2", "us", reference::G2_LIMITED_T2_US, x);
            out.configs.push(("oxygen".into(), base));
            out.configs.push(("g2_1ppm".into(), with));
        }
        other => {
            return Err(Error::Invalid(format!(
                "unknown figure `{other}`; expected one of {}",
                FIGURES.join(", ")
            )))
        }
    }
    let table = out.comparison_csv();
    out.file("comparison.csv", table);
    Ok(out)
}

/// Flip-rate law parameters with α_ff scaled so that R(77.2 mK) is the quoted flip rate.
pub fn rate_params() -> Vec<f64> {
    let def = model_by_name("rate_eq2").expect("registered");
    let mut p = vec![1.0, 0.0, reference::G_S_RATE, 6.8, CEO2_ER_DENSITY_M3, 1e6, reference::FIELD_MT];
    let unit = (def.eval)(&p, &at_temperature(reference::T_BATH_MK));
    p[0] = reference::FLIP_RATE_PER_MS / unit;
    p
}

fn at_temperature(t_mk: f64) -> Record {
    Record {
        vars: [("temperature_mK".to_string(), t_mk)].into_iter().collect(),
        observed: 0.0,
        sigma: 1.0,
    }
}

fn law_curve(model: &str, params: &[f64], column: &str) -> String {
    let def = model_by_name(model).expect("registered");
    let mut out = format!("temperature_mK,{column}\n");
    for t in linspace(60.0, 500.0, 89) {
        let _ = writeln!(out, "{t:.3},{:.9e}", (def.eval)(params, &at_temperature(t)));
    }
    out
}
