//! Model registry: display-unit wrappers around the analytic laws.

use crate::diffusion_model::{
    gamma_sd_of_t, id_line, rate_of_t, t1_biexponential, three_pulse_amplitude, IdLineParams,
    RateModelParams, SechModelParams, T1BiexpParams, T1Convention, ThreePulseParams,
};

use super::{Dataset, Record};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
    /// Held fixed at this value unless the caller frees it.
    pub fixed: Option<f64>,
}

const fn free(name: &'static str, lo: f64, hi: f64) -> ParamSpec {
    ParamSpec { name, lo, hi, fixed: None }
}

const fn fixed(name: &'static str, lo: f64, hi: f64, value: f64) -> ParamSpec {
    ParamSpec {
        name,
        lo,
        hi,
        fixed: Some(value),
    }
}

pub struct ModelDef {
    pub name: &'static str,
    pub axes: &'static [&'static str],
    /// What the `amplitude` column holds.
    pub observable: &'static str,
    pub params: &'static [ParamSpec],
    pub eval: fn(&[f64], &Record) -> f64,
    pub guess: fn(&Dataset) -> Vec<f64>,
}

impl ModelDef {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }
}

pub const CEO2_ER_DENSITY_M3: f64 = 2e-6 * 4.0 / (0.5411e-9 * 0.5411e-9 * 0.5411e-9);

fn axis(r: &Record, name: &str) -> f64 {
    r.vars.get(name).copied().unwrap_or(f64::NAN)
}

fn stretched_eval(p: &[f64], r: &Record) -> f64 {
    p[0] * (-(axis(r, "t_us") / p[1]).powf(p[2])).exp()
}

fn stretched_guess(d: &Dataset) -> Vec<f64> {
    let (t, y) = d.series("t_us");
    let a = y.first().copied().unwrap_or(1.0).clamp(0.05, 1.9);
    let t2 = crate::cce::t2_crossing(&t, &y, a / std::f64::consts::E)
        .unwrap_or_else(|| t.iter().cloned().fold(0.0, f64::max).max(1e-3));
    vec![a, t2, 1.5]
}

fn eq1_eval(p: &[f64], r: &Record) -> f64 {
    let params = ThreePulseParams {
        a0: p[0],
        gamma0: p[1] * 1e3,
        gamma_sd: p[2] * 1e3,
        rate: p[3] * 1e3,
        t1: p[4] * 1e-3,
    };
    three_pulse_amplitude(&params, axis(r, "tau_us") * 1e-6, axis(r, "tw_us") * 1e-6)
}

/// Γ_SD from the early-T_W drop of the largest-τ curve, R from its knee,
/// T1 from the late slope.
fn eq1_guess(d: &Dataset) -> Vec<f64> {
    let tau_max = d.records.iter().map(|r| axis(r, "tau_us")).fold(f64::MIN, f64::max);
    let mut pts: Vec<(f64, f64)> = d
        .records
        .iter()
        .filter(|r| axis(r, "tau_us") == tau_max)
        .map(|r| (axis(r, "tw_us"), r.observed))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let a0 = pts.first().map_or(1.0, |p| p.1).max(1e-6);
    let n = pts.len();
    let (tw_a, y_a) = pts[n.saturating_sub(2).min(n - 1)];
    let (tw_b, y_b) = pts[n - 1];
    let t1_ms = if y_b > 0.0 && y_a > y_b && tw_b > tw_a {
        ((tw_b - tw_a) / (y_a / y_b).ln() * 1e-3).clamp(1e-2, 1e5)
    } else {
        100.0
    };
    // Plateau after removing the T1 decay, relative to the first point.
    let tail = |tw: f64, y: f64| (y / a0) * (tw * 1e-3 / t1_ms).exp();
    let plateau = tail(tw_b, y_b).clamp(1e-9, 0.999_999);
    let gamma_sd_khz = (-plateau.ln() / (std::f64::consts::PI * tau_max * 1e-6) * 1e-3).max(1.0);
    let half = 0.5 * (1.0 + plateau);
    let knee = pts
        .iter()
        .find(|&&(tw, y)| tail(tw, y) < half)
        .map_or(1e3, |p| p.0.max(1e-3));
    let r_per_ms = (std::f64::consts::LN_2 / knee * 1e3).clamp(1e-3, 1e3);
    vec![a0, 0.0, gamma_sd_khz, r_per_ms, t1_ms]
}

fn sech2_eval(p: &[f64], r: &Record) -> f64 {
    let params = SechModelParams {
        gamma_max: p[0],
        g_s: p[1],
        field_t: p[2] * 1e-3,
    };
    gamma_sd_of_t(&params, axis(r, "temperature_mK") * 1e-3)
}

fn sech2_guess(d: &Dataset) -> Vec<f64> {
    let max = d.records.iter().map(|r| r.observed).fold(0.0, f64::max);
    vec![1.2 * max.max(1e-9), 6.0, 58.9]
}

fn rate_eval(p: &[f64], r: &Record) -> f64 {
    let params = RateModelParams {
        alpha_ff: p[0],
        alpha_ph: p[1],
        g_s: p[2],
        g_s_perp: p[3],
        n_s: p[4],
        gamma_s: p[5],
        field_t: p[6] * 1e-3,
    };
    rate_of_t(&params, axis(r, "temperature_mK") * 1e-3) * 1e-3
}

fn rate_guess(d: &Dataset) -> Vec<f64> {
    let spec = RATE_EQ2;
    let (g_perp, n_s, gamma_s, b0) = (
        spec[3].fixed.unwrap(),
        spec[4].fixed.unwrap(),
        spec[5].fixed.unwrap(),
        spec[6].fixed.unwrap(),
    );
    let g_s = 7.0;
    let hottest = d
        .records
        .iter()
        .max_by(|a, b| axis(a, "temperature_mK").total_cmp(&axis(b, "temperature_mK")));
    let alpha = hottest.map_or(1e-36, |r| {
        let unit = RateModelParams {
            alpha_ff: 1.0,
            alpha_ph: 0.0,
            g_s,
            g_s_perp: g_perp,
            n_s,
            gamma_s,
            field_t: b0 * 1e-3,
        };
        (r.observed * 1e3 / rate_of_t(&unit, axis(r, "temperature_mK") * 1e-3)).max(1e-60)
    });
    vec![alpha, 0.0, g_s, g_perp, n_s, gamma_s, b0]
}

fn id_eval(p: &[f64], r: &Record) -> f64 {
    id_line(
        &IdLineParams {
            rate_sd: p[0],
            rate_id: p[1],
        },
        axis(r, "f_sin2"),
    )
}

/// Intercept and slope of the ordinary straight line.
fn id_guess(d: &Dataset) -> Vec<f64> {
    let (f, y) = d.series("f_sin2");
    let n = f.len() as f64;
    let (mf, my) = (f.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = f.iter().map(|x| (x - mf) * (x - mf)).sum();
    let sxy: f64 = f.iter().zip(&y).map(|(x, v)| (x - mf) * (v - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    vec![(my - slope * mf).max(1e-9), slope.max(1e-9)]
}

fn t1_eval(p: &[f64], r: &Record) -> f64 {
    let params = T1BiexpParams {
        a_long: p[0],
        t1_long: p[1],
        a_short: p[2],
        t1_short: p[3],
        offset: p[4],
    };
    t1_biexponential(&params, axis(r, "tau_us") * 1e-3, T1Convention::Decay)
}

/// Long component from the late-time log slope, short from what is left
/// at early times.
fn t1_guess(d: &Dataset) -> Vec<f64> {
    let (t, y) = d.series("tau_us");
    let t_ms: Vec<f64> = t.iter().map(|v| v * 1e-3).collect();
    let n = t_ms.len();
    let y0 = y.first().copied().unwrap_or(1.0);
    let (ta, ya) = (t_ms[n / 2], y[n / 2]);
    let (tb, yb) = (t_ms[n - 1], y[n - 1]);
    let t1_long = if ya > 0.0 && yb > 0.0 && ya > yb {
        ((tb - ta) / (ya / yb).ln()).clamp(1e-3, 1e6)
    } else {
        tb.max(1e-3)
    };
    let a_long = (ya * (ta / t1_long).exp()).clamp(1e-6, 10.0 * y0.abs().max(1e-6));
    let a_short = (y0 - a_long).max(0.05 * y0.abs());
    let t1_short = (t1_long / 10.0).max(1e-3);
    vec![a_long, t1_long, a_short, t1_short, 0.0]
}

const STRETCHED: &[ParamSpec] = &[
    free("a", 0.0, 2.0),
    free("t2_us", 1e-6, 1e12),
    free("x", 0.5, 4.0),
];

const EQ1: &[ParamSpec] = &[
    free("a0", 0.0, 1e6),
    fixed("gamma0_khz", 0.0, 1e5, 0.0),
    free("gamma_sd_khz", 0.0, 1e6),
    free("r_per_ms", 0.0, 1e4),
    free("t1_ms", 1e-3, 1e7),
];

const SECH2: &[ParamSpec] = &[
    free("gamma_max_khz", 0.0, 1e7),
    free("g_s", 1.0, 15.0),
    fixed("b0_mT", 1e-3, 1e4, 58.9),
];

const RATE_EQ2: &[ParamSpec] = &[
    free("alpha_ff", 0.0, f64::INFINITY),
    fixed("alpha_ph", 0.0, f64::INFINITY, 0.0),
    free("g_s", 1.0, 15.0),
    fixed("g_s_perp", 1e-3, 20.0, 6.8),
    fixed("n_s", 1.0, f64::INFINITY, CEO2_ER_DENSITY_M3),
    fixed("gamma_s_hz", 1e-6, f64::INFINITY, 1e6),
    fixed("b0_mT", 1e-3, 1e4, 58.9),
];

const ID_LINE: &[ParamSpec] = &[free("rate_sd_per_ms", 0.0, 1e9), free("rate_id_per_ms", 0.0, 1e9)];

const T1_BIEXP: &[ParamSpec] = &[
    free("a_long", 0.0, 1e6),
    free("t1_long_ms", 1e-6, 1e9),
    free("a_short", 0.0, 1e6),
    free("t1_short_ms", 1e-6, 1e9),
    fixed("offset", -1e6, 1e6, 0.0),
];

pub static REGISTRY: &[ModelDef] = &[
    ModelDef {
        name: "stretched_exp",
        axes: &["t_us"],
        observable: "normalized echo amplitude",
        params: STRETCHED,
        eval: stretched_eval,
        guess: stretched_guess,
    },
    ModelDef {
        name: "eq1_three_pulse",
        axes: &["tau_us", "tw_us"],
        observable: "stimulated echo amplitude",
        params: EQ1,
        eval: eq1_eval,
        guess: eq1_guess,
    },
    ModelDef {
        name: "gamma_sd_sech2",
        axes: &["temperature_mK"],
        observable: "spectral diffusion linewidth, kHz",
        params: SECH2,
        eval: sech2_eval,
        guess: sech2_guess,
    },
    ModelDef {
        name: "rate_eq2",
        axes: &["temperature_mK"],
        observable: "spin flip rate, 1/ms",
        params: RATE_EQ2,
        eval: rate_eval,
        guess: rate_guess,
    },
    ModelDef {
        name: "id_line",
        axes: &["f_sin2"],
        observable: "1/T2, 1/ms",
        params: ID_LINE,
        eval: id_eval,
        guess: id_guess,
    },
    ModelDef {
        name: "t1_biexp",
        axes: &["tau_us"],
        observable: "echo intensity",
        params: T1_BIEXP,
        eval: t1_eval,
        guess: t1_guess,
    },
];

pub fn model_by_name(name: &str) -> Option<&'static ModelDef> {
    REGISTRY.iter().find(|m| m.name == name)
}
