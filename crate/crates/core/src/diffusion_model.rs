//! Sudden-jump spectral-diffusion model and the related analytic laws.
//!
//! All quantities are SI: seconds, hertz, 1/s, tesla, kelvin, m⁻³.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::boltzmann_argument;

/// sech²(x) without overflow for large |x|.
pub fn sech2(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    4.0 * e / ((1.0 + e) * (1.0 + e))
}

/// coth(x) for x > 0, accurate near 0 and for large x.
pub fn coth(x: f64) -> f64 {
    let e = (-2.0 * x).exp();
    (1.0 + e) / -(-2.0 * x).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreePulseParams {
    pub a0: f64,
    /// Hz.
    pub gamma0: f64,
    /// Hz.
    pub gamma_sd: f64,
    /// Mean perturber flip rate, 1/s.
    pub rate: f64,
    /// s.
    pub t1: f64,
}

impl ThreePulseParams {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.a0, self.gamma0, self.gamma_sd, self.rate]
            .iter()
            .all(|v| *v >= 0.0 && v.is_finite())
            && self.t1 > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid("three-pulse parameters must be non-negative with T1 > 0".into()))
        }
    }

    /// Γ_eff = Γ0 + (Γ_SD/2)[Rτ + 1 − exp(−R T_W)].
    pub fn gamma_eff(&self, tau: f64, tw: f64) -> f64 {
        self.gamma0 + 0.5 * self.gamma_sd * (self.rate * tau - (-self.rate * tw).exp_m1())
    }
}

/// Stimulated-echo amplitude A0·exp(−2πΓ_eff τ)·exp(−T_W/T1).
pub fn three_pulse_amplitude(p: &ThreePulseParams, tau: f64, tw: f64) -> f64 {
    p.a0 * (-std::f64::consts::TAU * p.gamma_eff(tau, tw) * tau - tw / p.t1).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SechModelParams {
    /// Hz.
    pub gamma_max: f64,
    pub g_s: f64,
    pub field_t: f64,
}

/// Γ_SD(T) = Γ_max·sech²(g_s μ_B B0 / 2k_B T).
pub fn gamma_sd_of_t(p: &SechModelParams, temperature_k: f64) -> f64 {
    p.gamma_max * sech2(boltzmann_argument(p.g_s, p.field_t, temperature_k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateModelParams {
    /// Scale of the flip-flop term, s⁻¹ · Hz · m⁶.
    pub alpha_ff: f64,
    /// Scale of the direct-phonon term, s⁻¹ · T⁻⁵.
    pub alpha_ph: f64,
    pub g_s_perp: f64,
    /// Perturber density, m⁻³.
    pub n_s: f64,
    /// Perturber linewidth, Hz.
    pub gamma_s: f64,
    pub g_s: f64,
    pub field_t: f64,
}

/// R(T) = α_ff g⊥⁴ n_s²/Γ_s · sech²(x) + α_ph g_s³ B0⁵ coth(x), x = g_s μ_B B0 / 2k_B T.
pub fn rate_of_t(p: &RateModelParams, temperature_k: f64) -> f64 {
    let x = boltzmann_argument(p.g_s, p.field_t, temperature_k);
    let flip_flop = p.alpha_ff * p.g_s_perp.powi(4) * p.n_s * p.n_s / p.gamma_s * sech2(x);
    let phonon = if p.alpha_ph == 0.0 {
        0.0
    } else {
        p.alpha_ph * p.g_s.powi(3) * p.field_t.powi(5) * coth(x)
    };
    flip_flop + phonon
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdLineParams {
    /// 1/T₂,SD in 1/s.
    pub rate_sd: f64,
    /// 1/T₂,ID in 1/s.
    pub rate_id: f64,
}

/// 1/T₂ = 1/T₂,SD + f/T₂,ID with f = ⟨sin²(θ/2)⟩.
pub fn id_line(p: &IdLineParams, f: f64) -> f64 {
    p.rate_sd + f * p.rate_id
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum T1Convention {
    /// Signal decays towards the offset.
    #[default]
    Decay,
    /// Inversion recovery: offset minus the decaying terms.
    Recovery,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct T1BiexpParams {
    pub a_long: f64,
    /// s.
    pub t1_long: f64,
    pub a_short: f64,
    /// s.
    pub t1_short: f64,
    pub offset: f64,
}

pub fn t1_biexponential(p: &T1BiexpParams, tau: f64, convention: T1Convention) -> f64 {
    let decay = p.a_long * (-tau / p.t1_long).exp() + p.a_short * (-tau / p.t1_short).exp();
    match convention {
        T1Convention::Decay => decay + p.offset,
        T1Convention::Recovery => p.offset - decay,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const B0: f64 = 0.0589;

    // (T in K, sech²(x), coth(x)) with x = 6.17 μ_B B0 / 2k_B T, 50-digit reference.
    const REFERENCE: [(f64, f64, f64); 5] = [
        (0.001, 3.860_440_671_090_140_3e-106, 1.0),
        (0.02, 2.001_172_334_841_527_8e-5, 1.000_010_006_011_852_6),
        (0.0772, 0.155_878_072_422_191_75, 1.088_422_244_408_511_6),
        (0.4, 0.912_380_134_936_770_97, 3.378_303_864_510_794_9),
        (10.0, 0.999_851_041_134_080_53, 81.934_502_565_550_484),
    ];

    #[test]
    fn sech2_and_coth_match_reference() {
        for &(t, s, c) in &REFERENCE {
            let x = boltzmann_argument(6.17, B0, t);
            assert_relative_eq!(sech2(x), s, max_relative = 1e-12);
            assert_relative_eq!(coth(x), c, max_relative = 1e-12);
        }
    }

    #[test]
    fn gamma_sd_at_77mk() {
        let p = SechModelParams {
            gamma_max: 706.7e3,
            g_s: 6.17,
            field_t: B0,
        };
        assert_relative_eq!(gamma_sd_of_t(&p, 0.0772), 110_159.033_780_762_9, max_relative = 1e-11);
        let mut last = 0.0;
        for k in 1..200 {
            let g = gamma_sd_of_t(&p, 0.005 * k as f64);
            assert!(g > last);
            last = g;
        }
        assert!(gamma_sd_of_t(&p, 1e4) > 0.999 * p.gamma_max);
        assert_eq!(gamma_sd_of_t(&p, 1e-5), 0.0);
    }

    fn quoted_three_pulse() -> ThreePulseParams {
        ThreePulseParams {
            a0: 1.0,
            gamma0: 3e3,
            gamma_sd: 82.8e3,
            rate: 3.2e3,
            t1: 119.3e-3,
        }
    }

    #[test]
    fn three_pulse_limits() {
        let p = quoted_three_pulse();
        assert_eq!(three_pulse_amplitude(&p, 0.0, 0.0), 1.0);
        let q = ThreePulseParams { gamma_sd: 0.0, ..p };
        let (tau, tw) = (2e-6, 5e-3);
        let expected = (-std::f64::consts::TAU * 3e3 * tau).exp() * (-tw / p.t1).exp();
        assert_relative_eq!(three_pulse_amplitude(&q, tau, tw), expected, max_relative = 1e-14);
        let sat = p.gamma0 + 0.5 * p.gamma_sd * (p.rate * tau + 1.0);
        assert_eq!(p.gamma_eff(tau, 1e3), sat);
    }

    #[test]
    fn three_pulse_strictly_decreasing() {
        let p = quoted_three_pulse();
        for k in 1..50 {
            let (a, b) = (k as f64 * 0.1e-6, (k + 1) as f64 * 0.1e-6);
            assert!(three_pulse_amplitude(&p, b, 1e-3) < three_pulse_amplitude(&p, a, 1e-3));
            let (a, b) = (k as f64 * 1e-4, (k + 1) as f64 * 1e-4);
            assert!(three_pulse_amplitude(&p, 2e-6, b) < three_pulse_amplitude(&p, 2e-6, a));
        }
    }

    #[test]
    fn rate_law_limits() {
        let p = RateModelParams {
            alpha_ff: 1e-40,
            alpha_ph: 0.0,
            g_s_perp: 6.8,
            n_s: 5e22,
            gamma_s: 1e6,
            g_s: 7.34,
            field_t: B0,
        };
        let x = boltzmann_argument(7.34, B0, 0.1);
        let r = rate_of_t(&p, 0.1);
        assert_relative_eq!(r, 1e-40 * 6.8f64.powi(4) * 25e44 / 1e6 * sech2(x), max_relative = 1e-14);
        let doubled = RateModelParams { n_s: 1e23, ..p };
        assert_relative_eq!(rate_of_t(&doubled, 0.1), 4.0 * r, max_relative = 1e-14);
        let phonon = RateModelParams {
            alpha_ff: 0.0,
            alpha_ph: 2.0,
            ..p
        };
        let floor = 2.0 * 7.34f64.powi(3) * B0.powi(5);
        assert_relative_eq!(rate_of_t(&phonon, 1e-4), floor, max_relative = 1e-14);
    }

    #[test]
    fn id_line_harmonic_sum() {
        let p = IdLineParams {
            rate_sd: 1.0 / 54.0e-6,
            rate_id: 1.0 / 158.9e-6,
        };
        assert_relative_eq!(1.0 / id_line(&p, 0.0), 54.0e-6, max_relative = 1e-14);
        // 1/(1/54.0 + 1/158.9) μs
        assert_relative_eq!(1.0 / id_line(&p, 1.0), 40.303_428_839_830_906e-6, max_relative = 1e-12);
        let mid = id_line(&p, 0.5);
        assert_relative_eq!(mid, 0.5 * (id_line(&p, 0.0) + id_line(&p, 1.0)), max_relative = 1e-15);
    }

    #[test]
    fn t1_curve_crosses_one_over_e_between_components() {
        let p = T1BiexpParams {
            a_long: 0.7,
            t1_long: 119.3e-3,
            a_short: 0.3,
            t1_short: 8.0e-3,
            offset: 0.0,
        };
        assert_eq!(t1_biexponential(&p, 0.0, T1Convention::Decay), 1.0);
        assert_eq!(t1_biexponential(&p, 0.0, T1Convention::Recovery), -1.0);
        let level = 1.0 / std::f64::consts::E;
        assert!(t1_biexponential(&p, 8.0e-3, T1Convention::Decay) > level);
        assert!(t1_biexponential(&p, 119.3e-3, T1Convention::Decay) < level);
        let single = T1BiexpParams { a_short: 0.0, ..p };
        assert_relative_eq!(
            t1_biexponential(&single, 0.05, T1Convention::Decay),
            0.7 * (-0.05f64 / 119.3e-3).exp(),
            max_relative = 1e-15
        );
    }
}
