//! Ideal pulse sequences and their conversion into evolution schedules.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseTarget {
    CentralOnly,
    /// The pulse also rotates bath spins resonant with the drive.
    CentralAndResonantBath,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    /// Seconds.
    pub time: f64,
    /// Rotation angle, radians, in (0, π].
    pub angle: f64,
    /// Rotation-axis phase in the xy plane, radians.
    pub phase: f64,
    pub target: PulseTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    Hahn,
    GeneralizedHahn,
    Xy8,
    ThreePulse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub pulses: Vec<Pulse>,
    /// Seconds.
    pub readout_time: f64,
    pub kind: SequenceKind,
}

const XY8_PHASES: [f64; 8] = [0.0, FRAC_PI_2, 0.0, FRAC_PI_2, FRAC_PI_2, 0.0, FRAC_PI_2, 0.0];

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("tau must be positive, got {tau}")))
    }
}

fn check_angle(theta: f64) -> Result<()> {
    if theta > 0.0 && theta <= PI {
        Ok(())
    } else {
        Err(Error::Invalid(format!("pulse angle {theta} outside (0, π]")))
    }
}

/// π pulse at τ, echo read out at 2τ.
pub fn hahn(tau: f64) -> Result<PulseSequence> {
    check_tau(tau)?;
    Ok(PulseSequence {
        pulses: vec![Pulse {
            time: tau,
            angle: PI,
            phase: 0.0,
            target: PulseTarget::CentralOnly,
        }],
        readout_time: 2.0 * tau,
        kind: SequenceKind::Hahn,
    })
}

/// Hahn echo whose refocusing pulse has angle θ and also rotates resonant
/// bath spins.
pub fn generalized_hahn(tau: f64, theta: f64) -> Result<PulseSequence> {
    check_tau(tau)?;
    check_angle(theta)?;
    Ok(PulseSequence {
        pulses: vec![Pulse {
            time: tau,
            angle: theta,
            phase: 0.0,
            target: PulseTarget::CentralAndResonantBath,
        }],
        readout_time: 2.0 * tau,
        kind: SequenceKind::GeneralizedHahn,
    })
}

/// XY8(N, τ): N π pulses with the XYXYYXYX phase cycle, spaced 2τ, with τ
/// free evolution at both ends.
pub fn xy8(n_pulses: usize, tau: f64) -> Result<PulseSequence> {
    check_tau(tau)?;
    if n_pulses == 0 || n_pulses % 8 != 0 {
        return Err(Error::Invalid(format!(
            "XY8 pulse count must be a positive multiple of 8, got {n_pulses}"
        )));
    }
    let pulses = (0..n_pulses)
        .map(|k| Pulse {
            time: (2 * k + 1) as f64 * tau,
            angle: PI,
            phase: XY8_PHASES[k % 8],
            target: PulseTarget::CentralOnly,
        })
        .collect();
    Ok(PulseSequence {
        pulses,
        readout_time: 2.0 * n_pulses as f64 * tau,
        kind: SequenceKind::Xy8,
    })
}

/// Stimulated echo π/2 – τ – π/2 – T_W – π/2, echo at 2τ + T_W. Bookkeeping
/// only; the CCE engine rejects it.
pub fn three_pulse(tau: f64, waiting_time: f64) -> Result<PulseSequence> {
    check_tau(tau)?;
    if !(waiting_time > 0.0) {
        return Err(Error::Invalid("waiting time must be positive".into()));
    }
    let p = |time| Pulse {
        time,
        angle: FRAC_PI_2,
        phase: 0.0,
        target: PulseTarget::CentralOnly,
    };
    Ok(PulseSequence {
        pulses: vec![p(tau), p(tau + waiting_time)],
        readout_time: 2.0 * tau + waiting_time,
        kind: SequenceKind::ThreePulse,
    })
}

impl PulseSequence {
    pub fn validate(&self) -> Result<()> {
        let mut last = 0.0;
        for (k, p) in self.pulses.iter().enumerate() {
            check_angle(p.angle)?;
            if p.time < 0.0 || (k > 0 && p.time <= last) {
                return Err(Error::Invalid("pulse times must be non-negative and strictly increasing".into()));
            }
            last = p.time;
        }
        if self.readout_time < last {
            return Err(Error::Invalid("readout precedes the last pulse".into()));
        }
        if self.kind == SequenceKind::Xy8 && self.pulses.len() % 8 != 0 {
            return Err(Error::Invalid("XY8 pulse count must be a multiple of 8".into()));
        }
        Ok(())
    }

    pub fn targets_bath(&self) -> bool {
        self.pulses
            .iter()
            .any(|p| p.target == PulseTarget::CentralAndResonantBath)
    }
}

/// Ensemble-averaged inversion fidelity ⟨sin²(θ/2)⟩ over a drive-amplitude
/// distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum InhomogeneityModel {
    /// Every spin sees the nominal angle.
    #[default]
    Uniform,
    /// Gaussian spread of the drive amplitude with relative width `rel_sigma`.
    Gaussian { rel_sigma: f64 },
}

pub fn pulse_fidelity_average(theta_nominal: f64, model: InhomogeneityModel) -> Result<f64> {
    check_angle(theta_nominal)?;
    let f = |theta: f64| (0.5 * theta).sin().powi(2);
    Ok(match model {
        InhomogeneityModel::Uniform => f(theta_nominal),
        InhomogeneityModel::Gaussian { rel_sigma } => {
            if !(rel_sigma >= 0.0) {
                return Err(Error::Invalid("rel_sigma must be non-negative".into()));
            }
            if rel_sigma == 0.0 {
                return Ok(f(theta_nominal));
            }
            // Trapezoid over ±8σ; the integrand is smooth so 2001 nodes is ample.
            let n = 2000;
            let (mut num, mut den) = (0.0, 0.0);
            for k in 0..=n {
                let z = -8.0 + 16.0 * k as f64 / n as f64;
                let w = (-0.5 * z * z).exp() * if k == 0 || k == n { 0.5 } else { 1.0 };
                num += w * f(theta_nominal * (1.0 + rel_sigma * z));
                den += w;
            }
            (num / den).clamp(0.0, 1.0)
        }
    })
}

/// Configuration-file form of a sequence: `{kind, tau_us, theta_deg?, n_pulses?, tw_us?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSpec {
    pub kind: SequenceKind,
    #[serde(default)]
    pub tau_us: Option<f64>,
    #[serde(default)]
    pub theta_deg: Option<f64>,
    #[serde(default)]
    pub n_pulses: Option<usize>,
    #[serde(default)]
    pub tw_us: Option<f64>,
}

impl SequenceSpec {
    pub fn build(&self) -> Result<PulseSequence> {
        let tau = self
            .tau_us
            .ok_or_else(|| Error::Invalid("sequence.tau_us is required".into()))?
            * 1e-6;
        self.template()?.with_tau(tau, self.tw_us.map(|t| t * 1e-6))
    }

    pub fn template(&self) -> Result<SequenceTemplate> {
        Ok(match self.kind {
            SequenceKind::Hahn => SequenceTemplate::Hahn,
            SequenceKind::GeneralizedHahn => SequenceTemplate::GeneralizedHahn {
                theta: self.theta_deg.unwrap_or(180.0).to_radians(),
            },
            SequenceKind::Xy8 => SequenceTemplate::Xy8 {
                n_pulses: self.n_pulses.unwrap_or(8),
            },
            SequenceKind::ThreePulse => SequenceTemplate::ThreePulse,
        })
    }
}

/// A sequence family parameterized by its total evolution time, which is
/// what a coherence curve sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SequenceTemplate {
    Hahn,
    GeneralizedHahn { theta: f64 },
    Xy8 { n_pulses: usize },
    ThreePulse,
}

impl SequenceTemplate {
    pub fn label(&self) -> String {
        match self {
            SequenceTemplate::Hahn => "hahn".into(),
            SequenceTemplate::GeneralizedHahn { theta } => {
                format!("generalized_hahn(theta={:.6}deg)", theta.to_degrees())
            }
            SequenceTemplate::Xy8 { n_pulses } => format!("xy8(N={n_pulses})"),
            SequenceTemplate::ThreePulse => "three_pulse".into(),
        }
    }

    /// Number of refocusing intervals 2τ in the total evolution time.
    fn intervals(&self) -> usize {
        match self {
            SequenceTemplate::Xy8 { n_pulses } => *n_pulses,
            _ => 1,
        }
    }

    fn with_tau(&self, tau: f64, tw: Option<f64>) -> Result<PulseSequence> {
        match *self {
            SequenceTemplate::Hahn => hahn(tau),
            SequenceTemplate::GeneralizedHahn { theta } => generalized_hahn(tau, theta),
            SequenceTemplate::Xy8 { n_pulses } => xy8(n_pulses, tau),
            SequenceTemplate::ThreePulse => three_pulse(
                tau,
                tw.ok_or_else(|| Error::Invalid("three-pulse sequence needs tw_us".into()))?,
            ),
        }
    }

    /// Sequence whose readout happens at `total` seconds.
    pub fn at_total_time(&self, total: f64) -> Result<PulseSequence> {
        self.with_tau(total / (2 * self.intervals()) as f64, None)
    }
}

/// One step of an evolution schedule as seen by the cluster kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    /// Free evolution for `dt` seconds.
    Evolve(f64),
    /// Instantaneous pulse: swaps the central-spin branches and, when
    /// `bath` is set, rotates resonant bath spins by (angle, phase).
    Pulse { bath: Option<(f64, f64)> },
}

/// Steps grouped into blocks that repeat, so long periodic sequences can be
/// propagated by repeated squaring.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub blocks: Vec<(Vec<Step>, usize)>,
}

impl Schedule {
    pub fn steps(&self) -> impl Iterator<Item = &Step> {
        self.blocks
            .iter()
            .flat_map(|(steps, reps)| std::iter::repeat_n(steps, *reps).flatten())
    }

    /// Time spent with the initial branch labelling minus time spent swapped.
    pub fn branch_imbalance(&self) -> f64 {
        let mut sign = 1.0;
        let mut acc = 0.0;
        for s in self.steps() {
            match s {
                Step::Evolve(dt) => acc += sign * dt,
                Step::Pulse { .. } => sign = -sign,
            }
        }
        acc
    }

    pub fn total_time(&self) -> f64 {
        self.steps()
            .map(|s| match s {
                Step::Evolve(dt) => *dt,
                Step::Pulse { .. } => 0.0,
            })
            .sum()
    }
}

impl PulseSequence {
    pub fn schedule(&self) -> Result<Schedule> {
        self.validate()?;
        if self.kind == SequenceKind::ThreePulse {
            return Err(Error::Invalid(
                "three-pulse echoes are handled by the analytic diffusion model, not CCE".into(),
            ));
        }
        let step_for = |p: &Pulse| Step::Pulse {
            bath: (p.target == PulseTarget::CentralAndResonantBath).then_some((p.angle, p.phase)),
        };
        // XY8 repeats an identical 8-pulse unit; the τ tails of neighbouring
        // units merge into the 2τ interior spacing.
        if self.kind == SequenceKind::Xy8 && self.pulses.len() >= 16 {
            let tau = self.pulses[0].time;
            let mut unit = vec![Step::Evolve(tau)];
            for (k, p) in self.pulses[..8].iter().enumerate() {
                unit.push(step_for(p));
                unit.push(Step::Evolve(if k == 7 { tau } else { 2.0 * tau }));
            }
            return Ok(Schedule {
                blocks: vec![(unit, self.pulses.len() / 8)],
            });
        }
        let mut steps = Vec::with_capacity(2 * self.pulses.len() + 1);
        let mut now = 0.0;
        for p in &self.pulses {
            steps.push(Step::Evolve(p.time - now));
            steps.push(step_for(p));
            now = p.time;
        }
        steps.push(Step::Evolve(self.readout_time - now));
        Ok(Schedule {
            blocks: vec![(steps, 1)],
        })
    }
}
