//! Cluster correlation expansion of central-spin echo coherence.
//!
//! For each bath configuration and each sampled product state of the bath,
//! the coherence is L(t) = Π_C L̃_C(t) with L̃_C = L_C / Π_{S ⊊ C} L̃_S. The
//! ensemble signal is the complex mean over configurations and samples.
//!
//! Cluster contributions depend on a sample only through the local state of
//! the cluster's members (spin projections, plus which members the pulses
//! rotate), so each cluster is evaluated once per distinct local key and
//! multiplied into every sample carrying that key.

mod kernel;
mod t2;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crystal::BathConfiguration;
use crate::error::{Error, Result};
use crate::hamiltonian::{
    build_coupling_table, cluster_hamiltonians, thermal_polarization, CouplingTable,
    ExperimentConditions, MAX_CLUSTER_ORDER,
};
use crate::rng::{derive_seed, splitmix64, stream_rng};
use crate::sequences::{Schedule, SequenceTemplate};

pub(crate) use t2::{crossing as t2_crossing, percentile};
pub use t2::{estimate_t2, fit_t2, mc_bootstrap_t2, AdaptiveGrid, T2Estimate, T2Run, STRETCH_RANGE};

/// Relative weight below which a sub-cluster makes the CCE division divergent.
pub const DIVERGENCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CceSettings {
    #[serde(default = "defaults::max_order")]
    pub max_order: usize,
    #[serde(default = "defaults::bath_radius_nm")]
    pub bath_radius_nm: f64,
    #[serde(default = "defaults::n_bath_samples")]
    pub n_bath_samples: usize,
    #[serde(default = "defaults::n_configurations")]
    pub n_configurations: usize,
    /// Seconds; must start at 0 and increase strictly.
    #[serde(default = "defaults::time_grid")]
    pub time_grid: Vec<f64>,
    /// Pair clusters need |J| at or above this, rad/s.
    #[serde(default = "defaults::pair_cutoff")]
    pub pair_cutoff: f64,
    #[serde(default)]
    pub seed: u64,
    /// Fraction of central-species bath spins inside the pulse bandwidth.
    #[serde(default = "defaults::resonant_fraction")]
    pub resonant_fraction: f64,
}

pub mod defaults {
    pub fn max_order() -> usize {
        2
    }
    pub fn bath_radius_nm() -> f64 {
        75.0
    }
    pub fn n_bath_samples() -> usize {
        100
    }
    pub fn n_configurations() -> usize {
        50
    }
    pub fn time_grid() -> Vec<f64> {
        (0..=40).map(|k| k as f64 * 5e-6).collect()
    }
    /// 0.1 Hz in rad/s.
    pub fn pair_cutoff() -> f64 {
        std::f64::consts::TAU * 0.1
    }
    /// ¹⁶⁷Er natural abundance (22.87 %) shared over its 8 hyperfine lines:
    /// the share of Er spins inside one driven transition.
    pub fn resonant_fraction() -> f64 {
        0.2287 / 8.0
    }
}

impl Default for CceSettings {
    fn default() -> Self {
        Self {
            max_order: defaults::max_order(),
            bath_radius_nm: defaults::bath_radius_nm(),
            n_bath_samples: defaults::n_bath_samples(),
            n_configurations: defaults::n_configurations(),
            time_grid: defaults::time_grid(),
            pair_cutoff: defaults::pair_cutoff(),
            seed: 0,
            resonant_fraction: defaults::resonant_fraction(),
        }
    }
}

impl CceSettings {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_CLUSTER_ORDER).contains(&self.max_order) {
            return Err(Error::Invalid(format!(
                "max_order must be in 1..={MAX_CLUSTER_ORDER}, got {}",
                self.max_order
            )));
        }
        if self.n_bath_samples == 0 || self.n_configurations == 0 {
            return Err(Error::Invalid(
                "n_bath_samples and n_configurations must be at least 1".into(),
            ));
        }
        if !(self.bath_radius_nm > 0.0) {
            return Err(Error::Invalid("bath_radius_nm must be positive".into()));
        }
        if !(self.pair_cutoff >= 0.0) {
            return Err(Error::Invalid("pair_cutoff must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.resonant_fraction) {
            return Err(Error::Invalid("resonant_fraction must lie in [0, 1]".into()));
        }
        check_time_grid(&self.time_grid)
    }

    /// Short stable digest of the settings, for curve metadata.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("settings serialize");
        let d = Sha256::digest(text.as_bytes());
        d[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn check_time_grid(grid: &[f64]) -> Result<()> {
    if grid.first() != Some(&0.0) || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::BadTimeGrid);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cluster {
    members: Vec<usize>,
}

impl Cluster {
    pub fn new(mut members: Vec<usize>) -> Result<Self> {
        members.sort_unstable();
        members.dedup();
        if members.is_empty() || members.len() > MAX_CLUSTER_ORDER {
            return Err(Error::Invalid(format!(
                "cluster must have 1..={MAX_CLUSTER_ORDER} distinct members"
            )));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn order(&self) -> usize {
        self.members.len()
    }
}

/// All singletons plus every connected cluster (through pairs with
/// |J| ≥ cutoff) up to `max_order`, sorted by order then members.
pub fn enumerate_clusters(table: &CouplingTable, settings: &CceSettings) -> Vec<Cluster> {
    let n = table.len();
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for p in &table.pairs {
        if p.coupling.abs() >= settings.pair_cutoff {
            adjacency[p.i].push(p.j);
            adjacency[p.j].push(p.i);
        }
    }
    let mut out: Vec<Cluster> = (0..n).map(|i| Cluster { members: vec![i] }).collect();
    if settings.max_order >= 2 {
        let mut frontier: Vec<Vec<usize>> = Vec::new();
        for p in &table.pairs {
            if p.coupling.abs() >= settings.pair_cutoff {
                frontier.push(vec![p.i, p.j]);
            }
        }
        frontier.sort();
        for order in 2..=settings.max_order {
            out.extend(frontier.iter().map(|m| Cluster { members: m.clone() }));
            if order == settings.max_order {
                break;
            }
            let mut next = BTreeSet::new();
            for m in &frontier {
                for &i in m {
                    for &j in &adjacency[i] {
                        if !m.contains(&j) {
                            let mut grown = m.clone();
                            grown.push(j);
                            grown.sort_unstable();
                            next.insert(grown);
                        }
                    }
                }
            }
            frontier = next.into_iter().collect();
        }
    }
    out
}

/// One Monte-Carlo draw of the bath: spin projections (+1 up, −1 down, in
/// units of ħ/2) and which spins the bath-targeted pulses rotate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BathSample {
    pub spins: Vec<i8>,
    pub resonant: Vec<bool>,
}

/// Each spin is up with probability (1 + p)/2, p its species' polarization.
///
/// Draws are coupled across temperatures: the same seed uses the same
/// uniform variate per spin, so colder baths have a subset of the down spins.
pub fn sample_bath_state(config: &BathConfiguration, conditions: &ExperimentConditions, seed: u64) -> Vec<i8> {
    let p_up: Vec<f64> = config
        .species
        .iter()
        .map(|s| 0.5 * (1.0 + thermal_polarization(s, conditions)))
        .collect();
    let mut rng = stream_rng(seed, 0);
    config
        .bath
        .iter()
        .map(|s| {
            let u: f64 = rng.random();
            if u < p_up[s.species] {
                1
            } else {
                -1
            }
        })
        .collect()
}

/// Marks central-species bath spins as pulse-resonant with probability `fraction`.
pub fn sample_resonance(config: &BathConfiguration, fraction: f64, seed: u64) -> Vec<bool> {
    let mut rng = stream_rng(seed, 1);
    config
        .bath
        .iter()
        .map(|s| {
            let u: f64 = rng.random();
            s.species == config.central.species && u < fraction
        })
        .collect()
}

pub fn sample_bath(
    config: &BathConfiguration,
    conditions: &ExperimentConditions,
    resonant_fraction: f64,
    seed: u64,
) -> BathSample {
    BathSample {
        spins: sample_bath_state(config, conditions, seed),
        resonant: sample_resonance(config, resonant_fraction, seed),
    }
}

/// Per-sample seed: depends on the run seed, the configuration and the
/// sample index, never on temperature.
pub fn sample_seed(settings_seed: u64, config: &BathConfiguration, sample: usize) -> u64 {
    derive_seed(splitmix64(settings_seed) ^ config.rng_seed, sample as u64 + 1)
}

fn schedules(template: &SequenceTemplate, grid: &[f64]) -> Result<Vec<Option<Schedule>>> {
    check_time_grid(grid)?;
    grid.iter()
        .map(|&t| {
            if t == 0.0 {
                Ok(None)
            } else {
                template.at_total_time(t)?.schedule().map(Some)
            }
        })
        .collect()
}

/// Local key of a cluster for one sample: bit k = member k down, bit 4+k =
/// member k rotated by bath-targeted pulses.
fn local_key(members: &[usize], sample: &BathSample, rotations: bool) -> u32 {
    let mut key = 0u32;
    for (k, &m) in members.iter().enumerate() {
        if sample.spins[m] < 0 {
            key |= 1 << k;
        }
        if rotations && sample.resonant[m] {
            key |= 1 << (4 + k);
        }
    }
    key
}

fn restrict_key(key: u32, subset: u32, order: usize) -> u32 {
    let mut out = 0;
    let mut rank = 0;
    for k in 0..order {
        if subset >> k & 1 == 1 {
            out |= (key >> k & 1) << rank;
            out |= (key >> (4 + k) & 1) << (4 + rank);
            rank += 1;
        }
    }
    out
}

/// Raw coherence L_C(t) of one cluster for one bath sample.
pub fn cluster_coherence(
    cluster: &Cluster,
    table: &CouplingTable,
    config: &BathConfiguration,
    sample: &BathSample,
    template: &SequenceTemplate,
    time_grid: &[f64],
) -> Result<Vec<Complex64>> {
    let scheds = schedules(template, time_grid)?;
    let rotations = template_rotates_bath(template);
    let key = local_key(cluster.members(), sample, rotations);
    let h = cluster_hamiltonians(cluster.members(), table, config)?;
    kernel::evaluate(&h, cluster.members(), table, (key & 0xF) as usize, key >> 4, &scheds)
}

fn template_rotates_bath(template: &SequenceTemplate) -> bool {
    matches!(template, SequenceTemplate::GeneralizedHahn { .. })
}

/// Result of dividing sub-cluster contributions out of a raw coherence.
fn divide_out(
    raw: &mut [Complex64],
    denominators: &[&[Complex64]],
    divergent: &mut usize,
) {
    let mut flagged = false;
    for (t, v) in raw.iter_mut().enumerate() {
        let mut den = Complex64::new(1.0, 0.0);
        for d in denominators {
            den *= d[t];
        }
        if den.norm() < DIVERGENCE_FLOOR {
            *v = Complex64::new(1.0, 0.0);
            flagged = true;
        } else {
            *v /= den;
        }
    }
    if flagged {
        *divergent += 1;
    }
}

/// Product of irreducible contributions for one sample, from raw cluster
/// coherences `curves[k]` of `clusters[k]`. Clusters must be listed with
/// every sub-cluster before its parents (the order of [`enumerate_clusters`]).
pub fn assemble_coherence(clusters: &[Cluster], curves: &[Vec<Complex64>]) -> Result<(Vec<Complex64>, usize)> {
    if clusters.len() != curves.len() {
        return Err(Error::Invalid("one curve per cluster required".into()));
    }
    let n_t = curves.first().map_or(0, Vec::len);
    if curves.iter().any(|c| c.len() != n_t) {
        return Err(Error::Invalid("curves must share the time grid".into()));
    }
    let index: HashMap<&[usize], usize> = clusters
        .iter()
        .enumerate()
        .map(|(k, c)| (c.members(), k))
        .collect();
    let mut irreducible: Vec<Vec<Complex64>> = Vec::with_capacity(clusters.len());
    let mut total = vec![Complex64::new(1.0, 0.0); n_t];
    let mut divergent = 0;
    for (c, raw) in clusters.iter().zip(curves) {
        let mut value = raw.clone();
        let subs: Vec<&[Complex64]> = proper_subsets(c.members())
            .filter_map(|s| index.get(s.as_slice()).map(|&k| irreducible[k].as_slice()))
            .collect();
        divide_out(&mut value, &subs, &mut divergent);
        for (acc, v) in total.iter_mut().zip(&value) {
            *acc *= v;
        }
        irreducible.push(value);
    }
    Ok((total, divergent))
}

fn proper_subsets(members: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let n = members.len();
    (1u32..(1 << n) - 1).map(move |mask| {
        (0..n)
            .filter(|k| mask >> k & 1 == 1)
            .map(|k| members[k])
            .collect()
    })
}

/// CCE coherence of one bath sample, cluster by cluster, over every spin of
/// `config` (no radius truncation). Returns the curve and the number of
/// divergent cluster divisions.
pub fn sample_coherence(
    config: &BathConfiguration,
    settings: &CceSettings,
    sample: &BathSample,
    template: &SequenceTemplate,
) -> Result<(Vec<Complex64>, usize)> {
    settings.validate()?;
    let n = config.bath.len();
    if sample.spins.len() != n || sample.resonant.len() != n {
        return Err(Error::Invalid("bath sample does not match the configuration".into()));
    }
    let table = build_coupling_table(config, settings.pair_cutoff)?;
    let clusters = enumerate_clusters(&table, settings);
    let curves = clusters
        .iter()
        .map(|c| cluster_coherence(c, &table, config, sample, template, &settings.time_grid))
        .collect::<Result<Vec<_>>>()?;
    assemble_coherence(&clusters, &curves)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_configurations: usize,
    pub n_samples_per_configuration: usize,
    pub clusters_per_configuration: Vec<usize>,
    pub bath_spins_per_configuration: Vec<usize>,
    /// (cluster, local state) combinations excluded for a vanishing divisor.
    pub divergent_clusters: usize,
}

/// Per-sample coherence curves for one configuration.
#[derive(Debug, Clone)]
pub struct ConfigEvaluation {
    pub samples: Vec<Vec<Complex64>>,
    pub n_clusters: usize,
    pub divergent: usize,
}

/// Drops bath spins beyond `radius_nm`, except for species that carry
/// their own radius. `None` when nothing is dropped.
fn truncate(config: &BathConfiguration, radius_nm: f64) -> Option<BathConfiguration> {
    let keep = |s: &crate::crystal::BathSpin| {
        config.species[s.species].radius_nm.is_some() || crate::crystal::norm(s.position) < radius_nm
    };
    if config.bath.iter().all(keep) {
        return None;
    }
    let mut out = config.clone();
    out.bath.retain(keep);
    Some(out)
}

pub fn evaluate_configuration(
    config: &BathConfiguration,
    settings: &CceSettings,
    conditions: &ExperimentConditions,
    template: &SequenceTemplate,
) -> Result<ConfigEvaluation> {
    settings.validate()?;
    conditions.validate()?;
    let truncated = truncate(config, settings.bath_radius_nm);
    let config = truncated.as_ref().unwrap_or(config);
    let scheds = schedules(template, &settings.time_grid)?;
    let n_t = scheds.len();
    let balanced = scheds
        .iter()
        .flatten()
        .all(|s| s.branch_imbalance().abs() <= 1e-12 * s.total_time());
    let rotations = template_rotates_bath(template);

    let table = build_coupling_table(config, settings.pair_cutoff)?;
    let clusters = enumerate_clusters(&table, settings);
    let samples: Vec<BathSample> = (0..settings.n_bath_samples)
        .map(|k| {
            sample_bath(
                config,
                conditions,
                settings.resonant_fraction,
                sample_seed(settings.seed, config, k),
            )
        })
        .collect();

    let one = Complex64::new(1.0, 0.0);
    let mut acc = vec![vec![one; n_t]; samples.len()];
    let index: HashMap<&[usize], usize> = clusters
        .iter()
        .enumerate()
        .map(|(k, c)| (c.members(), k))
        .collect();
    // Irreducible contributions kept for clusters that can be sub-clusters.
    let mut memo: Vec<HashMap<u32, Option<Vec<Complex64>>>> = vec![HashMap::new(); clusters.len()];
    let mut divergent = 0;

    for (ci, cluster) in clusters.iter().enumerate() {
        let members = cluster.members();
        let order = members.len();
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (s, sample) in samples.iter().enumerate() {
            groups
                .entry(local_key(members, sample, rotations))
                .or_default()
                .push(s);
        }
        let mut hamiltonians = None;
        for (key, group) in groups {
            let state = (key & 0xF) as usize;
            let rot_mask = key >> 4;
            let trivial = rot_mask == 0
                && (order >= 2 || balanced)
                && kernel::flip_flop_sector(members, &table, state).len() == 1;
            let value = if trivial {
                None
            } else {
                if hamiltonians.is_none() {
                    hamiltonians = Some(cluster_hamiltonians(members, &table, config)?);
                }
                let h = hamiltonians.as_ref().unwrap();
                let mut raw = kernel::evaluate(h, members, &table, state, rot_mask, &scheds)?;
                let subs: Vec<&[Complex64]> = (1u32..(1 << order) - 1)
                    .filter_map(|mask| {
                        let sub: Vec<usize> =
                            (0..order).filter(|k| mask >> k & 1 == 1).map(|k| members[k]).collect();
                        let &si = index.get(sub.as_slice())?;
                        memo[si]
                            .get(&restrict_key(key, mask, order))
                            .and_then(|v| v.as_deref())
                    })
                    .collect();
                divide_out(&mut raw, &subs, &mut divergent);
                (!raw.iter().all(|&v| v == one)).then_some(raw)
            };
            if let Some(v) = &value {
                for &s in &group {
                    for (a, x) in acc[s].iter_mut().zip(v) {
                        *a *= x;
                    }
                }
            }
            if order < settings.max_order {
                memo[ci].insert(key, value);
            }
        }
    }
    Ok(ConfigEvaluation {
        samples: acc,
        n_clusters: clusters.len(),
        divergent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMetadata {
    pub temperature_k: f64,
    pub field_t: f64,
    pub sequence: String,
    pub settings_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceCurve {
    /// Seconds.
    pub times: Vec<f64>,
    pub l_abs: Vec<f64>,
    pub std_err: Vec<f64>,
    pub metadata: CurveMetadata,
}

impl CoherenceCurve {
    /// CSV with columns `t_us,L_abs,std_err`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_us,L_abs,std_err\n");
        for ((t, l), e) in self.times.iter().zip(&self.l_abs).zip(&self.std_err) {
            out.push_str(&format!("{:.9e},{:.12e},{:.6e}\n", t * 1e6, l, e));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub curve: CoherenceCurve,
    /// Complex per-sample curves, configuration-major.
    pub samples: Vec<Vec<Complex64>>,
    pub diagnostics: Diagnostics,
}

/// Complex mean and its standard error at each time point.
pub fn mean_curve(samples: &[Vec<Complex64>]) -> (Vec<f64>, Vec<f64>) {
    let k = samples.len();
    let n_t = samples.first().map_or(0, Vec::len);
    let mut l_abs = Vec::with_capacity(n_t);
    let mut err = Vec::with_capacity(n_t);
    for t in 0..n_t {
        let mean = samples.iter().fold(Complex64::new(0.0, 0.0), |a, s| a + s[t]) / k as f64;
        let var = if k > 1 {
            samples.iter().map(|s| (s[t] - mean).norm_sqr()).sum::<f64>() / (k - 1) as f64
        } else {
            0.0
        };
        l_abs.push(mean.norm());
        err.push((var / k as f64).sqrt());
    }
    (l_abs, err)
}

/// Ensemble-averaged coherence over configurations × bath samples.
///
/// Configurations are evaluated in parallel; the reduction runs in
/// configuration order, so the result does not depend on the thread count.
pub fn ensemble_average(
    configs: &[BathConfiguration],
    settings: &CceSettings,
    conditions: &ExperimentConditions,
    template: &SequenceTemplate,
) -> Result<EnsembleResult> {
    settings.validate()?;
    if configs.is_empty() {
        return Err(Error::Invalid("no bath configurations".into()));
    }
    let evals: Vec<ConfigEvaluation> = configs
        .par_iter()
        .map(|c| evaluate_configuration(c, settings, conditions, template))
        .collect::<Result<_>>()?;
    let diagnostics = Diagnostics {
        n_configurations: configs.len(),
        n_samples_per_configuration: settings.n_bath_samples,
        clusters_per_configuration: evals.iter().map(|e| e.n_clusters).collect(),
        bath_spins_per_configuration: configs.iter().map(|c| c.bath.len()).collect(),
        divergent_clusters: evals.iter().map(|e| e.divergent).sum(),
    };
    let samples: Vec<Vec<Complex64>> = evals.into_iter().flat_map(|e| e.samples).collect();
    let (l_abs, std_err) = mean_curve(&samples);
    Ok(EnsembleResult {
        curve: CoherenceCurve {
            times: settings.time_grid.clone(),
            l_abs,
            std_err,
            metadata: CurveMetadata {
                temperature_k: conditions.temperature_k,
                field_t: conditions.field_t,
                sequence: template.label(),
                settings_hash: settings.digest(),
            },
        },
        samples,
        diagnostics,
    })
}

/// Generalized-Hahn (instantaneous-diffusion) coherence with refocusing angle θ.
pub fn simulate_id(
    configs: &[BathConfiguration],
    settings: &CceSettings,
    conditions: &ExperimentConditions,
    theta: f64,
) -> Result<EnsembleResult> {
    ensemble_average(
        configs,
        settings,
        conditions,
        &SequenceTemplate::GeneralizedHahn { theta },
    )
}

#[cfg(test)]
mod tests;
