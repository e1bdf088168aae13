//! Fluorite lattice geometry and random dopant placement.
//!
//! The conventional fluorite (CaF₂-type) cell holds an fcc cation sublattice
//! (4 sites) and a simple-cubic anion sublattice at the (¼,¼,¼) tetrahedral
//! holes (8 sites). A cation sits at the origin; the central spin occupies
//! it and every other site inside the supercell sphere is eligible for a
//! bath spin.
//!
//! Sites are addressed through a flat index over the enclosing cube of unit
//! cells so that occupation can be drawn by geometric skipping: the cost of
//! building a configuration scales with the number of dopants, not with the
//! ~10⁸ sites inside a 75 nm sphere.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};

pub const CATION_SITES_PER_CELL: usize = 4;
pub const ANION_SITES_PER_CELL: usize = 8;

/// Conventional CeO₂ lattice constant, nm.
pub const CEO2_LATTICE_NM: f64 = 0.5411;

const CATION_BASIS: [[f64; 3]; CATION_SITES_PER_CELL] = [
    [0.0, 0.0, 0.0],
    [0.0, 0.5, 0.5],
    [0.5, 0.0, 0.5],
    [0.5, 0.5, 0.0],
];

const ANION_BASIS: [[f64; 3]; ANION_SITES_PER_CELL] = [
    [0.25, 0.25, 0.25],
    [0.25, 0.25, 0.75],
    [0.25, 0.75, 0.25],
    [0.25, 0.75, 0.75],
    [0.75, 0.25, 0.25],
    [0.75, 0.25, 0.75],
    [0.75, 0.75, 0.25],
    [0.75, 0.75, 0.75],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sublattice {
    Cation,
    Anion,
}

impl Sublattice {
    fn basis(self) -> &'static [[f64; 3]] {
        match self {
            Sublattice::Cation => &CATION_BASIS,
            Sublattice::Anion => &ANION_BASIS,
        }
    }

    fn stream(self) -> u64 {
        match self {
            Sublattice::Cation => 0,
            Sublattice::Anion => 1,
        }
    }
}

impl std::fmt::Display for Sublattice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Sublattice::Cation => f.write_str("cation"),
            Sublattice::Anion => f.write_str("anion"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    #[serde(rename = "a_nm")]
    pub lattice_constant_nm: f64,
    #[serde(rename = "radius_nm")]
    pub supercell_radius_nm: f64,
}

impl LatticeSpec {
    pub fn new(lattice_constant_nm: f64, supercell_radius_nm: f64) -> Result<Self> {
        let spec = Self {
            lattice_constant_nm,
            supercell_radius_nm,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn ceo2(supercell_radius_nm: f64) -> Self {
        Self {
            lattice_constant_nm: CEO2_LATTICE_NM,
            supercell_radius_nm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lattice_constant_nm > 0.0 && self.lattice_constant_nm.is_finite()) {
            return Err(Error::Invalid(format!(
                "lattice constant must be positive, got {}",
                self.lattice_constant_nm
            )));
        }
        if !(self.supercell_radius_nm > 0.0 && self.supercell_radius_nm.is_finite()) {
            return Err(Error::Invalid(format!(
                "supercell radius must be positive, got {}",
                self.supercell_radius_nm
            )));
        }
        Ok(())
    }

    /// Cation sites per nm³.
    pub fn cation_density_nm3(&self) -> f64 {
        CATION_SITES_PER_CELL as f64 / self.lattice_constant_nm.powi(3)
    }

    pub fn site_density_nm3(&self, sublattice: Sublattice) -> f64 {
        sublattice.basis().len() as f64 / self.lattice_constant_nm.powi(3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Site {
    pub position: [f64; 3],
    pub sublattice: Sublattice,
}

/// Lazily indexed view of every lattice site strictly inside the supercell
/// sphere.
#[derive(Debug, Clone)]
pub struct FluoriteSites {
    spec: LatticeSpec,
    half_width: i64,
}

/// Returns the site set for `spec`. Rejects spheres smaller than one cell.
pub fn enumerate_sites(spec: &LatticeSpec) -> Result<FluoriteSites> {
    spec.validate()?;
    if spec.supercell_radius_nm < spec.lattice_constant_nm {
        return Err(Error::DegenerateSupercell {
            radius_nm: spec.supercell_radius_nm,
            lattice_nm: spec.lattice_constant_nm,
        });
    }
    let half_width = (spec.supercell_radius_nm / spec.lattice_constant_nm).ceil() as i64 + 1;
    Ok(FluoriteSites {
        spec: *spec,
        half_width,
    })
}

impl FluoriteSites {
    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    fn cells_per_edge(&self) -> u64 {
        (2 * self.half_width + 1) as u64
    }

    /// Size of the flat index space for one sublattice (the enclosing cube).
    pub fn index_len(&self, sublattice: Sublattice) -> u64 {
        self.cells_per_edge().pow(3) * sublattice.basis().len() as u64
    }

    /// Site with flat index `index`, or `None` when it lies outside the sphere.
    pub fn site(&self, sublattice: Sublattice, index: u64) -> Option<Site> {
        let basis = sublattice.basis();
        let nb = basis.len() as u64;
        let edge = self.cells_per_edge();
        let b = (index % nb) as usize;
        let cell = index / nb;
        let iz = (cell % edge) as i64 - self.half_width;
        let iy = ((cell / edge) % edge) as i64 - self.half_width;
        let ix = (cell / (edge * edge)) as i64 - self.half_width;
        let a = self.spec.lattice_constant_nm;
        let position = [
            (ix as f64 + basis[b][0]) * a,
            (iy as f64 + basis[b][1]) * a,
            (iz as f64 + basis[b][2]) * a,
        ];
        (norm(position) < self.spec.supercell_radius_nm).then_some(Site {
            position,
            sublattice,
        })
    }

    pub fn iter(&self, sublattice: Sublattice) -> impl Iterator<Item = Site> + '_ {
        (0..self.index_len(sublattice)).filter_map(move |i| self.site(sublattice, i))
    }

    /// Materializes every site. Only sensible for small spheres.
    pub fn collect(&self) -> Vec<Site> {
        self.iter(Sublattice::Cation)
            .chain(self.iter(Sublattice::Anion))
            .collect()
    }

    pub fn count(&self, sublattice: Sublattice) -> usize {
        self.iter(sublattice).count()
    }
}

pub(crate) fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub(crate) fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm([a[0] - b[0], a[1] - b[1], a[2] - b[2]])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSpec {
    pub label: String,
    pub g_parallel: f64,
    pub g_perp: f64,
    #[serde(default = "half")]
    pub spin: f64,
    /// Fraction of eligible sites occupied.
    pub concentration: f64,
    pub sublattice: Sublattice,
    /// Optional species-specific bath radius (nm); defaults to the supercell radius.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius_nm: Option<f64>,
}

fn half() -> f64 {
    0.5
}

impl SpeciesSpec {
    pub fn isotropic(label: &str, g: f64, concentration: f64, sublattice: Sublattice) -> Self {
        Self {
            label: label.to_string(),
            g_parallel: g,
            g_perp: g,
            spin: 0.5,
            concentration,
            sublattice,
            radius_nm: None,
        }
    }

    /// Er³⁺ as an effective spin-1/2 with isotropic g = 6.8 on cation sites.
    pub fn erbium(concentration: f64) -> Self {
        Self::isotropic("Er", 6.8, concentration, Sublattice::Cation)
    }

    /// ¹⁷O nuclear spins on anion sites.
    ///
    /// The I = 5/2 nucleus is mapped onto spin-1/2 by matching the dipolar
    /// second moment: g_eff²·S(S+1) = g_I²·I(I+1), with g_I expressed in
    /// Bohr-magneton units.
    pub fn oxygen17(concentration: f64) -> Self {
        let g_i = O17_NUCLEAR_G * crate::constants::ELECTRON_PROTON_MASS_RATIO;
        let spin_i = 2.5_f64;
        let g_eff = g_i * (spin_i * (spin_i + 1.0) / 0.75).sqrt();
        Self::isotropic("O17", g_eff, concentration, Sublattice::Anion)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.concentration) {
            return Err(Error::Invalid(format!(
                "species {}: concentration {} outside [0, 1]",
                self.label, self.concentration
            )));
        }
        if !(self.g_parallel > 0.0 && self.g_perp > 0.0) {
            return Err(Error::Invalid(format!(
                "species {}: g components must be positive",
                self.label
            )));
        }
        if self.spin != 0.5 {
            return Err(Error::UnsupportedSpin(self.spin));
        }
        if let Some(r) = self.radius_nm {
            if !(r > 0.0) {
                return Err(Error::Invalid(format!(
                    "species {}: radius_nm must be positive",
                    self.label
                )));
            }
        }
        Ok(())
    }
}

/// |g_I| of ¹⁷O in nuclear magnetons (μ = −1.89379 μ_N, I = 5/2).
pub const O17_NUCLEAR_G: f64 = 1.893_79 / 2.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BathSpin {
    /// Index into the configuration's species list.
    pub species: usize,
    /// Position, nm.
    pub position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BathConfiguration {
    pub rng_seed: u64,
    pub lattice: LatticeSpec,
    pub species: Vec<SpeciesSpec>,
    pub central: BathSpin,
    pub bath: Vec<BathSpin>,
}

impl BathConfiguration {
    pub fn central_species(&self) -> &SpeciesSpec {
        &self.species[self.central.species]
    }

    pub fn species_of(&self, bath_index: usize) -> &SpeciesSpec {
        &self.species[self.bath[bath_index].species]
    }

    pub fn count_species(&self, species: usize) -> usize {
        self.bath.iter().filter(|s| s.species == species).count()
    }

    /// Distance from the central spin to the closest bath spin of `species`.
    pub fn nearest_distance_nm(&self, species: usize) -> Option<f64> {
        self.bath
            .iter()
            .filter(|s| s.species == species)
            .map(|s| distance(s.position, self.central.position))
            .min_by(|a, b| a.total_cmp(b))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&BathFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: BathFile = serde_json::from_str(text)?;
        file.try_into()
    }
}

/// Randomly occupies `sites` with the species in `species`, excluding the
/// origin cation, which holds the central spin of species `central`.
pub fn populate_bath(
    sites: &FluoriteSites,
    species: &[SpeciesSpec],
    central: usize,
    seed: u64,
) -> Result<BathConfiguration> {
    check_species(species, central)?;
    let mut bath = Vec::new();
    for sublattice in [Sublattice::Cation, Sublattice::Anion] {
        let members: Vec<usize> = (0..species.len())
            .filter(|&k| species[k].sublattice == sublattice && species[k].concentration > 0.0)
            .collect();
        let total: f64 = members.iter().map(|&k| species[k].concentration).sum();
        if total <= 0.0 {
            continue;
        }
        let mut rng = stream_rng(seed, sublattice.stream());
        let len = sites.index_len(sublattice);
        let log_miss = (1.0 - total).ln();
        let mut index: u64 = 0;
        let mut first = true;
        loop {
            // Gap to the next occupied index under independent Bernoulli(total) trials.
            let u: f64 = 1.0 - rng.random::<f64>();
            let gap = if total >= 1.0 { 0.0 } else { (u.ln() / log_miss).floor() };
            if !gap.is_finite() || gap >= len as f64 {
                break;
            }
            index = if first { gap as u64 } else { index + 1 + gap as u64 };
            first = false;
            if index >= len {
                break;
            }
            let pick: f64 = rng.random::<f64>() * total;
            let Some(site) = sites.site(sublattice, index) else {
                continue;
            };
            if site.position == [0.0, 0.0, 0.0] {
                continue;
            }
            let mut acc = 0.0;
            let mut chosen = *members.last().unwrap();
            for &k in &members {
                acc += species[k].concentration;
                if pick < acc {
                    chosen = k;
                    break;
                }
            }
            if let Some(r) = species[chosen].radius_nm {
                if norm(site.position) >= r {
                    continue;
                }
            }
            bath.push(BathSpin {
                species: chosen,
                position: site.position.map(round_sig9),
            });
        }
    }
    Ok(BathConfiguration {
        rng_seed: seed,
        lattice: *sites.spec(),
        species: species.to_vec(),
        central: BathSpin {
            species: central,
            position: [0.0; 3],
        },
        bath,
    })
}

fn check_species(species: &[SpeciesSpec], central: usize) -> Result<()> {
    let central_spec = species
        .get(central)
        .ok_or_else(|| Error::Invalid(format!("central species index {central} out of range")))?;
    if central_spec.sublattice != Sublattice::Cation {
        return Err(Error::Invalid(format!(
            "central species {} must occupy the cation sublattice",
            central_spec.label
        )));
    }
    for s in species {
        s.validate()?;
    }
    for sublattice in [Sublattice::Cation, Sublattice::Anion] {
        let total: f64 = species
            .iter()
            .filter(|s| s.sublattice == sublattice)
            .map(|s| s.concentration)
            .sum();
        if total > 1.0 {
            return Err(Error::ConcentrationOverflow {
                sublattice: sublattice.to_string(),
                total,
            });
        }
    }
    Ok(())
}

/// `n_configs` independent configurations with derived sub-seeds.
pub fn sample_ensemble(
    spec: &LatticeSpec,
    species: &[SpeciesSpec],
    central: usize,
    n_configs: usize,
    seed: u64,
) -> Result<Vec<BathConfiguration>> {
    if n_configs == 0 {
        return Err(Error::Invalid("n_configs must be at least 1".into()));
    }
    let sites = enumerate_sites(spec)?;
    check_species(species, central)?;
    (0..n_configs)
        .into_par_iter()
        .map(|k| populate_bath(&sites, species, central, derive_seed(seed, k as u64)))
        .collect()
}

/// Rounds to 9 significant digits, the precision of the JSON schema.
pub fn round_sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpinRecord {
    species: String,
    pos: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BathFile {
    seed: u64,
    lattice: LatticeSpec,
    central: SpinRecord,
    bath: Vec<SpinRecord>,
    species: Vec<SpeciesSpec>,
}

impl From<&BathConfiguration> for BathFile {
    fn from(c: &BathConfiguration) -> Self {
        let rec = |s: &BathSpin| SpinRecord {
            species: c.species[s.species].label.clone(),
            pos: s.position.map(round_sig9),
        };
        BathFile {
            seed: c.rng_seed,
            lattice: c.lattice,
            central: rec(&c.central),
            bath: c.bath.iter().map(rec).collect(),
            species: c.species.clone(),
        }
    }
}

impl TryFrom<BathFile> for BathConfiguration {
    type Error = Error;

    fn try_from(f: BathFile) -> Result<Self> {
        f.lattice.validate()?;
        let lookup = |label: &str| {
            f.species
                .iter()
                .position(|s| s.label == label)
                .ok_or_else(|| Error::Invalid(format!("unknown species label `{label}`")))
        };
        let central = BathSpin {
            species: lookup(&f.central.species)?,
            position: f.central.pos,
        };
        let bath = f
            .bath
            .iter()
            .map(|r| {
                Ok(BathSpin {
                    species: lookup(&r.species)?,
                    position: r.pos,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BathConfiguration {
            rng_seed: f.seed,
            lattice: f.lattice,
            species: f.species,
            central,
            bath,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn nearest_cation_distance_is_fcc() {
        let spec = LatticeSpec::ceo2(CEO2_LATTICE_NM * 1.01);
        let sites = enumerate_sites(&spec).unwrap();
        let d = sites
            .iter(Sublattice::Cation)
            .map(|s| norm(s.position))
            .filter(|&r| r > 0.0)
            .fold(f64::INFINITY, f64::min);
        assert_relative_eq!(d, CEO2_LATTICE_NM / 2f64.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(d, 0.3826, epsilon = 1e-4);
    }

    #[test]
    fn each_cation_has_eight_anions_at_quarter_diagonal() {
        let a = CEO2_LATTICE_NM;
        let sites = enumerate_sites(&LatticeSpec::ceo2(2.0 * a)).unwrap();
        let bond = 3f64.sqrt() / 4.0 * a;
        let n = sites
            .iter(Sublattice::Anion)
            .filter(|s| (norm(s.position) - bond).abs() < 1e-9)
            .count();
        assert_eq!(n, 8);
        let closer = sites
            .iter(Sublattice::Anion)
            .filter(|s| norm(s.position) < bond - 1e-9)
            .count();
        assert_eq!(closer, 0);
    }

    #[test]
    fn cation_density_matches_four_per_cell() {
        let spec = LatticeSpec::ceo2(10.0);
        // 4 / a³ in m⁻³
        let n_m3 = spec.cation_density_nm3() * 1e27;
        assert_relative_eq!(n_m3, 2.5243e28, max_relative = 1e-3);
    }

    #[test]
    fn anion_cation_ratio_tends_to_two() {
        let sites = enumerate_sites(&LatticeSpec::ceo2(8.0)).unwrap();
        let ratio = sites.count(Sublattice::Anion) as f64 / sites.count(Sublattice::Cation) as f64;
        assert!((ratio - 2.0).abs() < 0.02, "ratio {ratio}");
    }

    #[test]
    fn degenerate_supercell_rejected() {
        let err = enumerate_sites(&LatticeSpec::ceo2(0.3)).unwrap_err();
        assert!(err.to_string().contains("degenerate supercell"));
    }

    #[test]
    fn zero_concentration_gives_empty_bath() {
        let sites = enumerate_sites(&LatticeSpec::ceo2(20.0)).unwrap();
        let cfg = populate_bath(&sites, &[SpeciesSpec::erbium(0.0)], 0, 3).unwrap();
        assert!(cfg.bath.is_empty());
    }

    #[test]
    fn full_occupation_fills_every_site() {
        let sites = enumerate_sites(&LatticeSpec::ceo2(1.5)).unwrap();
        let species = [
            SpeciesSpec::erbium(1.0),
            SpeciesSpec::isotropic("X", 2.0, 1.0, Sublattice::Anion),
        ];
        let cfg = populate_bath(&sites, &species, 0, 3).unwrap();
        let expected = sites.count(Sublattice::Cation) - 1 + sites.count(Sublattice::Anion);
        assert_eq!(cfg.bath.len(), expected);
    }

    #[test]
    fn concentration_overflow_rejected() {
        let sites = enumerate_sites(&LatticeSpec::ceo2(2.0)).unwrap();
        let species = [
            SpeciesSpec::erbium(0.7),
            SpeciesSpec::isotropic("Y", 2.0, 0.5, Sublattice::Cation),
        ];
        assert!(matches!(
            populate_bath(&sites, &species, 0, 1),
            Err(Error::ConcentrationOverflow { .. })
        ));
    }

    #[test]
    fn same_seed_same_configuration() {
        let sites = enumerate_sites(&LatticeSpec::ceo2(40.0)).unwrap();
        let species = [SpeciesSpec::erbium(2e-6), SpeciesSpec::oxygen17(4e-4)];
        let a = populate_bath(&sites, &species, 0, 99).unwrap();
        let b = populate_bath(&sites, &species, 0, 99).unwrap();
        assert_eq!(a, b);
        let c = populate_bath(&sites, &species, 0, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn species_radius_limits_placement() {
        let sites = enumerate_sites(&LatticeSpec::ceo2(20.0)).unwrap();
        let mut o = SpeciesSpec::oxygen17(0.01);
        o.radius_nm = Some(5.0);
        let cfg = populate_bath(&sites, &[SpeciesSpec::erbium(0.0), o], 0, 5).unwrap();
        assert!(!cfg.bath.is_empty());
        assert!(cfg.bath.iter().all(|s| norm(s.position) < 5.0));
    }

    #[test]
    fn json_round_trip() {
        let cfgs = sample_ensemble(
            &LatticeSpec::ceo2(30.0),
            &[SpeciesSpec::erbium(2e-5), SpeciesSpec::oxygen17(4e-4)],
            0,
            2,
            11,
        )
        .unwrap();
        for cfg in cfgs {
            let text = cfg.to_json().unwrap();
            assert_eq!(BathConfiguration::from_json(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn single_config_ensemble_matches_direct_population() {
        let spec = LatticeSpec::ceo2(30.0);
        let species = [SpeciesSpec::erbium(2e-5)];
        let ens = sample_ensemble(&spec, &species, 0, 1, 5).unwrap();
        let direct = populate_bath(&enumerate_sites(&spec).unwrap(), &species, 0, 5).unwrap();
        assert_eq!(ens, vec![direct]);
    }

    #[test]
    fn ensemble_members_are_distinct() {
        let ens = sample_ensemble(&LatticeSpec::ceo2(60.0), &[SpeciesSpec::erbium(2e-6)], 0, 8, 5)
            .unwrap();
        for i in 0..ens.len() {
            for j in 0..i {
                assert_ne!(ens[i].bath, ens[j].bath);
            }
        }
    }

    #[test]
    fn central_species_must_be_cation() {
        let sites = enumerate_sites(&LatticeSpec::ceo2(2.0)).unwrap();
        assert!(populate_bath(&sites, &[SpeciesSpec::oxygen17(0.0)], 0, 1).is_err());
    }
}
