//! Secular dipolar couplings, Zeeman energies, thermal polarization and
//! the conditional bath Hamiltonians of a cluster.
//!
//! Angular frequencies are in rad/s and positions in nm throughout. Every
//! species sits in its own rotating frame: the secular Hamiltonian conserves
//! each species' magnetization separately, so bath Zeeman terms only add
//! branch-independent phases and are left out of the cluster matrices.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constants::{dipolar_prefactor_rad_s_nm3, BOHR_MAGNETON, BOLTZMANN, REDUCED_PLANCK};
use crate::crystal::{distance, BathConfiguration, SpeciesSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConditions {
    /// Applied field along z, tesla.
    pub field_t: f64,
    /// Bath temperature, kelvin.
    pub temperature_k: f64,
}

impl ExperimentConditions {
    pub fn new(field_t: f64, temperature_k: f64) -> Result<Self> {
        let c = Self {
            field_t,
            temperature_k,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.field_t > 0.0 && self.field_t.is_finite()) {
            return Err(Error::Invalid(format!("field must be positive, got {} T", self.field_t)));
        }
        if !(self.temperature_k > 0.0 && self.temperature_k.is_finite()) {
            return Err(Error::Invalid(format!(
                "temperature must be positive, got {} K",
                self.temperature_k
            )));
        }
        Ok(())
    }
}

/// Zeeman splitting g∥·μ_B·B0/ħ in rad/s.
pub fn zeeman_splitting(species: &SpeciesSpec, conditions: &ExperimentConditions) -> f64 {
    species.g_parallel * BOHR_MAGNETON * conditions.field_t / REDUCED_PLANCK
}

/// Dimensionless Zeeman-to-thermal ratio g·μ_B·B0/(2k_B·T).
pub fn boltzmann_argument(g: f64, field_t: f64, temperature_k: f64) -> f64 {
    g * BOHR_MAGNETON * field_t / (2.0 * BOLTZMANN * temperature_k)
}

/// Thermal polarization tanh(g∥μ_B B0 / 2k_B T).
pub fn thermal_polarization(species: &SpeciesSpec, conditions: &ExperimentConditions) -> f64 {
    boltzmann_argument(species.g_parallel, conditions.field_t, conditions.temperature_k).tanh()
}

/// Secular dipolar coupling (μ0/4π)(g_i g_j μ_B²/ħ)(1 − 3cos²θ)/r³ in rad/s.
pub fn dipolar_coupling(pos_i: [f64; 3], pos_j: [f64; 3], g_i: f64, g_j: f64) -> Result<f64> {
    let d = [pos_i[0] - pos_j[0], pos_i[1] - pos_j[1], pos_i[2] - pos_j[2]];
    let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    if r2 == 0.0 {
        return Err(Error::CoincidentSpins(pos_i[0], pos_i[1], pos_i[2]));
    }
    let r = r2.sqrt();
    let cos2 = d[2] * d[2] / r2;
    Ok(dipolar_prefactor_rad_s_nm3() * g_i * g_j * (1.0 - 3.0 * cos2) / (r2 * r))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCoupling {
    pub i: usize,
    pub j: usize,
    /// J_ij, rad/s.
    pub coupling: f64,
    /// Like-species pairs carry the flip-flop term; unlike pairs are Ising only.
    pub flip_flop: bool,
}

#[derive(Debug, Clone)]
pub struct CouplingTable {
    /// Central–bath Ising couplings A_i, rad/s.
    pub central: Vec<f64>,
    /// Bath–bath couplings above the cutoff, sorted by (i, j) with i < j.
    pub pairs: Vec<PairCoupling>,
    /// Species index of every bath spin.
    pub species: Vec<usize>,
    pub geometry_hash: u64,
    index: HashMap<(usize, usize), usize>,
}

impl CouplingTable {
    pub fn len(&self) -> usize {
        self.central.len()
    }

    pub fn is_empty(&self) -> bool {
        self.central.is_empty()
    }

    pub fn pair(&self, i: usize, j: usize) -> Option<&PairCoupling> {
        let key = if i < j { (i, j) } else { (j, i) };
        self.index.get(&key).map(|&k| &self.pairs[k])
    }

    /// Debug dump: `i,j,J_over_2pi_Hz`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "i,j,J_over_2pi_Hz")?;
        for p in &self.pairs {
            writeln!(out, "{},{},{:.9e}", p.i, p.j, p.coupling / std::f64::consts::TAU)?;
        }
        Ok(())
    }
}

/// Couplings for one configuration. Pairs with |J| < `pair_cutoff` (rad/s)
/// are dropped.
pub fn build_coupling_table(config: &BathConfiguration, pair_cutoff: f64) -> Result<CouplingTable> {
    let g_c = config.central_species().g_parallel;
    let central = config
        .bath
        .iter()
        .map(|s| {
            dipolar_coupling(
                config.central.position,
                s.position,
                g_c,
                config.species[s.species].g_parallel,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let species: Vec<usize> = config.bath.iter().map(|s| s.species).collect();

    let g_max = config
        .bath
        .iter()
        .map(|s| config.species[s.species].g_parallel)
        .fold(0.0, f64::max);
    // Largest distance at which any pair can still reach the cutoff (|1 − 3cos²θ| ≤ 2).
    let reach = if pair_cutoff > 0.0 {
        (2.0 * dipolar_prefactor_rad_s_nm3() * g_max * g_max / pair_cutoff).cbrt()
    } else {
        f64::INFINITY
    };

    let mut pairs = Vec::new();
    let mut push = |i: usize, j: usize| -> Result<()> {
        let (si, sj) = (&config.bath[i], &config.bath[j]);
        let g_i = config.species[si.species].g_parallel;
        let g_j = config.species[sj.species].g_parallel;
        let coupling = dipolar_coupling(si.position, sj.position, g_i, g_j)?;
        if coupling.abs() >= pair_cutoff {
            pairs.push(PairCoupling {
                i,
                j,
                coupling,
                flip_flop: si.species == sj.species,
            });
        }
        Ok(())
    };

    let n = config.bath.len();
    let extent = 2.0 * config.lattice.supercell_radius_nm;
    if reach == 0.0 {
        // Infinite cutoff: no pair qualifies.
    } else if reach >= extent / 4.0 || n < 64 {
        for i in 0..n {
            for j in i + 1..n {
                push(i, j)?;
            }
        }
    } else {
        // Cell list with cell edge = reach; only neighbouring cells can pair.
        let cell_of = |p: [f64; 3]| p.map(|x| (x / reach).floor() as i64);
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, s) in config.bath.iter().enumerate() {
            cells.entry(cell_of(s.position)).or_default().push(i);
        }
        for i in 0..n {
            let c = cell_of(config.bath[i].position);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(list) = cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            for &j in list {
                                if j > i && distance(config.bath[i].position, config.bath[j].position) <= reach {
                                    push(i, j)?;
                                }
                            }
                        }
                    }
                }
            }
        }
        pairs.sort_by_key(|p| (p.i, p.j));
    }

    let index = pairs
        .iter()
        .enumerate()
        .map(|(k, p)| ((p.i, p.j), k))
        .collect();
    Ok(CouplingTable {
        central,
        pairs,
        species,
        geometry_hash: geometry_hash(config),
        index,
    })
}

fn geometry_hash(config: &BathConfiguration) -> u64 {
    let mut h = Sha256::new();
    for s in std::iter::once(&config.central).chain(config.bath.iter()) {
        h.update((s.species as u64).to_le_bytes());
        for x in s.position {
            h.update(x.to_le_bytes());
        }
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Conditional Hamiltonians of a cluster.
///
/// Basis index bit k set means member k is down (S_z = −1/2). `plus` is the
/// bath Hamiltonian with the central spin up, `minus` with it down:
/// H_± = Σ ±(A_i/2) S_z^i + Σ_{i<j} J_ij [S_z^i S_z^j − δ_like (S₊^i S₋^j + S₋^i S₊^j)/4].
/// Both are real symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterHamiltonians {
    pub plus: DMatrix<f64>,
    pub minus: DMatrix<f64>,
}

pub const MAX_CLUSTER_ORDER: usize = 4;

/// Member spin projection (±1/2) for basis state `state`.
#[inline]
pub fn sz(state: usize, member: usize) -> f64 {
    if state >> member & 1 == 0 {
        0.5
    } else {
        -0.5
    }
}

pub fn cluster_hamiltonians(
    members: &[usize],
    table: &CouplingTable,
    config: &BathConfiguration,
) -> Result<ClusterHamiltonians> {
    if members.is_empty() || members.len() > MAX_CLUSTER_ORDER {
        return Err(Error::Invalid(format!(
            "cluster order {} outside 1..={MAX_CLUSTER_ORDER}",
            members.len()
        )));
    }
    for &m in members {
        let spin = config.species_of(m).spin;
        if spin != 0.5 {
            return Err(Error::UnsupportedSpin(spin));
        }
    }
    let n = members.len();
    let dim = 1usize << n;
    let mut plus = DMatrix::zeros(dim, dim);
    let mut minus = DMatrix::zeros(dim, dim);
    for s in 0..dim {
        let mut zeeman = 0.0;
        for (k, &m) in members.iter().enumerate() {
            zeeman += 0.5 * table.central[m] * sz(s, k);
        }
        plus[(s, s)] = zeeman;
        minus[(s, s)] = -zeeman;
    }
    for a in 0..n {
        for b in a + 1..n {
            let Some(p) = table.pair(members[a], members[b]) else {
                continue;
            };
            for s in 0..dim {
                let ising = p.coupling * sz(s, a) * sz(s, b);
                plus[(s, s)] += ising;
                minus[(s, s)] += ising;
                let differ = (s >> a & 1) != (s >> b & 1);
                if p.flip_flop && differ {
                    let t = s ^ (1 << a) ^ (1 << b);
                    plus[(t, s)] = -0.25 * p.coupling;
                    minus[(t, s)] = -0.25 * p.coupling;
                }
            }
        }
    }
    Ok(ClusterHamiltonians { plus, minus })
}
