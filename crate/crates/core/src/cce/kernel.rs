//! Exact propagation of one cluster through a pulse schedule.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::Result;
use crate::hamiltonian::{ClusterHamiltonians, CouplingTable};
use crate::sequences::{Schedule, Step};

type CMat = DMatrix<Complex64>;

/// Eigendecomposition H = V diag(λ) Vᵀ of a real symmetric matrix.
#[derive(Debug, Clone)]
pub(crate) struct SymmetricEigen {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

pub(crate) fn eigh(h: &DMatrix<f64>) -> SymmetricEigen {
    match h.nrows() {
        1 => SymmetricEigen {
            values: vec![h[(0, 0)]],
            vectors: DMatrix::identity(1, 1),
        },
        2 => {
            let (a, b, c) = (h[(0, 0)], h[(0, 1)], h[(1, 1)]);
            let mean = 0.5 * (a + c);
            let half = 0.5 * (a - c);
            let r = half.hypot(b);
            let angle = 0.5 * b.atan2(half);
            let (s, co) = angle.sin_cos();
            SymmetricEigen {
                values: vec![mean + r, mean - r],
                vectors: DMatrix::from_row_slice(2, 2, &[co, -s, s, co]),
            }
        }
        _ => {
            let e = h.clone().symmetric_eigen();
            SymmetricEigen {
                values: e.eigenvalues.iter().copied().collect(),
                vectors: e.eigenvectors,
            }
        }
    }
}

impl SymmetricEigen {
    /// exp(−iH dt).
    fn propagator(&self, dt: f64) -> CMat {
        let n = self.values.len();
        let phases: Vec<Complex64> = self
            .values
            .iter()
            .map(|&l| Complex64::from_polar(1.0, -l * dt))
            .collect();
        let v = &self.vectors;
        CMat::from_fn(n, n, |r, c| {
            (0..n).fold(Complex64::new(0.0, 0.0), |acc, k| {
                acc + phases[k] * (v[(r, k)] * v[(c, k)])
            })
        })
    }
}

/// Rotation exp(−iθ(cos φ S_x + sin φ S_y)) applied to the members in
/// `mask`, as a matrix on the full 2ⁿ cluster space.
fn rotation(n_members: usize, mask: u32, angle: f64, phase: f64) -> CMat {
    let dim = 1usize << n_members;
    let (s, c) = (0.5 * angle).sin_cos();
    let i = Complex64::i();
    // Single-spin matrix in (up, down) = (bit 0, bit 1) order.
    let single = [
        [Complex64::new(c, 0.0), -i * s * Complex64::from_polar(1.0, -phase)],
        [-i * s * Complex64::from_polar(1.0, phase), Complex64::new(c, 0.0)],
    ];
    CMat::from_fn(dim, dim, |row, col| {
        let mut v = Complex64::new(1.0, 0.0);
        for k in 0..n_members {
            let (br, bc) = ((row >> k) & 1, (col >> k) & 1);
            if mask >> k & 1 == 1 {
                v *= single[br][bc];
            } else if br != bc {
                return Complex64::new(0.0, 0.0);
            }
        }
        v
    })
}

fn mat_pow(m: &CMat, mut e: usize) -> CMat {
    let mut result = CMat::identity(m.nrows(), m.ncols());
    let mut base = m.clone();
    while e > 0 {
        if e & 1 == 1 {
            result = &base * &result;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Basis states reachable from `state` through flip-flop terms; with no bath
/// rotation the evolution never leaves this set.
pub(crate) fn flip_flop_sector(members: &[usize], table: &CouplingTable, state: usize) -> Vec<usize> {
    let n = members.len();
    let mut bonds = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if let Some(p) = table.pair(members[a], members[b]) {
                if p.flip_flop {
                    bonds.push((a, b));
                }
            }
        }
    }
    let mut sector = vec![state];
    let mut k = 0;
    while k < sector.len() {
        let s = sector[k];
        for &(a, b) in &bonds {
            if (s >> a & 1) != (s >> b & 1) {
                let t = s ^ (1 << a) ^ (1 << b);
                if !sector.contains(&t) {
                    sector.push(t);
                }
            }
        }
        k += 1;
    }
    sector.sort_unstable();
    sector
}

/// Prepared cluster: eigendecompositions of both conditional Hamiltonians
/// on the space the initial state can explore.
pub(crate) struct PreparedCluster {
    plus: SymmetricEigen,
    minus: SymmetricEigen,
    psi0: DVector<Complex64>,
    n_members: usize,
    rot_mask: u32,
}

impl PreparedCluster {
    pub(crate) fn new(
        h: &ClusterHamiltonians,
        members: &[usize],
        table: &CouplingTable,
        state: usize,
        rot_mask: u32,
    ) -> Self {
        let n = members.len();
        let (plus, minus, psi0) = if rot_mask == 0 {
            let sector = flip_flop_sector(members, table, state);
            let d = sector.len();
            let restrict = |m: &DMatrix<f64>| DMatrix::from_fn(d, d, |r, c| m[(sector[r], sector[c])]);
            let mut psi0 = DVector::zeros(d);
            psi0[sector.iter().position(|&s| s == state).unwrap()] = Complex64::new(1.0, 0.0);
            (eigh(&restrict(&h.plus)), eigh(&restrict(&h.minus)), psi0)
        } else {
            let mut psi0 = DVector::zeros(1 << n);
            psi0[state] = Complex64::new(1.0, 0.0);
            (eigh(&h.plus), eigh(&h.minus), psi0)
        };
        Self {
            plus,
            minus,
            psi0,
            n_members: n,
            rot_mask,
        }
    }

    fn propagate(&self, schedule: &Schedule, start_plus: bool) -> CMat {
        let d = self.psi0.len();
        let mut u = CMat::identity(d, d);
        let mut plus = start_plus;
        let block = |steps: &[Step], mut p: bool| -> (CMat, bool) {
            let mut b = CMat::identity(d, d);
            for step in steps {
                match *step {
                    Step::Evolve(dt) => {
                        if dt != 0.0 {
                            let e = if p { &self.plus } else { &self.minus };
                            b = e.propagator(dt) * b;
                        }
                    }
                    Step::Pulse { bath } => {
                        p = !p;
                        if let Some((angle, phase)) = bath {
                            if self.rot_mask != 0 {
                                b = rotation(self.n_members, self.rot_mask, angle, phase) * b;
                            }
                        }
                    }
                }
            }
            (b, p)
        };
        for (steps, reps) in &schedule.blocks {
            let (b, after) = block(steps, plus);
            if after == plus {
                u = mat_pow(&b, *reps) * u;
            } else {
                let (b2, _) = block(steps, !plus);
                let pair = &b2 * &b;
                u = mat_pow(&pair, reps / 2) * u;
                if reps % 2 == 1 {
                    u = b * u;
                    plus = !plus;
                }
            }
        }
        u
    }

    /// ⟨ψ₀|U_B† U_A|ψ₀⟩ for one schedule.
    pub(crate) fn coherence(&self, schedule: &Schedule) -> Complex64 {
        let a = self.propagate(schedule, true) * &self.psi0;
        let b = self.propagate(schedule, false) * &self.psi0;
        b.dotc(&a)
    }
}

/// Coherence of one cluster at each schedule; `None` stands for t = 0.
pub(crate) fn evaluate(
    h: &ClusterHamiltonians,
    members: &[usize],
    table: &CouplingTable,
    state: usize,
    rot_mask: u32,
    schedules: &[Option<Schedule>],
) -> Result<Vec<Complex64>> {
    let prepared = PreparedCluster::new(h, members, table, state, rot_mask);
    Ok(schedules
        .iter()
        .map(|s| match s {
            None => Complex64::new(1.0, 0.0),
            Some(s) => prepared.coherence(s),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eigh_two_by_two_reconstructs() {
        for &(a, b, c) in &[(1.0, 0.3, -2.0), (0.5, -4.0, 0.5), (3.0, 0.0, 3.0), (-1.0, 1e-9, 2.0)] {
            let h = DMatrix::from_row_slice(2, 2, &[a, b, b, c]);
            let e = eigh(&h);
            let rebuilt = &e.vectors * DMatrix::from_diagonal(&DVector::from_vec(e.values.clone())) * e.vectors.transpose();
            assert!((rebuilt - &h).norm() < 1e-14 * (1.0 + h.norm()));
        }
    }

    #[test]
    fn propagator_is_unitary() {
        let h = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, -0.5, 0.7, 0.0, 0.7, 0.1]);
        let u = eigh(&h).propagator(2.3);
        let id = u.adjoint() * &u;
        assert!((id - CMat::identity(3, 3)).norm() < 1e-13);
    }

    #[test]
    fn pi_rotation_flips_spin() {
        let r = rotation(1, 1, std::f64::consts::PI, 0.0);
        assert_relative_eq!(r[(0, 0)].norm(), 0.0, epsilon = 1e-15);
        assert_relative_eq!(r[(1, 0)].norm(), 1.0, epsilon = 1e-15);
        // Only the masked member of a two-spin space is touched.
        let r2 = rotation(2, 0b10, std::f64::consts::PI, 0.3);
        assert_relative_eq!(r2[(2, 0)].norm(), 1.0, epsilon = 1e-15);
        assert_eq!(r2[(1, 0)], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn matrix_power_matches_repeated_product() {
        let h = DMatrix::from_row_slice(2, 2, &[0.3, 1.1, 1.1, -0.4]);
        let u = eigh(&h).propagator(0.7);
        let mut manual = CMat::identity(2, 2);
        for _ in 0..13 {
            manual = &u * manual;
        }
        assert!((mat_pow(&u, 13) - manual).norm() < 1e-13);
    }
}
