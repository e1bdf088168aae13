use super::*;
use crate::crystal::{BathSpin, LatticeSpec, SpeciesSpec, Sublattice};
use approx::assert_relative_eq;

fn config(positions: &[[f64; 3]]) -> BathConfiguration {
    BathConfiguration {
        rng_seed: 11,
        lattice: LatticeSpec::ceo2(60.0),
        species: vec![SpeciesSpec::erbium(2e-6)],
        central: BathSpin {
            species: 0,
            position: [0.0; 3],
        },
        bath: positions
            .iter()
            .map(|&position| BathSpin { species: 0, position })
            .collect(),
    }
}

fn settings(grid: Vec<f64>) -> CceSettings {
    CceSettings {
        time_grid: grid,
        n_bath_samples: 20,
        n_configurations: 1,
        ..CceSettings::default()
    }
}

fn grid(t_max: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| t_max * k as f64 / (n - 1) as f64).collect()
}

fn sample(spins: &[i8]) -> BathSample {
    BathSample {
        spins: spins.to_vec(),
        resonant: vec![false; spins.len()],
    }
}

#[test]
fn three_coupled_spins_give_three_singletons_and_three_pairs() {
    let c = config(&[[5.0, 0.0, 0.0], [0.0, 6.0, 1.0], [2.0, 3.0, 7.0]]);
    let table = build_coupling_table(&c, 0.0).unwrap();
    let clusters = enumerate_clusters(&table, &settings(grid(1e-5, 5)));
    let orders: Vec<usize> = clusters.iter().map(Cluster::order).collect();
    assert_eq!(orders, vec![1, 1, 1, 2, 2, 2]);
    let mut sorted = clusters.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), 6);

    let s = CceSettings {
        pair_cutoff: f64::INFINITY,
        ..settings(grid(1e-5, 5))
    };
    assert_eq!(enumerate_clusters(&table, &s).len(), 3);

    let s = CceSettings {
        max_order: 3,
        ..settings(grid(1e-5, 5))
    };
    let clusters = enumerate_clusters(&table, &s);
    assert_eq!(clusters.len(), 7);
    assert_eq!(clusters[6].members(), &[0, 1, 2]);
}

#[test]
fn cluster_rejects_bad_sizes() {
    assert!(Cluster::new(vec![]).is_err());
    assert!(Cluster::new(vec![0, 1, 2, 3, 4]).is_err());
    assert_eq!(Cluster::new(vec![3, 1, 3]).unwrap().members(), &[1, 3]);
}

#[test]
fn cold_bath_is_polarized() {
    let c = config(&(1..=300).map(|k| [k as f64, 0.5, 0.0]).collect::<Vec<_>>());
    let cold = ExperimentConditions::new(0.0589, 0.010).unwrap();
    let spins = sample_bath_state(&c, &cold, 3);
    assert!(spins.iter().all(|&s| s == 1));
    assert_eq!(spins, sample_bath_state(&c, &cold, 3));
    let hot = ExperimentConditions::new(0.0589, 1e6).unwrap();
    let up = (0..20)
        .flat_map(|k| sample_bath_state(&c, &hot, k))
        .filter(|&s| s == 1)
        .count() as f64;
    // 6000 fair coins.
    assert!((up / 6000.0 - 0.5).abs() < 0.03);
}

#[test]
fn down_spins_are_nested_across_temperatures() {
    let c = config(&(1..=200).map(|k| [k as f64, 0.0, 2.0]).collect::<Vec<_>>());
    let warm = sample_bath_state(&c, &ExperimentConditions::new(0.0589, 0.4).unwrap(), 9);
    let cool = sample_bath_state(&c, &ExperimentConditions::new(0.0589, 0.08).unwrap(), 9);
    for (w, c) in warm.iter().zip(&cool) {
        assert!(*c == 1 || *w == -1);
    }
}

#[test]
fn time_grid_must_start_at_zero() {
    let c = config(&[[5.0, 0.0, 0.0]]);
    let table = build_coupling_table(&c, 0.0).unwrap();
    let cl = Cluster::new(vec![0]).unwrap();
    let err = cluster_coherence(&cl, &table, &c, &sample(&[1]), &SequenceTemplate::Hahn, &[1e-6, 2e-6]);
    assert!(matches!(err, Err(Error::BadTimeGrid)));
}

#[test]
fn polarized_pair_never_decays() {
    let c = config(&[[8.0, 0.0, 0.0], [0.0, 4.0, 9.0]]);
    let s = settings(grid(2e-4, 9));
    let (l, _) = sample_coherence(&c, &s, &sample(&[1, 1]), &SequenceTemplate::Hahn).unwrap();
    for v in l {
        assert_relative_eq!(v.norm(), 1.0, epsilon = 1e-12);
    }
}

#[test]
fn singletons_refocus_under_hahn() {
    let c = config(&[[8.0, 0.0, 0.0]]);
    let table = build_coupling_table(&c, 0.0).unwrap();
    let cl = Cluster::new(vec![0]).unwrap();
    let g = grid(1e-4, 6);
    for spins in [[1], [-1]] {
        let l = cluster_coherence(&cl, &table, &c, &sample(&spins), &SequenceTemplate::Hahn, &g).unwrap();
        for v in l {
            assert_relative_eq!(v.re, 1.0, epsilon = 1e-12);
            assert_relative_eq!(v.im, 0.0, epsilon = 1e-12);
        }
    }
}

#[test]
fn antiparallel_pair_decays_and_two_disjoint_pairs_factorize() {
    let c = config(&[[6.0, 0.0, 0.0], [6.5, 3.0, 0.0], [-9.0, 0.0, 4.0], [-9.0, 3.5, 4.0]]);
    let table = build_coupling_table(&c, 0.0).unwrap();
    let g = grid(3e-4, 13);
    let spins = [1, -1, -1, 1];
    let pair_a = cluster_coherence(&Cluster::new(vec![0, 1]).unwrap(), &table, &c, &sample(&spins), &SequenceTemplate::Hahn, &g).unwrap();
    let pair_b = cluster_coherence(&Cluster::new(vec![2, 3]).unwrap(), &table, &c, &sample(&spins), &SequenceTemplate::Hahn, &g).unwrap();
    assert!(pair_a.iter().any(|v| v.norm() < 0.999));
    // Only the two intra-pair couplings survive a cutoff between them.
    let weak = table.pairs.iter().filter(|p| !matches!((p.i, p.j), (0, 1) | (2, 3))).map(|p| p.coupling.abs()).fold(0.0, f64::max);
    let strong = table.pair(0, 1).unwrap().coupling.abs().min(table.pair(2, 3).unwrap().coupling.abs());
    assert!(weak < strong);
    let s = CceSettings {
        pair_cutoff: 0.5 * (weak + strong),
        ..settings(g.clone())
    };
    let (total, _) = sample_coherence(&c, &s, &sample(&spins), &SequenceTemplate::Hahn).unwrap();
    for t in 0..g.len() {
        assert_relative_eq!((total[t] - pair_a[t] * pair_b[t]).norm(), 0.0, epsilon = 1e-13);
    }
}

#[test]
fn single_pair_product_is_raw_pair() {
    let c = config(&[[6.0, 0.0, 0.0], [6.5, 3.0, 0.0]]);
    let table = build_coupling_table(&c, 0.0).unwrap();
    let g = grid(3e-4, 7);
    let clusters = enumerate_clusters(&table, &settings(g.clone()));
    let sm = sample(&[1, -1]);
    let curves: Vec<Vec<Complex64>> = clusters
        .iter()
        .map(|cl| cluster_coherence(cl, &table, &c, &sm, &SequenceTemplate::Hahn, &g).unwrap())
        .collect();
    let (total, div) = assemble_coherence(&clusters, &curves).unwrap();
    assert_eq!(div, 0);
    for t in 0..g.len() {
        assert_relative_eq!((total[t] - curves[2][t]).norm(), 0.0, epsilon = 1e-14);
    }
}

#[test]
fn divergent_divisions_are_excluded_and_counted() {
    let clusters = vec![
        Cluster::new(vec![0]).unwrap(),
        Cluster::new(vec![1]).unwrap(),
        Cluster::new(vec![0, 1]).unwrap(),
    ];
    let one = Complex64::new(1.0, 0.0);
    let curves = vec![
        vec![one, Complex64::new(0.0, 0.0)],
        vec![one, one],
        vec![one, Complex64::new(0.5, 0.0)],
    ];
    let (total, div) = assemble_coherence(&clusters, &curves).unwrap();
    assert_eq!(div, 1);
    assert_eq!(total[1], Complex64::new(0.0, 0.0));
}

#[test]
fn streaming_evaluation_matches_per_sample_assembly() {
    let lattice = LatticeSpec::ceo2(40.0);
    let species = vec![SpeciesSpec::erbium(4e-6)];
    let c = crate::crystal::sample_ensemble(&lattice, &species, 0, 1, 4).unwrap().remove(0);
    assert!(c.bath.len() > 10);
    let cond = ExperimentConditions::new(0.0589, 0.2).unwrap();
    for (template, max_order) in [
        (SequenceTemplate::Hahn, 2),
        (SequenceTemplate::Hahn, 3),
        (SequenceTemplate::GeneralizedHahn { theta: 2.0 }, 2),
        (SequenceTemplate::Xy8 { n_pulses: 16 }, 2),
    ] {
        let s = CceSettings {
            max_order,
            pair_cutoff: std::f64::consts::TAU * 50.0,
            n_bath_samples: 6,
            resonant_fraction: 0.3,
            bath_radius_nm: 100.0,
            ..settings(grid(1e-5, 6))
        };
        let eval = evaluate_configuration(&c, &s, &cond, &template).unwrap();
        for k in 0..s.n_bath_samples {
            let smp = sample_bath(&c, &cond, s.resonant_fraction, sample_seed(s.seed, &c, k));
            let (direct, _) = sample_coherence(&c, &s, &smp, &template).unwrap();
            for t in 0..direct.len() {
                assert!(direct[t].is_finite());
                assert_relative_eq!((direct[t] - eval.samples[k][t]).norm(), 0.0, epsilon = 1e-12 * direct[t].norm().max(1.0));
            }
        }
    }
}

#[test]
fn generalized_hahn_at_pi_without_resonant_spins_equals_hahn() {
    let c = config(&[[6.0, 0.0, 0.0], [6.5, 3.0, 0.0], [-4.0, 2.0, 1.0]]);
    let s = settings(grid(2e-4, 9));
    let smp = sample(&[1, -1, 1]);
    let (a, _) = sample_coherence(&c, &s, &smp, &SequenceTemplate::Hahn).unwrap();
    let (b, _) = sample_coherence(&c, &s, &smp, &SequenceTemplate::GeneralizedHahn { theta: std::f64::consts::PI }).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_relative_eq!((x - y).norm(), 0.0, epsilon = 1e-13);
    }
}

#[test]
fn resonant_pi_rotation_dephases_even_a_polarized_bath() {
    let c = config(&[[6.0, 0.0, 0.0], [6.5, 3.0, 0.0]]);
    let s = settings(grid(2e-4, 9));
    let smp = BathSample {
        spins: vec![1, 1],
        resonant: vec![true, false],
    };
    let (l, _) = sample_coherence(&c, &s, &smp, &SequenceTemplate::GeneralizedHahn { theta: std::f64::consts::PI }).unwrap();
    assert!(l.iter().any(|v| v.norm() < 0.99 || v.arg().abs() > 0.1));
}

#[test]
fn ensemble_is_normalized_and_deterministic() {
    let lattice = LatticeSpec::ceo2(50.0);
    let species = vec![SpeciesSpec::erbium(1e-5)];
    let configs = crate::crystal::sample_ensemble(&lattice, &species, 0, 3, 8).unwrap();
    let cond = ExperimentConditions::new(0.0589, 0.3).unwrap();
    let s = CceSettings {
        n_bath_samples: 10,
        n_configurations: 3,
        ..settings(grid(4e-5, 9))
    };
    let a = ensemble_average(&configs, &s, &cond, &SequenceTemplate::Hahn).unwrap();
    assert_eq!(a.curve.l_abs[0], 1.0);
    for (l, e) in a.curve.l_abs.iter().zip(&a.curve.std_err) {
        assert!(*l <= 1.0 + 3.0 * e + 1e-12);
        assert!(*e >= 0.0);
    }
    assert!(a.curve.l_abs.last().unwrap() < &0.99);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let b = pool.install(|| ensemble_average(&configs, &s, &cond, &SequenceTemplate::Hahn).unwrap());
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.diagnostics.n_configurations, 3);
    assert!(a.curve.to_csv().starts_with("t_us,L_abs,std_err\n"));
}

#[test]
fn one_sample_ensemble_equals_single_evaluation() {
    let lattice = LatticeSpec::ceo2(40.0);
    let species = vec![SpeciesSpec::erbium(2e-5)];
    let configs = crate::crystal::sample_ensemble(&lattice, &species, 0, 1, 2).unwrap();
    let cond = ExperimentConditions::new(0.0589, 0.3).unwrap();
    let s = CceSettings {
        n_bath_samples: 1,
        ..settings(grid(4e-5, 5))
    };
    let e = ensemble_average(&configs, &s, &cond, &SequenceTemplate::Hahn).unwrap();
    let smp = sample_bath(&configs[0], &cond, s.resonant_fraction, sample_seed(s.seed, &configs[0], 0));
    let (l, _) = sample_coherence(&configs[0], &s, &smp, &SequenceTemplate::Hahn).unwrap();
    for (a, b) in e.curve.l_abs.iter().zip(&l) {
        assert_relative_eq!(*a, b.norm(), max_relative = 1e-14);
    }
}

#[test]
fn settings_validation() {
    let mut s = CceSettings::default();
    assert!(s.validate().is_ok());
    s.n_bath_samples = 0;
    assert!(s.validate().is_err());
    let s = CceSettings {
        time_grid: vec![0.0, 2.0, 1.0],
        ..CceSettings::default()
    };
    assert!(matches!(s.validate(), Err(Error::BadTimeGrid)));
    let s = CceSettings {
        max_order: 5,
        ..CceSettings::default()
    };
    assert!(s.validate().is_err());
    let text = "max_order = 2\nbogus = 1\n";
    assert!(toml::from_str::<CceSettings>(text).is_err());
}

#[test]
fn t2_fit_round_trips() {
    let t = grid(120e-6, 40);
    let l: Vec<f64> = t.iter().map(|t| (-(t / 40e-6f64).powf(1.5)).exp()).collect();
    let e = fit_t2(&t, &l, None).unwrap();
    assert_relative_eq!(e.t2, 40e-6, max_relative = 1e-3);
    assert_relative_eq!(e.stretch, 1.5, max_relative = 1e-3);
    let l: Vec<f64> = t.iter().map(|t| (-(t / 30e-6f64)).exp()).collect();
    let e = fit_t2(&t, &l, Some(1.0)).unwrap();
    assert_relative_eq!(e.t2, 30e-6, max_relative = 1e-3);
    assert_eq!(e.stretch, 1.0);
    assert!(fit_t2(&t[..4], &l[..4], None).is_err());
}

#[test]
fn mixed_species_pairs_are_ising_only() {
    let mut c = config(&[[6.0, 0.0, 0.0], [6.5, 3.0, 0.0]]);
    c.species.push(SpeciesSpec::isotropic("g2", 2.0, 1e-6, Sublattice::Cation));
    c.bath[1].species = 1;
    let s = settings(grid(3e-4, 9));
    let (l, _) = sample_coherence(&c, &s, &sample(&[1, -1]), &SequenceTemplate::Hahn).unwrap();
    for v in l {
        assert_relative_eq!(v.norm(), 1.0, epsilon = 1e-12);
    }
}
