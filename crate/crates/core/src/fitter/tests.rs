use super::synthetic::{axis_points, generate, linspace, logspace, three_pulse_points, Noise};
use super::*;
use approx::assert_relative_eq;

fn opts() -> FitOptions {
    FitOptions::default()
}

#[test]
fn stretched_exp_round_trip() {
    let t = linspace(0.0, 120.0, 40);
    let d = generate("stretched_exp", &[1.0, 40.0, 1.5], &axis_points("t_us", &t), Noise::Absolute(0.0), 1).unwrap();
    let r = fit("stretched_exp", &d, &opts()).unwrap();
    assert!(r.converged);
    assert_relative_eq!(r.value("t2_us").unwrap(), 40.0, max_relative = 1e-6);
    assert_relative_eq!(r.value("x").unwrap(), 1.5, max_relative = 1e-6);
    assert_relative_eq!(r.value("a").unwrap(), 1.0, max_relative = 1e-6);
}

#[test]
fn id_line_matches_weighted_regression() {
    let f = [0.05, 0.2, 0.35, 0.5, 0.7, 0.85, 1.0];
    let y = [19.1, 20.6, 21.0, 21.9, 23.2, 23.8, 24.9];
    let s = [0.3, 0.5, 0.4, 0.6, 0.5, 0.3, 0.8];
    let d = Dataset {
        records: (0..7)
            .map(|k| Record {
                vars: [("f_sin2".to_string(), f[k])].into_iter().collect(),
                observed: y[k],
                sigma: s[k],
            })
            .collect(),
    };
    let r = fit("id_line", &d, &opts()).unwrap();
    // Closed-form weighted least squares.
    let w: Vec<f64> = s.iter().map(|s| 1.0 / (s * s)).collect();
    let sw: f64 = w.iter().sum();
    let sx: f64 = (0..7).map(|k| w[k] * f[k]).sum();
    let sy: f64 = (0..7).map(|k| w[k] * y[k]).sum();
    let sxx: f64 = (0..7).map(|k| w[k] * f[k] * f[k]).sum();
    let sxy: f64 = (0..7).map(|k| w[k] * f[k] * y[k]).sum();
    let det = sw * sxx - sx * sx;
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    assert_relative_eq!(r.value("rate_sd_per_ms").unwrap(), intercept, max_relative = 1e-10);
    assert_relative_eq!(r.value("rate_id_per_ms").unwrap(), slope, max_relative = 1e-10);
    let chi2: f64 = (0..7).map(|k| w[k] * (y[k] - intercept - slope * f[k]).powi(2)).sum();
    assert_relative_eq!(r.chi2_red, chi2 / 5.0, max_relative = 1e-8);
    // Unscaled covariance of the slope is sw/det.
    assert_relative_eq!(r.sigma("rate_id_per_ms").unwrap(), (sw / det * chi2 / 5.0).sqrt(), max_relative = 1e-6);
}

fn three_pulse_data(noise: f64, seed: u64) -> Dataset {
    // a0, Γ0 kHz, Γ_SD kHz, R 1/ms, T1 ms
    let params = [1.0, 3.0, 82.8, 3.2, 119.3];
    let tws = logspace(10.0, 300_000.0, 30);
    generate(
        "eq1_three_pulse",
        &params,
        &three_pulse_points(&[0.9, 1.5, 2.0, 3.0, 4.0], &tws),
        Noise::Absolute(noise),
        seed,
    )
    .unwrap()
}

#[test]
fn global_three_pulse_recovers_parameters() {
    let d = three_pulse_data(0.01, 7);
    let r = global_fit_three_pulse(&d, false, &opts()).unwrap();
    assert!(r.converged);
    assert_relative_eq!(r.value("gamma_sd_khz").unwrap(), 82.8, max_relative = 0.05);
    assert_relative_eq!(r.value("r_per_ms").unwrap(), 3.2, max_relative = 0.05);
    assert_relative_eq!(r.value("t1_ms").unwrap(), 119.3, max_relative = 0.10);
    assert!(r.params["gamma0_khz"].fixed);
    assert!(r.params.contains_key("a0_tau5"));
}

#[test]
fn global_three_pulse_is_order_invariant() {
    let d = three_pulse_data(0.01, 8);
    let mut shuffled = d.clone();
    shuffled.records.reverse();
    shuffled.records.rotate_left(17);
    let a = global_fit_three_pulse(&d, false, &opts()).unwrap();
    let b = global_fit_three_pulse(&shuffled, false, &opts()).unwrap();
    for (name, p) in &a.params {
        assert_relative_eq!(p.value, b.params[name].value, max_relative = 1e-10);
    }
}

#[test]
fn fixing_t1_agrees_with_free_fit() {
    let d = three_pulse_data(0.01, 9);
    let free = global_fit_three_pulse(&d, false, &opts()).unwrap();
    let mut o = opts();
    o.fix.insert("t1_ms".into(), 119.3);
    let fixed = global_fit_three_pulse(&d, false, &o).unwrap();
    for name in ["gamma_sd_khz", "r_per_ms"] {
        let (a, b) = (free.params[name].clone(), fixed.params[name].clone());
        assert!((a.value - b.value).abs() < 2.0 * (a.sigma + b.sigma), "{name}");
    }
}

#[test]
fn single_group_falls_back_with_warning() {
    let tws = logspace(10.0, 300_000.0, 30);
    let d = generate(
        "eq1_three_pulse",
        &[1.0, 0.0, 82.8, 3.2, 119.3],
        &three_pulse_points(&[2.0], &tws),
        Noise::Absolute(0.0),
        1,
    )
    .unwrap();
    let r = global_fit_three_pulse(&d, false, &opts()).unwrap();
    assert_eq!(r.warnings.len(), 1);
    assert_relative_eq!(r.value("r_per_ms").unwrap(), 3.2, max_relative = 1e-5);
}

fn sech2_data(noise: f64, seed: u64) -> Dataset {
    let temps = linspace(60.0, 500.0, 6);
    generate(
        "gamma_sd_sech2",
        &[706.7, 6.17, 58.9],
        &axis_points("temperature_mK", &temps),
        Noise::Relative(noise),
        seed,
    )
    .unwrap()
}

#[test]
fn sech2_law_round_trip() {
    let r = fit_temperature_laws(&sech2_data(0.05, 3), TemperatureLaw::GammaSdSech2, &opts()).unwrap();
    assert_relative_eq!(r.value("gamma_max_khz").unwrap(), 706.7, max_relative = 0.10);
    assert_relative_eq!(r.value("g_s").unwrap(), 6.17, max_relative = 0.10);
    let exact = fit_temperature_laws(&sech2_data(0.0, 3), TemperatureLaw::GammaSdSech2, &opts()).unwrap();
    assert_relative_eq!(exact.value("g_s").unwrap(), 6.17, max_relative = 1e-6);
}

#[test]
fn rate_law_round_trip() {
    let temps = linspace(60.0, 500.0, 8);
    let alpha = 3.7e-36;
    let d = generate(
        "rate_eq2",
        &[alpha, 0.0, 7.34, 6.8, CEO2_ER_DENSITY_M3, 1e6, 58.9],
        &axis_points("temperature_mK", &temps),
        Noise::Relative(0.05),
        4,
    )
    .unwrap();
    let r = fit_temperature_laws(&d, TemperatureLaw::RateEq2, &opts()).unwrap();
    assert_relative_eq!(r.value("g_s").unwrap(), 7.34, max_relative = 0.10);
    assert!(r.params["alpha_ph"].fixed);
    assert_eq!(r.value("alpha_ph"), Some(0.0));
}

#[test]
fn equal_temperatures_are_degenerate() {
    let d = generate(
        "gamma_sd_sech2",
        &[706.7, 6.17, 58.9],
        &axis_points("temperature_mK", &[80.0; 6]),
        Noise::Relative(0.05),
        1,
    )
    .unwrap();
    let e = fit_temperature_laws(&d, TemperatureLaw::GammaSdSech2, &opts()).unwrap_err();
    assert!(e.to_string().contains("degenerate problem"));
}

#[test]
fn g_s_bounds_hold_in_every_iterate() {
    let model = model_by_name("gamma_sd_sech2").unwrap();
    let d = sech2_data(0.3, 5);
    let mut o = opts();
    o.initial.insert("g_s".into(), 14.9);
    let problem = FitProblem::from_model(model, &d, &o).unwrap();
    let seen = Arc::new(std::sync::Mutex::new(Vec::new()));
    let (inner, log) = (problem.eval.clone(), seen.clone());
    let spy = FitProblem {
        eval: Arc::new(move |p: &[f64], r: &Record| {
            log.lock().unwrap().push(p[1]);
            inner(p, r)
        }),
        ..problem
    };
    minimize(&spy, &d).unwrap();
    let seen = seen.lock().unwrap();
    assert!(seen.len() > 10);
    assert!(seen.iter().all(|g| (1.0..=15.0).contains(g)));
}

#[test]
fn converges_from_perturbed_starts() {
    let d = sech2_data(0.0, 1);
    for (scale_g, scale_s) in [(1.5, 0.5), (0.5, 1.5), (1.5, 1.5), (0.5, 0.5)] {
        let mut o = opts();
        o.initial.insert("gamma_max_khz".into(), 706.7 * scale_g);
        o.initial.insert("g_s".into(), 6.17 * scale_s);
        let r = fit("gamma_sd_sech2", &d, &o).unwrap();
        assert_relative_eq!(r.value("g_s").unwrap(), 6.17, max_relative = 1e-6);
    }
    let t = linspace(0.0, 120.0, 40);
    let d = generate("stretched_exp", &[1.0, 40.0, 1.5], &axis_points("t_us", &t), Noise::Absolute(0.0), 1).unwrap();
    for s in [0.5, 1.5] {
        let mut o = opts();
        o.initial.insert("t2_us".into(), 40.0 * s);
        o.initial.insert("x".into(), 1.5 * s);
        o.initial.insert("a".into(), (1.0 * s).min(1.9));
        let r = fit("stretched_exp", &d, &o).unwrap();
        assert_relative_eq!(r.value("t2_us").unwrap(), 40.0, max_relative = 1e-6);
    }
}

#[test]
fn optimum_beats_generating_parameters() {
    let d = three_pulse_data(0.01, 11);
    let r = global_fit_three_pulse(&d, false, &opts()).unwrap();
    let truth = [1.0, 3.0, 82.8, 3.2, 119.3];
    let model = model_by_name("eq1_three_pulse").unwrap();
    let ssr_truth: f64 = d
        .records
        .iter()
        .map(|rec| ((model.eval)(&truth, rec) - rec.observed).powi(2) / (rec.sigma * rec.sigma))
        .sum();
    assert!(r.ssr <= ssr_truth * (1.0 + 1e-12));
}

#[test]
fn sigma_scaling_changes_only_chi2() {
    let d = sech2_data(0.05, 12);
    let mut scaled = d.clone();
    for r in &mut scaled.records {
        r.sigma *= 3.0;
    }
    let a = fit("gamma_sd_sech2", &d, &opts()).unwrap();
    let b = fit("gamma_sd_sech2", &scaled, &opts()).unwrap();
    assert_relative_eq!(a.value("g_s").unwrap(), b.value("g_s").unwrap(), max_relative = 1e-8);
    assert_relative_eq!(a.chi2_red, 9.0 * b.chi2_red, max_relative = 1e-8);
}

#[test]
fn rate_and_time_parameterizations_agree() {
    let f = linspace(0.0, 1.0, 8);
    let d = generate("id_line", &[1.0 / 0.054, 1.0 / 0.1589], &axis_points("f_sin2", &f), Noise::Absolute(0.0), 1).unwrap();
    let r = fit("id_line", &d, &opts()).unwrap();
    assert_relative_eq!(1.0 / r.value("rate_sd_per_ms").unwrap(), 0.054, max_relative = 1e-3);
    // Same data fitted as a stretched exponential in the time domain.
    let t = linspace(0.0, 150.0, 40);
    let d = generate("stretched_exp", &[1.0, 54.0, 1.0], &axis_points("t_us", &t), Noise::Absolute(0.0), 1).unwrap();
    let mut o = opts();
    o.fix.insert("x".into(), 1.0);
    let r = fit("stretched_exp", &d, &o).unwrap();
    assert_relative_eq!(r.value("t2_us").unwrap(), 54.0, max_relative = 1e-3);
}

#[test]
fn t1_biexp_round_trip() {
    let taus = logspace(100.0, 600_000.0, 40);
    let d = generate(
        "t1_biexp",
        &[0.7, 119.3, 0.3, 8.0, 0.0],
        &axis_points("tau_us", &taus),
        Noise::Absolute(0.003),
        21,
    )
    .unwrap();
    let r = fit("t1_biexp", &d, &opts()).unwrap();
    assert_relative_eq!(r.value("t1_long_ms").unwrap(), 119.3, max_relative = 0.10);
    assert_relative_eq!(r.value("t1_short_ms").unwrap(), 8.0, max_relative = 0.10);
}

#[test]
fn bootstrap_properties() {
    let exact = sech2_data(0.0, 1);
    let mut o = opts();
    o.n_bootstrap = 200;
    o.seed = 5;
    let r = fit("gamma_sd_sech2", &exact, &o).unwrap();
    let p = &r.params["gamma_max_khz"];
    assert!(p.bootstrap_sigma.unwrap() < 1e-6 * p.value);

    let noisy = sech2_data(0.05, 2);
    let a = fit("gamma_sd_sech2", &noisy, &o).unwrap();
    let b = fit("gamma_sd_sech2", &noisy, &o).unwrap();
    assert_eq!(a, b);
}

#[test]
fn bootstrap_sigma_tracks_noise_level() {
    // Average over repeated trials to smooth the bootstrap's own scatter.
    let mut ratio = 0.0;
    let trials = 6;
    for k in 0..trials {
        let temps = linspace(60.0, 500.0, 12);
        let mk = |noise: f64| {
            generate(
                "gamma_sd_sech2",
                &[706.7, 6.17, 58.9],
                &axis_points("temperature_mK", &temps),
                Noise::Absolute(noise),
                100 + k,
            )
            .unwrap()
        };
        let mut o = opts();
        o.n_bootstrap = 200;
        o.seed = k;
        let s1 = fit("gamma_sd_sech2", &mk(10.0), &o).unwrap().params["g_s"].bootstrap_sigma.unwrap();
        let s2 = fit("gamma_sd_sech2", &mk(20.0), &o).unwrap().params["g_s"].bootstrap_sigma.unwrap();
        ratio += s2 / s1 / trials as f64;
    }
    assert!((ratio - 2.0).abs() < 0.6, "ratio {ratio}");
}

#[test]
fn csv_round_trip_and_missing_columns() {
    let d = three_pulse_data(0.01, 1);
    let text = d.to_csv(&["tau_us", "tw_us"]);
    let back = Dataset::from_csv(text.as_bytes()).unwrap();
    assert_eq!(back.records.len(), d.records.len());
    assert_relative_eq!(back.records[3].observed, d.records[3].observed, max_relative = 1e-15);
    let only_tau = "tau_us,amplitude\n1,0.5\n2,0.4\n";
    let d = Dataset::from_csv(only_tau.as_bytes()).unwrap();
    match fit("eq1_three_pulse", &d, &opts()) {
        Err(Error::MissingColumns(c)) => assert_eq!(c, vec!["tw_us".to_string()]),
        other => panic!("{other:?}"),
    }
    assert!(matches!(fit("nope", &d, &opts()), Err(Error::UnknownModel(_))));
}

#[test]
fn fit_result_json_shape() {
    let r = fit("gamma_sd_sech2", &sech2_data(0.05, 3), &opts()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    for key in ["model", "params", "chi2_red", "converged", "n_iter"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    for key in ["value", "sigma", "lo", "hi"] {
        assert!(v["params"]["g_s"].get(key).is_some(), "{key}");
    }
}
