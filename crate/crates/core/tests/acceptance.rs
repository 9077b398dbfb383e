//! Acceptance criteria, one line per criterion. Run with
//! `cargo test -p lpkfda --test acceptance`; exits nonzero if any fails.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use lpkfda::dataset::{EvaluationGrid, FunctionalDataset, Subject};
use lpkfda::estimation::{estimate_covariance, estimate_mean};
use lpkfda::estimation::{theoretical_amse, CovarianceEstimate, TheoreticalAmseInputs};
use lpkfda::flm::{fit_flm, Restriction};
use lpkfda::inference::{
    chi2_approx_params, covariance_eigen, global_test, p_value_chi2, p_value_sim, standardized_process,
    test_statistic, Methods, MixtureNull, Retention, TestOptions,
};
use lpkfda::io::{load_covariates, load_dataset, LoadOptions};
use lpkfda::numerics::{spawn_stream, Matrix};
use lpkfda::simulation::{
    generate_sample, run_bandwidth_study, size_power_study, FlmScenario, SimConfig, BANDWIDTH_MULTIPLIERS,
};
use lpkfda::smoothing::{default_candidates, lpk_weights, reconstruct, select_bandwidth};
use lpkfda::{KernelFamily, SmootherSpec};

use common::{bisect, ks_distance, mixture_cdf_one_two};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

const FAMILIES: [KernelFamily; 3] = [
    KernelFamily::Gaussian,
    KernelFamily::Epanechnikov,
    KernelFamily::Uniform,
];

fn random_design(stream: &mut lpkfda::numerics::RngStream, count: usize) -> Vec<f64> {
    let mut t: Vec<f64> = (0..count).map(|_| stream.uniform()).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

fn weight_identities() -> Outcome {
    let mut stream = spawn_stream(101, 0);
    let mut worst_sum: f64 = 0.0;
    let mut worst_moment: f64 = 0.0;
    let mut cases = 0;
    while cases < 1000 {
        let p = if stream.uniform() < 0.5 { 1 } else { 3 };
        let family = FAMILIES[stream.index(3)];
        let n = 8 + stream.index(30);
        let times = random_design(&mut stream, n);
        let h = 0.1 + 0.5 * stream.uniform();
        let t0 = stream.uniform();
        let spec = SmootherSpec::new(family, p, h).unwrap();
        let Ok(w) = lpk_weights(&times, t0, &spec) else {
            continue;
        };
        cases += 1;
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
        for r in 1..=p {
            let m: f64 = w
                .iter()
                .zip(&times)
                .map(|(w, t)| w * (t - t0).powi(r as i32))
                .sum();
            worst_moment = worst_moment.max(m.abs());
        }
    }
    verdict(
        worst_sum <= 1e-10 && worst_moment <= 1e-10,
        format!("1000 cases: max|Σw−1| = {worst_sum:.2e}, max|Σw(t−t0)^r| = {worst_moment:.2e} (tol 1e-10)"),
    )
}

/// Subjects follow jittered regular designs; fully random designs can force
/// boundary extrapolation with weights of order 1e5, where reproduction is
/// limited by conditioning rather than by the estimator.
fn polynomial_reproduction() -> Outcome {
    let mut stream = spawn_stream(202, 0);
    let grid = EvaluationGrid::uniform(0.0, 1.0, 51).unwrap();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    while cases < 200 {
        let p = if stream.uniform() < 0.5 { 1 } else { 3 };
        let family = FAMILIES[stream.index(3)];
        let degree = stream.index(p + 1);
        let coef: Vec<f64> = (0..=degree).map(|_| 4.0 * stream.uniform() - 2.0).collect();
        let poly = |t: f64| coef.iter().rev().fold(0.0, |acc, c| acc * t + c);
        let subjects: Vec<Subject> = (0..3)
            .map(|i| {
                let count = 15 + 5 * i;
                let times: Vec<f64> = (0..count)
                    .map(|k| (k as f64 + stream.uniform()) / count as f64)
                    .collect();
                let values = times.iter().map(|&t| poly(t)).collect();
                Subject::new(format!("s{i}"), times, values)
            })
            .collect();
        let ds = FunctionalDataset::new(subjects, (0.0, 1.0)).unwrap();
        let spec = SmootherSpec::new(family, p, 0.15 + 0.3 * stream.uniform()).unwrap();
        let Ok(cs) = reconstruct(&ds, &grid, &spec) else {
            continue;
        };
        cases += 1;
        for i in 0..3 {
            for (j, &t) in grid.points().iter().enumerate() {
                worst = worst.max((cs.curves[(i, j)] - poly(t)).abs());
            }
        }
    }
    verdict(
        worst <= 1e-9,
        format!("200 cases: max error {worst:.2e} (tol 1e-9)"),
    )
}

fn gaussian_p1() -> SmootherSpec {
    SmootherSpec::new(KernelFamily::Gaussian, 1, 1.0).unwrap()
}

fn bandwidth_study() -> Outcome {
    let cfg = SimConfig {
        n: 20,
        seed: 303,
        ..SimConfig::default()
    };
    let study = run_bandwidth_study(&cfg, 200, &BANDWIDTH_MULTIPLIERS, &gaussian_p1()).unwrap();
    let summary = study.summary();
    let at = |m: f64| summary.iter().find(|s| s.multiplier == m).unwrap();
    let min_f = summary
        .iter()
        .map(|s| s.median_mse_f)
        .fold(f64::INFINITY, f64::min);
    let f1 = at(1.0).median_mse_f;
    let (e1, e2) = (at(1.0).median_mse_eta, at(2.0).median_mse_eta);
    let medians: Vec<String> = summary
        .iter()
        .map(|s| format!("{}:{:.4}", s.multiplier, s.median_mse_f))
        .collect();
    verdict(
        f1 <= 1.05 * min_f && e2 > e1 && study.dropped.is_empty(),
        format!(
            "median MSE_f by multiplier [{}]; MSE_eta x1 {e1:.4} < x2 {e2:.4}; dropped {}",
            medians.join(", "),
            study.dropped.len()
        ),
    )
}

fn ideal_proximity() -> Outcome {
    // same configuration and seed as the bandwidth study
    let cfg = SimConfig {
        n: 20,
        seed: 303,
        ..SimConfig::default()
    };
    let study = run_bandwidth_study(&cfg, 200, &[1.0], &gaussian_p1()).unwrap();
    let s = study.summary()[0];
    let ratio = s.median_mse_eta / s.median_mse_eta_ideal;
    verdict(
        ratio <= 1.10,
        format!(
            "median MSE_eta at h* {:.5} vs ideal {:.5}: ratio {ratio:.4} (max 1.10)",
            s.median_mse_eta, s.median_mse_eta_ideal
        ),
    )
}

fn covariance_spectrum() -> Outcome {
    let cfg = SimConfig::default();
    let grid = cfg.metric_grid().unwrap();
    let p = grid.points().to_vec();
    let gamma = Matrix::from_fn(p.len(), p.len(), |j, l| cfg.gamma(p[j], p[l]));
    let exact = CovarianceEstimate::from_matrix(grid, gamma, p.len()).unwrap();
    let eig = covariance_eigen(&exact, Retention::default()).unwrap();
    let truth = [1.5, 1.0, 1.0];
    let exact_err = (0..3)
        .map(|r| (eig.eigenvalues[r] / truth[r] - 1.0).abs())
        .fold(0.0, f64::max);

    let cfg = SimConfig {
        n: 100,
        seed: 505,
        ..SimConfig::default()
    };
    let mut sums = [0.0; 3];
    let reps = 50;
    for r in 0..reps {
        let sample = generate_sample(&cfg, &mut spawn_stream(cfg.seed, r)).unwrap();
        let cands = default_candidates(&sample.dataset).unwrap();
        let h = select_bandwidth(&sample.dataset, &gaussian_p1(), &cands)
            .unwrap()
            .h_star;
        let cs = reconstruct(
            &sample.dataset,
            &sample.grid,
            &gaussian_p1().with_bandwidth(h).unwrap(),
        )
        .unwrap();
        let cov = estimate_covariance(&cs, &estimate_mean(&cs).unwrap()).unwrap();
        let e = covariance_eigen(&cov, Retention::default()).unwrap();
        for (s, l) in sums.iter_mut().zip(&e.eigenvalues) {
            *s += l;
        }
    }
    let avg: Vec<f64> = sums.iter().map(|s| s / reps as f64).collect();
    let est_err = (0..3)
        .map(|r| (avg[r] / truth[r] - 1.0).abs())
        .fold(0.0, f64::max);
    verdict(
        exact_err <= 0.01 && est_err <= 0.15,
        format!(
            "exact grid: ({:.5}, {:.5}, {:.5}) max rel err {exact_err:.2e} (tol 1%); \
             estimated mean over {reps}: ({:.4}, {:.4}, {:.4}) max rel err {est_err:.3} (tol 15%)",
            eig.eigenvalues[0], eig.eigenvalues[1], eig.eigenvalues[2], avg[0], avg[1], avg[2]
        ),
    )
}

/// Two alternating groups of the simulation model on a 101-point grid.
fn null_scenario(n: usize, bandwidth: Option<f64>, shift: f64, noise: f64) -> FlmScenario {
    let mut config = SimConfig {
        n,
        grid_size: 101,
        ..SimConfig::default()
    };
    config.sigma2s[3] = noise;
    FlmScenario {
        config,
        shift,
        bandwidth,
        template: gaussian_p1(),
        interval: (0.0, 1.0),
    }
}

fn mixture_calibration() -> Outcome {
    let scenario = null_scenario(100, Some(0.015), 0.0, 1e-6);
    let stats: Vec<f64> = {
        use rayon::prelude::*;
        (0..2000u64)
            .into_par_iter()
            .map(|r| {
                let (fit, restriction) = scenario.fit(&mut spawn_stream(606, r)).unwrap();
                let w = standardized_process(&fit, &restriction).unwrap();
                test_statistic(&w, &fit.grid, restriction.interval).unwrap()
            })
            .collect()
    };
    let d = ks_distance(&stats, |x| mixture_cdf_one_two(1.5, 1.0, x));
    verdict(
        d <= 0.05,
        format!("KS distance {d:.4} over 2000 replicates (tol 0.05)"),
    )
}

fn method_agreement() -> Outcome {
    let mixture = MixtureNull::new(vec![1.5, 1.0, 1.0], 1).unwrap();
    let approx = chi2_approx_params(&mixture).unwrap();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (i, p) in [0.01, 0.05, 0.1, 0.25].into_iter().enumerate() {
        let t = bisect(|x| mixture_cdf_one_two(1.5, 1.0, x), 1.0 - p, 0.0, 200.0);
        let pc = p_value_chi2(&approx, t);
        let ps = p_value_sim(&mixture, t, 100_000, &mut spawn_stream(707, i as u64)).unwrap();
        worst = worst.max((pc - ps).abs());
        parts.push(format!("p={p}: chi2 {pc:.4} sim {ps:.4}"));
    }

    let scenario = null_scenario(40, None, 0.3, 0.1);
    let (fit, restriction) = scenario.fit(&mut spawn_stream(708, 0)).unwrap();
    let opts = TestOptions {
        methods: Methods {
            chi2: false,
            sim: true,
            boot: true,
        },
        b_sim: 100_000,
        b_boot: 2000,
        seed: 709,
        retention: Retention::default(),
    };
    let report = global_test(&fit, &restriction, &opts).unwrap();
    let (ps, pb) = (report.p_values.sim.unwrap(), report.p_values.boot.unwrap());
    verdict(
        worst <= 0.02 && (ps - pb).abs() <= 0.04,
        format!(
            "{}; max gap {worst:.4} (tol 0.02); FLM instance T_n {:.3}: sim {ps:.4} boot {pb:.4} (tol 0.04)",
            parts.join("; "),
            report.statistic
        ),
    )
}

fn test_size() -> Outcome {
    let scenario = null_scenario(30, None, 0.0, 0.1);
    let opts = TestOptions {
        methods: Methods {
            chi2: true,
            sim: true,
            boot: false,
        },
        b_sim: 2000,
        b_boot: 0,
        seed: 808,
        retention: Retention::default(),
    };
    let res = size_power_study(&scenario, 0.05, 500, &opts, 809).unwrap();
    let sim = res.sim.unwrap();
    let chi2 = res.chi2.unwrap();
    verdict(
        (0.02..=0.09).contains(&sim.rate) && res.dropped == 0,
        format!(
            "simulation method size {:.3} ± {:.3} over {} replicates (band [0.02, 0.09]); chi2 {:.3}; dropped {}",
            sim.rate, sim.std_error, sim.replicates, chi2.rate, res.dropped
        ),
    )
}

fn amse_oracle() -> Outcome {
    use std::f64::consts::PI;
    let cfg = SimConfig {
        n: 40,
        m: 40,
        grid_size: 401,
        seed: 909,
        ..SimConfig::default()
    };
    let h = 0.05;
    let spec = gaussian_p1().with_bandwidth(h).unwrap();
    let grid = cfg.metric_grid().unwrap();
    let j = 200;
    assert!((grid.points()[j] - 0.5).abs() < 1e-12);
    let mut sq = 0.0;
    let mut count = 0usize;
    let mut harmonic = 0.0;
    let reps = 200;
    for r in 0..reps {
        let sample = generate_sample(&cfg, &mut spawn_stream(cfg.seed, r)).unwrap();
        harmonic += sample.dataset.harmonic_mean_points();
        for (i, s) in sample.dataset.subjects().iter().enumerate() {
            let w = lpk_weights(&s.times, 0.5, &spec).unwrap();
            let fit: f64 = w.iter().zip(&s.values).map(|(a, b)| a * b).sum();
            sq += (fit - sample.true_curves[(i, j)]).powi(2);
            count += 1;
        }
    }
    let empirical = sq / count as f64;
    let [_, a1, a2] = cfg.a_coeffs;
    let [_, s1, s2, se] = cfg.sigma2s;
    let w2 = 4.0 * PI * PI;
    let eta2 = |t: f64| -w2 * (a1 * (2.0 * PI * t).cos() + a2 * (2.0 * PI * t).sin());
    let gamma22 = |t: f64| w2 * w2 * (s1 * (2.0 * PI * t).cos().powi(2) + s2 * (2.0 * PI * t).sin().powi(2));
    let noise = |t: f64| se * (1.0 + t);
    let density = |_: f64| 1.0;
    let inputs = TheoreticalAmseInputs {
        mean_derivative: &eta2,
        covariance_derivative: &gamma22,
        noise_variance: &noise,
        design_density: &density,
        harmonic_mean_points: harmonic / reps as f64,
    };
    let theory = theoretical_amse(&inputs, &spec, 0.5).unwrap();
    let ratio = empirical / theory;
    verdict(
        (0.5..=2.0).contains(&ratio),
        format!("h = {h}: empirical {empirical:.5} vs theoretical {theory:.5}, ratio {ratio:.3} (within factor 2)"),
    )
}

fn canadian_spot_check() -> Outcome {
    let (Some(obs), Some(cov)) = (
        std::env::var_os("FDA_CANADIAN_OBS").map(PathBuf::from),
        std::env::var_os("FDA_CANADIAN_COV").map(PathBuf::from),
    ) else {
        return Outcome::Skip(
            "set FDA_CANADIAN_OBS (subject_id,t,y) and FDA_CANADIAN_COV (three region indicators) to run"
                .into(),
        );
    };
    let run = || -> lpkfda::Result<(f64, f64)> {
        let options = LoadOptions {
            domain: Some((1.0, 365.0)),
            ..LoadOptions::default()
        };
        let (ds, _) = load_dataset(&obs, &options)?;
        let grid = EvaluationGrid::uniform(1.0, 365.0, 365)?;
        let cs = reconstruct(&ds, &grid, &gaussian_p1().with_bandwidth(2.79)?)?;
        let x = load_covariates(&cov, &cs.subject_ids)?;
        let fit = fit_flm(&cs, &x)?;
        let restriction = Restriction::zero(Matrix::from_rows(&[vec![1.0, -1.0, 0.0]])?, 365, (1.0, 365.0))?;
        let opts = TestOptions {
            methods: Methods {
                chi2: false,
                sim: true,
                boot: false,
            },
            b_sim: 10_000,
            seed: 1010,
            ..TestOptions::default()
        };
        let rep = global_test(&fit, &restriction, &opts)?;
        Ok((rep.statistic, rep.p_values.sim.unwrap_or(f64::NAN)))
    };
    match run() {
        Ok((t, p)) => verdict(
            (t / 58248.0 - 1.0).abs() <= 0.02 && (p - 0.181).abs() <= 0.03,
            format!("T_n {t:.1} (target 58248 ± 2%), sim p {p:.4} (target 0.181 ± 0.03)"),
        ),
        Err(e) => Outcome::Fail(format!("pipeline error: {e}")),
    }
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "weight identities",
            budget: Duration::from_secs(5),
            run: weight_identities,
        },
        Criterion {
            id: 2,
            name: "polynomial reproduction",
            budget: Duration::from_secs(5),
            run: polynomial_reproduction,
        },
        Criterion {
            id: 3,
            name: "GCV bandwidth study",
            budget: Duration::from_secs(600),
            run: bandwidth_study,
        },
        Criterion {
            id: 4,
            name: "ideal-estimator proximity",
            budget: Duration::from_secs(600),
            run: ideal_proximity,
        },
        Criterion {
            id: 5,
            name: "covariance spectrum",
            budget: Duration::from_secs(120),
            run: covariance_spectrum,
        },
        Criterion {
            id: 6,
            name: "mixture null calibration",
            budget: Duration::from_secs(300),
            run: mixture_calibration,
        },
        Criterion {
            id: 7,
            name: "three-method agreement",
            budget: Duration::from_secs(300),
            run: method_agreement,
        },
        Criterion {
            id: 8,
            name: "test size",
            budget: Duration::from_secs(900),
            run: test_size,
        },
        Criterion {
            id: 9,
            name: "theoretical AMSE",
            budget: Duration::from_secs(300),
            run: amse_oracle,
        },
        Criterion {
            id: 10,
            name: "Canadian temperature spot-check",
            budget: Duration::from_secs(600),
            run: canadian_spot_check,
        },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for c in &criteria {
        let label = format!("C{} {}", c.id, c.name);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let over = elapsed > c.budget;
        let (tag, detail) = match outcome {
            Outcome::Pass(d) if !over => ("PASS", d),
            Outcome::Pass(d) => ("FAIL", format!("{d}; over time budget")),
            Outcome::Fail(d) => ("FAIL", d),
            Outcome::Skip(d) => ("SKIP", d),
        };
        if tag == "FAIL" {
            failures += 1;
        }
        println!(
            "[{tag}] {label}: {detail} [{:.1}s / budget {}s]",
            elapsed.as_secs_f64(),
            c.budget.as_secs()
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
