//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use metamargin::bounds::{constants_c1_c2, sample_efficiency_min_m};
use metamargin::complexity::{dudley_bound, gaussian_complexity_mc, massart_bound, rademacher_complexity_mc};
use metamargin::harness::{bound_validity_experiment, sweep, ExperimentConfig, SweepAxis, SweepRow};
use metamargin::losses::{margin_loss, margin_of_scores, multi_margin_of_scores};
use metamargin::seed::rng_from_seed;
use metamargin::FunctionValueMatrix64;
use rand::Rng;

// closed forms evaluated to 40 digits with arbitrary-precision arithmetic
const C1_REF: f64 = 347.162_547_022_785_431_903_288_034_288_945;
const C2_REF: f64 = 177.006_977_335_855_893_282_663_955_888_195;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn random_matrix(seed: u64, max_rows: usize, max_cols: usize) -> FunctionValueMatrix64 {
    let mut rng = rng_from_seed(seed);
    let rows = rng.random_range(2..=max_rows);
    let cols = rng.random_range(2..=max_cols);
    let values = (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect();
    FunctionValueMatrix64::new(values, 1.0).unwrap()
}

fn surrogate_inequality() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from_seed(1);
    let mut violations = 0;
    let draws = 100_000;
    for _ in 0..draws {
        let k = rng.random_range(2..=10);
        let rho = rng.random_range(0.1..=10.0);
        let scores: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..=5.0)).collect();
        let y = rng.random_range(0..k);
        let phi = margin_loss(rho, margin_of_scores(&scores, y).unwrap());
        let psi = multi_margin_of_scores(&scores, y, rho).unwrap();
        if phi > (k - 1) as f64 * psi {
            violations += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        violations == 0 && elapsed < Duration::from_secs(5),
        format!("{violations} violations in {draws} draws, {:.2} s", elapsed.as_secs_f64()),
    )
}

fn gaussian_rademacher_relation() -> Outcome {
    let start = Instant::now();
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let passed = (0..100u64)
        .filter(|&seed| {
            let a = random_matrix(seed, 50, 30);
            let g = gaussian_complexity_mc(&a, 2000, seed).unwrap();
            let r = rademacher_complexity_mc(&a, 2000, seed + 1_000).unwrap();
            g.mean >= c * r.mean - 4.0 * g.std_error.hypot(c * r.std_error)
        })
        .count();
    let elapsed = start.elapsed();
    outcome(
        passed >= 99 && elapsed < Duration::from_secs(30),
        format!("{passed}/100 matrices, {:.2} s", elapsed.as_secs_f64()),
    )
}

fn closed_form_gaussian() -> Outcome {
    let a = FunctionValueMatrix64::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1.0).unwrap();
    let g = gaussian_complexity_mc(&a, 100_000, 3).unwrap();
    let target = 1.0 / std::f64::consts::PI.sqrt();
    let massart = massart_bound(&a);
    // max |a - mean| = 1/sqrt 2, N = 2, M = 2
    let massart_exact = (0.5f64).sqrt() * 2.0 * (2.0 * 2f64.ln()).sqrt() / 2.0;
    let pass = (g.mean - target).abs() <= 0.02 && (massart - massart_exact).abs() <= 1e-9 && g.mean <= massart;
    outcome(pass, format!("gamma {:.4} (target {target:.4}), Massart {massart:.9}", g.mean))
}

fn contraction() -> Outcome {
    let mut passed = 0;
    let mut total = 0;
    for rho in [0.5, 1.0, 2.0] {
        for seed in 0..100u64 {
            let a = random_matrix(seed, 20, 30);
            let g = gaussian_complexity_mc(&a, 2000, seed).unwrap();
            let composed = a.map_entries(|t| margin_loss(rho, t), 1.0).unwrap();
            let gc = gaussian_complexity_mc(&composed, 2000, seed + 7_000).unwrap();
            total += 1;
            if gc.mean <= g.mean / rho + 4.0 * gc.std_error.hypot(g.std_error / rho) {
                passed += 1;
            }
        }
    }
    let share = passed as f64 / total as f64;
    outcome(share >= 0.99, format!("{passed}/{total} pass"))
}

fn dudley_domination() -> Outcome {
    let passed = (0..100u64)
        .filter(|&seed| {
            let a = random_matrix(seed + 500, 30, 30);
            let g = gaussian_complexity_mc(&a, 2000, seed).unwrap();
            dudley_bound(&a, 12).unwrap() >= g.mean - 4.0 * g.std_error
        })
        .count();
    outcome(passed >= 99, format!("{passed}/100 matrices"))
}

fn bound_validity() -> Outcome {
    let start = Instant::now();
    let config = ExperimentConfig::from_path(&config_path("default.json")).unwrap();
    assert_eq!((config.bound.k, config.bound.m, config.bound.n, config.family.count, config.trials), (5, 100, 50, 8, 200));
    let out = bound_validity_experiment(&config).unwrap();
    let f = out.summary.hold_frequency;
    let elapsed = start.elapsed();
    let pass = [f.vc, f.gaussian, f.covering, f.surrogate].iter().all(|&x| x >= 0.9)
        && out.summary.completed > 0
        && elapsed < Duration::from_secs(600);
    outcome(
        pass,
        format!(
            "hold frequency vc {:.3} gaussian {:.3} covering {:.3} surrogate {:.3}; {} of {} trials completed; {:.1} s",
            f.vc,
            f.gaussian,
            f.covering,
            f.surrogate,
            out.summary.completed,
            out.summary.trials,
            elapsed.as_secs_f64()
        ),
    )
}

fn accuracy(row: &SweepRow) -> (f64, f64) {
    (row.mean_test_accuracy.unwrap_or(f64::NAN), row.test_accuracy_se.unwrap_or(f64::NAN))
}

fn figure_trends() -> Outcome {
    let config = ExperimentConfig::from_path(&config_path("sweep_linear.json")).unwrap();
    let n_rows = sweep(&config, SweepAxis::N, &[500.0, 2000.0, 8000.0]).unwrap();
    let n_acc: Vec<(f64, f64)> = n_rows.iter().map(accuracy).collect();
    let nondecreasing = n_acc
        .windows(2)
        .all(|w| w[1].0 >= w[0].0 - w[0].1.hypot(w[1].1));
    let rho_rows = sweep(&config, SweepAxis::Rho, &[0.1, 1.0, 10.0]).unwrap();
    let rho_acc: Vec<f64> = rho_rows.iter().map(|r| accuracy(r).0).collect();
    let spread = rho_acc.iter().cloned().fold(f64::MIN, f64::max) - rho_acc.iter().cloned().fold(f64::MAX, f64::min);
    let ok_rows = n_rows.iter().chain(&rho_rows).all(|r| r.status == "ok");
    outcome(
        ok_rows && nondecreasing && spread <= 0.05,
        format!(
            "n-sweep accuracy {:?}; rho-sweep accuracy {:?} (spread {:.2} pp)",
            n_acc.iter().map(|a| format!("{:.4}±{:.4}", a.0, a.1)).collect::<Vec<_>>(),
            rho_acc.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>(),
            100.0 * spread
        ),
    )
}

fn constants() -> Outcome {
    let (c1, c2) = constants_c1_c2(1.0, std::f64::consts::E).unwrap();
    let e1 = (c1 - C1_REF).abs() / C1_REF;
    let e2 = (c2 - C2_REF).abs() / C2_REF;
    outcome(e1 <= 1e-9 && e2 <= 1e-9, format!("C1 {c1} (rel err {e1:.1e}), C2 {c2} (rel err {e2:.1e})"))
}

fn sample_efficiency() -> Outcome {
    let grid = [100.0, 400.0, 1600.0, 1e12];
    let values: Vec<u64> = grid.iter().map(|&n| sample_efficiency_min_m(0.5, 2, 4, n, 1.0).unwrap()).collect();
    let limit = sample_efficiency_min_m(0.5, 2, 4, f64::INFINITY, 1.0).unwrap();
    let monotone = values.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        monotone && limit == 64 && values[1] == 178,
        format!("m_min over n = 100, 400, 1600, 1e12: {values:?}; n -> infinity: {limit}"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::from_path(&config_path("default.json")).unwrap();
    config.trials = 12;
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, serde_json::to_string(&config).unwrap()).unwrap();
    let mut files = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("t{threads}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_metamargin"))
            .args(["simulate", "--config", cfg.to_str().unwrap(), "--seed", "42", "--threads", threads])
            .args(["--output", out.to_str().unwrap()])
            .env_remove("METAMARGIN_SEED")
            .env_remove("METAMARGIN_OUTPUT_DIR")
            .output()
            .unwrap()
            .status;
        if !status.success() {
            return outcome(false, format!("simulate with {threads} threads exited with {status}"));
        }
        files.push(std::fs::read(&out).unwrap());
    }
    outcome(files[0] == files[1], format!("{} bytes per file, identical: {}", files[0].len(), files[0] == files[1]))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("surrogate inequality", surrogate_inequality),
        ("Gaussian-Rademacher relation", gaussian_rademacher_relation),
        ("closed-form Gaussian complexity", closed_form_gaussian),
        ("contraction", contraction),
        ("Dudley domination", dudley_domination),
        ("bound validity", bound_validity),
        ("accuracy trends over n and rho", figure_trends),
        ("constants C1 and C2", constants),
        ("sample efficiency", sample_efficiency),
        ("determinism across thread counts", determinism),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = check();
        if !result.pass {
            failures += 1;
        }
        println!(
            "criterion {:>2} {}: {} ({})",
            i + 1,
            if result.pass { "PASS" } else { "FAIL" },
            name,
            result.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
