//! The twelve acceptance criteria, one PASS/FAIL line each.
//!
//! Run with `cargo test -p cmvspec --test acceptance`. Expected values come
//! from the oracles in `common` (dense elimination, explicit 2x2 products,
//! the Floquet trace condition), never from the library under test.

#![allow(clippy::needless_range_loop, clippy::type_complexity)]

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use cmvspec_core::cocycle::check_avalanche;
use cmvspec_core::determinants::{green_value, poisson_residual, relation_residual};
use cmvspec_core::ldt::{ldt_measure_scan, spectral_form_predicate};
use cmvspec_core::linalg::DenseMatrix;
use cmvspec_core::multiscale::{interval_coverage_scan, CoverageOptions};
use cmvspec_core::spectral::{eigensolve, eigensolve_dense, perturb_eigen_check, PartB};
use cmvspec_core::*;
use common::*;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn omega2() -> Frequency64 {
    Frequency::new(&[2f64.sqrt() - 1.0, (5f64.sqrt() - 1.0) / 2.0])
}

fn one() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

fn c1_unitarity() -> Outcome {
    let mut r = rng(1);
    let (mut unit_worst, mut fact_worst) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let n = r.random_range(1..=200i64);
        let a = r.random_range(-3..=3i64);
        let amp = r.random_range(0.0..0.99);
        let seq = VerblunskySequence::from_values(a - 1, disk_points(&mut r, n as usize + 1, amp))
            .unwrap();
        let (beta, eta) = (unit_point(&mut r), unit_point(&mut r));
        let m = build_finite_cmv(&seq, a, a + n - 1, beta, eta).unwrap();
        let e = nested(&m.to_dense());
        let ident: Dense = (0..e.len())
            .map(|i| {
                (0..e.len())
                    .map(|j| Complex64::new(f64::from(u8::from(i == j)), 0.0))
                    .collect()
            })
            .collect();
        unit_worst = unit_worst.max(max_abs_diff(&matmul(&adjoint(&e), &e), &ident));
        let (l, mm) = lm_oracle(|k| seq.at(k).unwrap(), a, a + n - 1, beta, eta);
        fact_worst = fact_worst.max(max_abs_diff(&matmul(&l, &mm), &e));
    }
    outcome(
        unit_worst <= 1e-12 && fact_worst <= 1e-13,
        format!("max |E*E - I| = {unit_worst:.1e} (<= 1e-12), max |E - LM| = {fact_worst:.1e} (<= 1e-13)"),
    )
}

fn c2_relation() -> Outcome {
    let functions = [
        SamplingFunction::two_mode(0.9, 0.02).unwrap(),
        SamplingFunction::two_mode(0.5, 0.1).unwrap(),
        SamplingFunction::constant(2, Complex64::new(0.5, 0.0)).unwrap(),
    ];
    let omega = omega2();
    let mut r = rng(2);
    let (mut worst, mut naive_worst) = (0.0f64, 0.0f64);
    for case in 0..100 {
        let f = &functions[case % 3];
        let n = r.random_range(2..=20usize);
        let x = Phase::new(&[r.random::<f64>(), r.random::<f64>()]);
        let theta = r.random_range(0.0..std::f64::consts::TAU);
        let z = SpectralPoint::new(theta);
        worst = worst.max(relation_residual(f, &omega, &z, &x, n).unwrap());
        let mut naive = [
            [one(), Complex64::new(0.0, 0.0)],
            [Complex64::new(0.0, 0.0), one()],
        ];
        for j in 0..n {
            let a = f.eval_alpha(&x.shifted(&omega, j as i64)).unwrap();
            naive = mul2(
                szego_step(a, Complex64::from_polar(1.0, theta / 2.0)),
                naive,
            );
        }
        let lib = transfer_product(f, &omega, &z, &x, n)
            .unwrap()
            .full_matrix();
        let scale = naive.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max);
        for i in 0..2 {
            for j in 0..2 {
                naive_worst = naive_worst.max((lib.m[i][j] - naive[i][j]).norm() / scale);
            }
        }
    }
    outcome(
        worst <= 1e-8 && naive_worst <= 1e-8,
        format!("max relative residual {worst:.1e} (<= 1e-8); transfer vs explicit product {naive_worst:.1e}"),
    )
}

fn c3_green() -> Outcome {
    let mut r = rng(3);
    let (mut worst, mut oracle_worst) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let len = r.random_range(1..=80i64);
        let amp = r.random_range(0.0..0.95);
        let seq = VerblunskySequence::from_values(-1, disk_points(&mut r, len as usize + 1, amp))
            .unwrap();
        let (beta, eta) = (unit_point(&mut r), unit_point(&mut r));
        let z = unit_point(&mut r);
        let j = r.random_range(0..len);
        let k = r.random_range(j..len);
        let g = green_value(&seq, 0, len - 1, beta, eta, j, k, z).unwrap();
        worst = worst.max(g.relative_mismatch());
        let (l, m) = lm_oracle(|n| seq.at(n).unwrap(), 0, len - 1, beta, eta);
        let op: Dense = adjoint(&l)
            .iter()
            .zip(&m)
            .map(|(p, q)| p.iter().zip(q).map(|(u, v)| z * u - v).collect())
            .collect();
        let mut rhs = vec![Complex64::new(0.0, 0.0); len as usize];
        rhs[k as usize] = one();
        let direct = solve(op, rhs)[j as usize].norm();
        oracle_worst = oracle_worst.max((g.magnitude - direct).abs() / direct);
    }
    outcome(
        worst <= 1e-8 && oracle_worst <= 1e-8,
        format!("ratio vs banded solve {worst:.1e}, ratio vs dense elimination {oracle_worst:.1e} (<= 1e-8)"),
    )
}

fn c4_poisson() -> Outcome {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    let mut parities = [0usize; 4];
    for case in 0..50 {
        let a = (case % 2) as i64;
        let b = a + 8 + ((case / 2) % 2) as i64 + 2 * r.random_range(0..6i64);
        parities[(a.rem_euclid(2) * 2 + b.rem_euclid(2)) as usize] += 1;
        let seq =
            VerblunskySequence::from_values(a - 6, disk_points(&mut r, (b - a + 13) as usize, 0.9))
                .unwrap();
        let (beta, eta) = (unit_point(&mut r), unit_point(&mut r));
        let pairs = eigensolve(&build_finite_cmv(&seq, a - 5, b + 5, beta, eta).unwrap()).unwrap();
        let pair = &pairs[r.random_range(0..pairs.len())];
        for m in a + 1..b {
            worst = worst
                .max(poisson_residual(&seq, a, b, beta, eta, pair.value, &pair.vector, m).unwrap());
        }
    }
    outcome(
        worst <= 1e-9 && parities.iter().all(|c| *c > 0),
        format!("max residual {worst:.1e} (<= 1e-9), cases per (a, b) parity {parities:?}"),
    )
}

fn c5_lyapunov() -> Outcome {
    let alpha = Complex64::new(0.5, 0.0);
    let oracle = spectral_radius2(szego_step(alpha, one())).ln();
    let f = SamplingFunction::constant(2, alpha).unwrap();
    let mut worst = 0.0f64;
    for n in [100, 200, 400, 800] {
        let est = lyapunov_finite(&f, &omega2(), &SpectralPoint::new(0.0), n, 8, 5).unwrap();
        worst = worst.max((est.value - oracle).abs());
    }
    outcome(worst <= 1e-3, format!("oracle log rho(M) = {oracle:.6}, max |L_n - oracle| over n >= 100 = {worst:.1e} (<= 1e-3)"))
}

fn circle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

fn c6_spectrum() -> Outcome {
    let alpha = Complex64::new(0.5, 0.0);
    let f = SamplingFunction::constant(1, alpha).unwrap();
    let opts = CoverageOptions::new((0.0, std::f64::consts::TAU), 720, 400, 0.005);
    let scan =
        interval_coverage_scan(&f, &Frequency::new(&[(5f64.sqrt() - 1.0) / 2.0]), &opts).unwrap();
    // oracle edges: bisection on the trace condition
    let edge = |mut inside: f64, mut outside: f64| {
        for _ in 0..60 {
            let mid = 0.5 * (inside + outside);
            if in_floquet_band(alpha, mid) {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        inside
    };
    let lower = edge(std::f64::consts::PI, 0.0);
    let upper = edge(std::f64::consts::PI, std::f64::consts::TAU);
    let with_zero: Vec<_> = scan
        .gaps
        .iter()
        .filter(|(s, e)| circle_gap(*s, 0.0) + circle_gap(0.0, *e) <= e - s + 1e-9)
        .collect();
    match with_zero.as_slice() {
        [(s, e)] if scan.gaps.len() == 1 => {
            let (ds, de) = (circle_gap(*s, upper), circle_gap(*e, lower));
            outcome(
                ds <= 0.02 && de <= 0.02,
                format!("gap [{s:.4}, {e:.4}] around 0, oracle edges {upper:.4} / {lower:.4}, offsets {ds:.4} / {de:.4} (<= 0.02)"),
            )
        }
        _ => outcome(
            false,
            format!("expected one gap around 0, got {:?}", scan.gaps),
        ),
    }
}

fn c7_ldt() -> Outcome {
    let f = SamplingFunction::two_mode(0.9, 0.02).unwrap();
    let z = SpectralPoint::new(2.09);
    let scan = ldt_measure_scan(&f, &omega2(), &z, &[50, 100, 200], 0.3, 2000, 7).unwrap();
    let ests: Vec<String> = scan
        .entries
        .iter()
        .map(|e| {
            format!(
                "n={}: {} [{:.4}, {:.4}]",
                e.n, e.deviation.estimate, e.deviation.wilson_low, e.deviation.wilson_high
            )
        })
        .collect();
    let l = scan.entries.last().map(|e| e.l_n).unwrap_or(0.0);
    outcome(
        scan.trend_nonincreasing && !scan.vacuous,
        format!(
            "L_200 = {l:.4} > 0; deviation estimates {}",
            ests.join(", ")
        ),
    )
}

fn c8_spectral_form() -> Outcome {
    let f = SamplingFunction::two_mode(0.9, 0.02).unwrap();
    let omega = omega2();
    let model = QuasiPeriodicModel::new(f.clone(), omega.clone()).unwrap();
    let mut r = rng(8);
    let (mut counter, mut resolvent_ok) = (0, 0);
    for case in 0..200u64 {
        let n = r.random_range(10..=60usize);
        let z = SpectralPoint::new(r.random_range(0.0..std::f64::consts::TAU));
        let l_n = lyapunov_finite(&f, &omega, &z, n, 200, case).unwrap().value;
        let x = Phase::new(&[r.random::<f64>(), r.random::<f64>()]);
        let seq = model.sequence(&x, -1, n as i64 - 1).unwrap();
        let form =
            spectral_form_predicate(&seq, n, one(), one(), z.z(), 0.1, 0.3, l_n, 1.0).unwrap();
        resolvent_ok += usize::from(form.resolvent_ok);
        counter += usize::from(!form.implication_holds());
    }
    outcome(
        counter == 0,
        format!("{counter} counterexamples in 200 cases ({resolvent_ok} with resolvent_ok)"),
    )
}

fn c9_perturbation() -> Outcome {
    let mut r = rng(9);
    let (mut worst_a, mut worst_b, mut failures) = (0.0f64, 0.0f64, 0);
    for _ in 0..100 {
        let n = r.random_range(2..=50usize);
        let u = random_unitary(&mut r, n);
        let a = DenseMatrix::from_fn(n, |i, j| u[i][j]);
        let pairs = eigensolve_dense(&a).unwrap();
        let k = r.random_range(0..n);
        let gap = pairs
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .map(|(_, p)| dist(p.value, pairs[k].value))
            .fold(f64::INFINITY, f64::min);
        let size = 1e-3 * gap.min(1.0);
        let psi = &pairs[k].vector.values;
        let mut phi: Vec<Complex64> = psi
            .iter()
            .map(|v| v + disk_point(&mut r, size / (n as f64).sqrt()))
            .collect();
        let nrm = phi.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        phi.iter_mut().for_each(|v| *v /= nrm);
        let z = pairs[k].value * Complex64::from_polar(1.0, size * (r.random::<f64>() - 0.5));
        let res = matvec(&u, &phi)
            .iter()
            .zip(&phi)
            .map(|(x, y)| (x - z * y).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let (eps_tilde, eps_hat) = (1.01 * res, 0.5 * gap);
        let rep = perturb_eigen_check(&a, &phi, z, eps_tilde, eps_hat).unwrap();
        let a_ok = rep
            .part_a
            .is_some_and(|(z0, _)| dist(z0, z) < 2f64.sqrt() * eps_tilde);
        // phase-aligned distance computed here from ψ
        let ip: Complex64 = psi.iter().zip(&phi).map(|(x, y)| x.conj() * y).sum();
        let c = ip / ip.norm();
        let d = psi
            .iter()
            .zip(&phi)
            .map(|(x, y)| (y - c * x).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let bound = 2f64.sqrt() * eps_tilde / eps_hat;
        let b_ok = matches!(rep.part_b, PartB::Checked { holds: true, .. }) && d < bound;
        worst_a = worst_a.max(rep.part_a.map_or(f64::INFINITY, |(z0, _)| {
            dist(z0, z) / (2f64.sqrt() * eps_tilde)
        }));
        worst_b = worst_b.max(d / bound);
        failures += usize::from(!(a_ok && b_ok));
    }
    outcome(
        failures == 0,
        format!("{failures} failures in 100; worst |z0-z|/(sqrt2 e~) = {worst_a:.2}, worst |phi-psi|/bound = {worst_b:.2}"),
    )
}

fn hyperbolic(theta: f64, mu: f64, phi: f64) -> Mat2<f64> {
    let rot = |t: f64| {
        Mat2::new(
            Complex64::new(t.cos(), 0.0),
            Complex64::new(-t.sin(), 0.0),
            Complex64::new(t.sin(), 0.0),
            Complex64::new(t.cos(), 0.0),
        )
    };
    rot(theta) * Mat2::diag(mu, 1.0 / mu) * rot(phi)
}

fn c10_avalanche() -> Outcome {
    let commuting: Vec<Mat2<f64>> = [8.0, 16.0, 32.0, 8.0, 64.0]
        .iter()
        .map(|&l| Mat2::diag(l, 1.0 / l))
        .collect();
    let zero = check_avalanche(&commuting)
        .map(|c| c.expression)
        .unwrap_or(f64::NAN);
    let mut r = rng(10);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..50 {
        let m = r.random_range(4..20usize);
        let mut prev: f64 = r.random_range(-3.0..3.0);
        let mut blocks = vec![hyperbolic(
            prev,
            r.random_range(m as f64..20.0 * m as f64),
            r.random_range(-3.0..3.0),
        )];
        for _ in 1..m {
            let phi = -prev + r.random_range(-1.0..1.0);
            let theta = r.random_range(-3.0..3.0);
            blocks.push(hyperbolic(
                theta,
                r.random_range(m as f64..20.0 * m as f64),
                phi,
            ));
            prev = theta;
        }
        match check_avalanche(&blocks) {
            Ok(c) => {
                let ratio = c.expression.abs() / (10.0 * m as f64 / c.mu);
                worst = worst.max(ratio);
                failures += usize::from(ratio >= 1.0);
            }
            Err(_) => failures += 1,
        }
    }
    outcome(
        zero.abs() < 1e-12 && failures == 0,
        format!(
            "commuting expression {zero:.1e}; worst |AP|/(10 m/mu) = {worst:.3} over 50 sequences"
        ),
    )
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_cmvspec")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_cli(args: &[&str], workers: &str) -> (i32, String) {
    let out = Command::new(bin())
        .args(args)
        .env("CMVSPEC_WORKERS", workers)
        .output()
        .expect("run cmvspec");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
    )
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn c11_multiscale(tmp: &Path) -> Outcome {
    let strong = tmp.join("strong");
    let (code, _) = run_cli(
        &[
            "multiscale",
            "--config",
            configs().join("multiscale_strong.json").to_str().unwrap(),
            "--out",
            strong.to_str().unwrap(),
        ],
        "2",
    );
    let rep = read_json(&strong.join("multiscale.json"));
    let strong_ok = match code {
        0 => rep["steps"].as_array().is_some_and(|s| {
            !s.is_empty()
                && s.iter()
                    .all(|st| st["step"]["all_hold"].as_bool() == Some(true))
        }),
        4 => rep["failure"]["inequality"]
            .as_str()
            .is_some_and(|s| s.contains("<") || s.contains(">") || s.contains("below")),
        _ => false,
    };
    let strong_note = if code == 0 {
        "advanced with all conclusions".to_string()
    } else {
        format!(
            "{} at {}",
            rep["failure"]["inequality"].as_str().unwrap_or("?"),
            rep["failure"]["stage"].as_str().unwrap_or("?")
        )
    };
    let forced = tmp.join("forced");
    let (fcode, _) = run_cli(
        &[
            "multiscale",
            "--config",
            configs()
                .join("multiscale_forced_failure.json")
                .to_str()
                .unwrap(),
            "--out",
            forced.to_str().unwrap(),
        ],
        "2",
    );
    let frep = read_json(&forced.join("multiscale.json"));
    let forced_ok = fcode == 4 && frep["failure"]["stage"] == "BulkDisplacement";
    let block = tmp.join("block");
    let (bcode, _) = run_cli(
        &[
            "multiscale",
            "--config",
            configs().join("multiscale_block.json").to_str().unwrap(),
            "--out",
            block.to_str().unwrap(),
        ],
        "2",
    );
    let brep = read_json(&block.join("multiscale.json"));
    let block_ok = bcode == 0 && brep["steps"][0]["step"]["all_hold"] == true;
    outcome(
        strong_ok && forced_ok && block_ok,
        format!(
            "strong coupling: exit {code}, {strong_note}; absurd gamma: exit {fcode} at {}; decoupled block: exit {bcode}",
            frep["failure"]["stage"]
        ),
    )
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn c12_determinism(tmp: &Path) -> Outcome {
    let runs = [
        ("lyapunov", "lyapunov_constant.json"),
        ("spectrum-scan", "spectrum_strong.json"),
        ("ldt", "ldt_strong.json"),
        ("localize", "localize_block.json"),
        ("multiscale", "multiscale_block.json"),
        ("identity-suite", "identity_suite.json"),
    ];
    let mut bad = Vec::new();
    for (cmd, cfg) in runs {
        let first = tmp.join(format!("{cmd}-1"));
        let second = tmp.join(format!("{cmd}-2"));
        let (c1, _) = run_cli(
            &[
                cmd,
                "--config",
                configs().join(cfg).to_str().unwrap(),
                "--out",
                first.to_str().unwrap(),
            ],
            "1",
        );
        let manifest = first.join("manifest.json");
        let (c2, _) = run_cli(
            &[
                cmd,
                "--config",
                manifest.to_str().unwrap(),
                "--out",
                second.to_str().unwrap(),
            ],
            "4",
        );
        if c1 != c2 || dir_bytes(&first) != dir_bytes(&second) {
            bad.push(cmd);
        }
    }
    outcome(
        bad.is_empty(),
        format!("6 commands rerun from manifest with 1 vs 4 workers; differing: {bad:?}"),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Duration, Box<dyn Fn() -> Outcome>)> = vec![
        (
            "unitarity and factorization",
            Duration::from_secs(10),
            Box::new(c1_unitarity),
        ),
        (
            "determinant-transfer identity",
            Duration::from_secs(30),
            Box::new(c2_relation),
        ),
        ("Green formula", Duration::from_secs(30), Box::new(c3_green)),
        (
            "Poisson formula",
            Duration::from_secs(30),
            Box::new(c4_poisson),
        ),
        (
            "Floquet Lyapunov exponent",
            Duration::from_secs(5),
            Box::new(c5_lyapunov),
        ),
        (
            "Floquet spectrum",
            Duration::from_secs(120),
            Box::new(c6_spectrum),
        ),
        ("LDT trend", Duration::from_secs(120), Box::new(c7_ldt)),
        (
            "spectral-form implication",
            Duration::from_secs(60),
            Box::new(c8_spectral_form),
        ),
        (
            "eigenvector perturbation",
            Duration::from_secs(30),
            Box::new(c9_perturbation),
        ),
        (
            "avalanche principle",
            Duration::from_secs(10),
            Box::new(c10_avalanche),
        ),
        (
            "multiscale harness",
            Duration::from_secs(300),
            Box::new(|| c11_multiscale(tmp.path())),
        ),
        (
            "determinism",
            Duration::from_secs(60),
            Box::new(|| c12_determinism(tmp.path())),
        ),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let took = start.elapsed();
        let pass = o.pass && took <= *budget;
        failed += usize::from(!pass);
        println!(
            "criterion {:>2} {}: {name}: {} ({:.1}s of {}s)",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!(
        "{} of {} criteria pass",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
