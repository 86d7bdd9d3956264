//! The six subcommands. Each validates its block, computes, and returns the
//! files to write plus a few summary lines for standard output.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use cmvspec_core::cocycle::{lyapunov_avalanche, LyapunovMethod};
use cmvspec_core::determinants::{green_value, poisson_residual, relation_residual};
use cmvspec_core::ldt::{ldt_determinant_scan, ldt_measure_scan, LdtScan};
use cmvspec_core::montecarlo::{derive_seed, sample_phase, sample_uniform, stream_rng};
use cmvspec_core::multiscale::{
    inductive_advance, interval_coverage_scan, verify_conditions_abcd, AbcdOptions, AdvanceOptions,
    AdvanceOutcome, AdvanceReport, AdvanceStage, ConditionA, ConditionB, CoverageOptions,
    InductiveState, StateSummary,
};
use cmvspec_core::scalar::cis;
use cmvspec_core::spectral::{eigensolve, localization_profile};
use cmvspec_core::{
    build_finite_cmv, lyapunov_finite, Complex64, Frequency64, SamplingFunction64, SpectralPoint,
    VerblunskySequence,
};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Prepared, RunConfig};
use crate::error::CliError;
use crate::manifest::OutputFile;

pub struct Report {
    pub files: Vec<OutputFile>,
    pub lines: Vec<String>,
    /// Set when the run completed but a checked statement failed; the files are still written.
    pub failure: Option<CliError>,
}

impl Report {
    fn ok(files: Vec<OutputFile>, lines: Vec<String>) -> Self {
        Self {
            files,
            lines,
            failure: None,
        }
    }
}

/// γ = max(L_n − 3·stderr, 0) at z.
fn fit_gamma(
    f: &SamplingFunction64,
    omega: &Frequency64,
    theta: f64,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<f64, CliError> {
    let est = lyapunov_finite(f, omega, &SpectralPoint::new(theta), n, samples, seed)?;
    Ok((est.value - 3.0 * est.std_error).max(0.0))
}

pub fn lyapunov(cfg: &RunConfig, p: &Prepared) -> Result<Report, CliError> {
    let c = cfg.lyapunov()?;
    let thetas: Vec<f64> = match (&c.thetas, c.grid) {
        (Some(t), _) => t.clone(),
        (None, Some(g)) => (0..g).map(|i| TAU * i as f64 / g as f64).collect(),
        (None, None) => unreachable!("validated"),
    };
    let mut csv = String::from("theta,n,L_n,stderr\n");
    let mut lines = Vec::new();
    for theta in &thetas {
        let z = SpectralPoint::new(*theta);
        for &n in &c.n_list {
            let seed = derive_seed(cfg.seed, n as u64);
            let est = match c.method {
                LyapunovMethod::Direct => lyapunov_finite(&p.f, &p.omega, &z, n, c.samples, seed)?,
                LyapunovMethod::Avalanche => {
                    lyapunov_avalanche(&p.f, &p.omega, &z, n, c.levels, c.samples, seed)?
                }
            };
            let _ = writeln!(csv, "{theta},{},{},{}", est.n, est.value, est.std_error);
        }
    }
    lines.push(format!(
        "{} theta values x {} scales written to lyapunov.csv",
        thetas.len(),
        c.n_list.len()
    ));
    Ok(Report::ok(
        vec![OutputFile::text("lyapunov.csv", csv)],
        lines,
    ))
}

#[derive(Serialize)]
struct ArcSummary {
    arc: [f64; 2],
    grid: usize,
    n: usize,
    tol: f64,
    covered_points: usize,
    full_circle: bool,
    arcs: Vec<(f64, f64)>,
    gaps: Vec<(f64, f64)>,
}

pub fn spectrum_scan(cfg: &RunConfig, p: &Prepared) -> Result<Report, CliError> {
    let c = cfg.spectrum()?;
    let mut opts = CoverageOptions::new((c.arc[0], c.arc[1]), c.grid, c.n, c.tol);
    opts.phase_samples = c.phase_samples;
    opts.refine_steps = c.refine_steps;
    opts.seed = cfg.seed;
    opts.beta = p.beta;
    opts.eta = p.eta;
    let scan = interval_coverage_scan(&p.f, &p.omega, &opts)?;
    let summary = ArcSummary {
        arc: c.arc,
        grid: c.grid,
        n: c.n,
        tol: c.tol,
        covered_points: scan.points.iter().filter(|q| q.covered).count(),
        full_circle: scan.full_circle,
        arcs: scan.arcs.clone(),
        gaps: scan.gaps.clone(),
    };
    let lines = vec![
        format!(
            "covered {} of {} grid points",
            summary.covered_points, c.grid
        ),
        format!("covered arcs: {:?}", scan.arcs),
        format!("gaps: {:?}", scan.gaps),
    ];
    Ok(Report::ok(
        vec![
            OutputFile::text("coverage.csv", scan.to_csv()),
            OutputFile::json("arcs.json", &summary)?,
        ],
        lines,
    ))
}

fn ldt_csv(scan: &LdtScan) -> String {
    let mut out =
        String::from("n,L_n,L_n_stderr,threshold,hits,samples,estimate,wilson_low,wilson_high\n");
    for e in &scan.entries {
        let d = &e.deviation;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            e.n,
            e.l_n,
            e.l_n_stderr,
            e.threshold,
            d.hits,
            d.samples,
            d.estimate,
            d.wilson_low,
            d.wilson_high
        );
    }
    out
}

pub fn ldt(cfg: &RunConfig, p: &Prepared) -> Result<Report, CliError> {
    let c = cfg.ldt()?;
    let z = SpectralPoint::new(c.theta);
    let scan = if c.determinant {
        ldt_determinant_scan(
            &p.f, &p.omega, &z, &c.n_list, c.tau, c.samples, cfg.seed, p.beta, p.eta,
        )?
    } else {
        ldt_measure_scan(&p.f, &p.omega, &z, &c.n_list, c.tau, c.samples, cfg.seed)?
    };
    let mut lines: Vec<String> = scan
        .entries
        .iter()
        .map(|e| {
            format!(
                "n = {}: L_n = {:.6}, deviation estimate {} (Wilson [{:.4}, {:.4}])",
                e.n, e.l_n, e.deviation.estimate, e.deviation.wilson_low, e.deviation.wilson_high
            )
        })
        .collect();
    lines.push(format!(
        "trend nonincreasing: {}; vacuous (L = 0): {}",
        scan.trend_nonincreasing, scan.vacuous
    ));
    Ok(Report::ok(
        vec![
            OutputFile::text("ldt.csv", ldt_csv(&scan)),
            OutputFile::json("ldt.json", &scan)?,
        ],
        lines,
    ))
}

#[derive(Serialize)]
struct LocalizeSummary {
    n0: usize,
    center_within: i64,
    selected: usize,
    passed: usize,
    majority_pass: bool,
}

pub fn localize(cfg: &RunConfig, p: &Prepared) -> Result<Report, CliError> {
    let c = cfg.localize()?;
    let n0 = c.n0 as i64;
    let within = c.center_within.unwrap_or(n0 / 4);
    let x0 = cmvspec_core::Phase::new(&c.x0);
    let seq = p.model.sequence(&x0, -n0 - 1, n0)?;
    let pairs = eigensolve(&build_finite_cmv(&seq, -n0, n0, p.beta, p.eta)?)?;
    let mut csv = String::from("k,theta,center,gamma,fitted_rate,worst_margin,passes\n");
    let (mut selected, mut passed) = (0, 0);
    for pair in &pairs {
        let u = &pair.vector;
        let peak = (u.first..=u.last()).fold((u.first, -1.0), |(bs, bv), s| {
            let v = u.at(s).norm();
            if v > bv {
                (s, v)
            } else {
                (bs, bv)
            }
        });
        if peak.0.abs() > within {
            continue;
        }
        let gamma = match c.gamma {
            Some(g) => g,
            None => fit_gamma(
                &p.f,
                &p.omega,
                pair.theta(),
                c.fit_n,
                c.fit_samples,
                derive_seed(cfg.seed, pair.index as u64),
            )?,
        };
        let prof = localization_profile(pair, c.n0, gamma)?;
        selected += 1;
        passed += usize::from(prof.passes);
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            pair.index,
            pair.theta(),
            prof.center,
            gamma,
            prof.fitted_rate,
            prof.worst_margin,
            u8::from(prof.passes)
        );
    }
    let summary = LocalizeSummary {
        n0: c.n0,
        center_within: within,
        selected,
        passed,
        majority_pass: 2 * passed > selected,
    };
    let lines = vec![format!(
        "{passed} of {selected} central eigenvectors pass the decay profile"
    )];
    Ok(Report::ok(
        vec![
            OutputFile::text("localization.csv", csv),
            OutputFile::json("localization.json", &summary)?,
        ],
        lines,
    ))
}

#[derive(Serialize)]
struct Failure {
    stage: String,
    inequality: String,
}

#[derive(Serialize)]
struct DepthZeroConditions {
    a: ConditionA,
    b: ConditionB,
}

#[derive(Serialize)]
struct MultiscaleReport {
    scales: Vec<usize>,
    delta_hat: f64,
    beta_hat: f64,
    mu_hat: f64,
    gamma: f64,
    z0: (f64, f64),
    initial: Option<StateSummary>,
    /// Only at depth 0: (A) and (B) of the initial state.
    conditions: Option<DepthZeroConditions>,
    steps: Vec<AdvanceReport>,
    final_state: Option<StateSummary>,
    failure: Option<Failure>,
}

fn stage_name(s: AdvanceStage) -> String {
    format!("{s:?}")
}

pub fn multiscale(cfg: &RunConfig, p: &Prepared) -> Result<Report, CliError> {
    let (c, schedule) = cfg.multiscale()?;
    let scales = schedule
        .scales()
        .map_err(|e| CliError::Config(format!("multiscale.schedule: {e}")))?;
    let z0 = cis(c.z0_theta);
    let gamma = match c.gamma {
        Some(g) => g,
        None => fit_gamma(
            &p.f,
            &p.omega,
            c.z0_theta,
            c.fit_n,
            c.fit_samples,
            derive_seed(cfg.seed, 0x6a),
        )?,
    };
    let mut report = MultiscaleReport {
        scales,
        delta_hat: schedule.delta_hat(),
        beta_hat: schedule.beta_hat(),
        mu_hat: schedule.mu_hat(),
        gamma,
        z0: (z0.re, z0.im),
        initial: None,
        conditions: None,
        steps: Vec::new(),
        final_state: None,
        failure: None,
    };
    let mut lines = Vec::new();
    let finish = |report: MultiscaleReport,
                  lines: Vec<String>,
                  failure: Option<CliError>|
     -> Result<Report, CliError> {
        Ok(Report {
            files: vec![OutputFile::json("multiscale.json", &report)?],
            lines,
            failure,
        })
    };
    let init = InductiveState::initialize(
        p.model.clone(),
        &schedule,
        c.phi0.clone(),
        z0,
        gamma,
        c.grid,
        p.beta,
        p.eta,
    );
    let mut state = match init {
        Ok(s) => s,
        Err(cmvspec_core::CmvError::Hypothesis(msg)) => {
            report.failure = Some(Failure {
                stage: "Initialization".into(),
                inequality: msg.clone(),
            });
            lines.push(format!("initialization failed: {msg}"));
            return finish(report, lines, Some(CliError::Hypothesis(msg)));
        }
        Err(e) => return Err(e.into()),
    };
    report.initial = Some(state.summary());
    if schedule.s_max == 0 {
        let abcd = verify_conditions_abcd(
            &state,
            &schedule,
            &AbcdOptions {
                samples: c.samples,
                seed: cfg.seed,
                h_hat: None,
                h0: None,
            },
        )?;
        lines.push(format!(
            "depth 0: (A) {}, (B) {}",
            verdict(abcd.a.holds),
            verdict(abcd.b.holds)
        ));
        report.conditions = Some(DepthZeroConditions {
            a: abcd.a,
            b: abcd.b,
        });
        report.final_state = report.initial.clone();
        return finish(report, lines, None);
    }
    let opts = AdvanceOptions {
        require_conditions: c.require_conditions,
        samples: c.samples,
        seed: cfg.seed,
        extra_samples: c.extra_samples,
    };
    while state.depth < schedule.s_max {
        match inductive_advance(&state, &schedule, &opts)? {
            AdvanceOutcome::Advanced(next, rep) => {
                lines.push(format!(
                    "depth {} -> {}: N = {} -> {}, all lemma conclusions hold",
                    rep.from_depth,
                    rep.from_depth + 1,
                    rep.n_s,
                    rep.n_next
                ));
                report.steps.push(*rep);
                state = *next;
            }
            AdvanceOutcome::Failed { stage, inequality } => {
                lines.push(format!(
                    "depth {} failed at {}: {inequality}",
                    state.depth,
                    stage_name(stage)
                ));
                report.failure = Some(Failure {
                    stage: stage_name(stage),
                    inequality: inequality.clone(),
                });
                report.final_state = Some(state.summary());
                let msg = format!("{}: {inequality}", stage_name(stage));
                return finish(report, lines, Some(CliError::Hypothesis(msg)));
            }
            AdvanceOutcome::NoOp { reason } => {
                lines.push(reason);
                break;
            }
        }
    }
    report.final_state = Some(state.summary());
    finish(report, lines, None)
}

fn verdict(b: bool) -> &'static str {
    if b {
        "holds"
    } else {
        "fails"
    }
}

#[derive(Serialize)]
struct CaseResidual {
    case: usize,
    residual: f64,
}

#[derive(Serialize)]
struct IdentityResult {
    identity: &'static str,
    threshold: f64,
    max_residual: f64,
    pass: bool,
    residuals: Vec<CaseResidual>,
}

fn disk(rng: &mut ChaCha8Rng, amp: f64) -> Complex64 {
    let r = amp * sample_uniform::<f64>(rng, 0.0, 1.0).sqrt();
    Complex64::from_polar(r, sample_uniform(rng, 0.0, TAU))
}

fn unit(rng: &mut ChaCha8Rng) -> Complex64 {
    cis(sample_uniform(rng, 0.0, TAU))
}

fn random_sequence(
    rng: &mut ChaCha8Rng,
    lo: i64,
    hi: i64,
) -> Result<VerblunskySequence<f64>, CliError> {
    let amp = sample_uniform(rng, 0.0, 0.95);
    let values = (lo..=hi).map(|_| disk(rng, amp)).collect();
    Ok(VerblunskySequence::from_values(lo, values)?)
}

fn collect(identity: &'static str, threshold: f64, residuals: Vec<CaseResidual>) -> IdentityResult {
    let max_residual = residuals.iter().map(|r| r.residual).fold(0.0, f64::max);
    IdentityResult {
        identity,
        threshold,
        max_residual,
        pass: max_residual <= threshold,
        residuals,
    }
}

pub fn identity_suite(cfg: &RunConfig, p: &Prepared) -> Result<Report, CliError> {
    use rayon::prelude::*;
    let c = cfg.identity()?;
    let th = &c.thresholds;
    let max_n = c.max_n as i64;
    let rng_for = |tag: u64, case: usize| stream_rng(derive_seed(cfg.seed, tag), case as u64);
    let cases = 0..c.cases;

    let (unitarity, factorization): (Vec<_>, Vec<_>) = cases
        .clone()
        .into_par_iter()
        .map(|i| -> Result<(CaseResidual, CaseResidual), CliError> {
            let mut rng = rng_for(1, i);
            let n = 1 + (sample_uniform::<f64>(&mut rng, 0.0, max_n as f64) as i64).min(max_n - 1);
            let seq = random_sequence(&mut rng, -1, n)?;
            let m = build_finite_cmv(&seq, 0, n - 1, unit(&mut rng), unit(&mut rng))?;
            let fact = m.to_dense().max_abs_diff(&m.l_dense().matmul(&m.m_dense()));
            Ok((
                CaseResidual {
                    case: i,
                    residual: m.unitarity_defect(),
                },
                CaseResidual {
                    case: i,
                    residual: fact,
                },
            ))
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .unzip();

    let relation = cases
        .clone()
        .into_par_iter()
        .map(|i| -> Result<CaseResidual, CliError> {
            let mut rng = rng_for(2, i);
            let n = 2 + i % 19;
            let x = sample_phase(&mut rng, p.f.dim());
            let z = SpectralPoint::new(sample_uniform(&mut rng, 0.0, TAU));
            Ok(CaseResidual {
                case: i,
                residual: relation_residual(&p.f, &p.omega, &z, &x, n)?,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let green = cases
        .clone()
        .into_par_iter()
        .map(|i| -> Result<CaseResidual, CliError> {
            let mut rng = rng_for(3, i);
            let len =
                1 + (sample_uniform::<f64>(&mut rng, 0.0, max_n as f64) as i64).min(max_n - 1);
            let seq = random_sequence(&mut rng, -1, len)?;
            let j = (sample_uniform::<f64>(&mut rng, 0.0, len as f64) as i64).min(len - 1);
            let k = j
                + (sample_uniform::<f64>(&mut rng, 0.0, (len - j) as f64) as i64).min(len - 1 - j);
            let (beta, eta) = (unit(&mut rng), unit(&mut rng));
            let z = unit(&mut rng);
            let g = green_value(&seq, 0, len - 1, beta, eta, j, k, z)?;
            Ok(CaseResidual {
                case: i,
                residual: g.relative_mismatch(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let poisson = cases
        .clone()
        .into_par_iter()
        .map(|i| -> Result<CaseResidual, CliError> {
            let mut rng = rng_for(4, i);
            // alternate the parities of both ends
            let a = (i % 2) as i64;
            let b = a + 8 + ((i / 2) % 2) as i64 + 2 * (i % 7) as i64;
            let seq = random_sequence(&mut rng, a - 6, b + 6)?;
            let (beta, eta) = (unit(&mut rng), unit(&mut rng));
            let pairs = eigensolve(&build_finite_cmv(&seq, a - 5, b + 5, beta, eta)?)?;
            let pair = &pairs[i % pairs.len()];
            let mut worst: f64 = 0.0;
            for m in a + 1..b {
                worst = worst.max(poisson_residual(
                    &seq,
                    a,
                    b,
                    beta,
                    eta,
                    pair.value,
                    &pair.vector,
                    m,
                )?);
            }
            Ok(CaseResidual {
                case: i,
                residual: worst,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let results = vec![
        collect("unitarity", th.unitarity, unitarity),
        collect("factorization", th.factorization, factorization),
        collect("relation", th.relation, relation),
        collect("green", th.green, green),
        collect("poisson", th.poisson, poisson),
    ];
    let lines: Vec<String> = results
        .iter()
        .map(|r| {
            format!(
                "{}: max residual {:e} (threshold {:e}) {}",
                r.identity,
                r.max_residual,
                r.threshold,
                if r.pass { "ok" } else { "EXCEEDED" }
            )
        })
        .collect();
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.identity)
        .collect();
    let failure = (!failed.is_empty()).then(|| {
        CliError::Numeric(format!(
            "identity residuals above threshold: {}",
            failed.join(", ")
        ))
    });
    Ok(Report {
        files: vec![OutputFile::json("identity.json", &results)?],
        lines,
        failure,
    })
}
