mod common;

use cmvspec_core::multiscale::*;
use cmvspec_core::spectral::eigensolve;
use cmvspec_core::*;
use common::*;

fn omega2() -> Frequency64 {
    Frequency::new(&[2f64.sqrt() - 1.0, (5f64.sqrt() - 1.0) / 2.0])
}

fn one() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

fn strong_model() -> QuasiPeriodicModel64 {
    QuasiPeriodicModel::new(SamplingFunction::two_mode(0.9, 0.02).unwrap(), omega2()).unwrap()
}

/// Unit coefficients at −5 and 4 split [−4, 4] off from the rest of the line.
fn decoupled_model() -> QuasiPeriodicModel64 {
    strong_model()
        .with_override(-5, one())
        .unwrap()
        .with_override(4, -one())
        .unwrap()
}

fn example_schedule(s_max: usize) -> ScaleSchedule64 {
    let p = ScheduleParams {
        nu_prime: 0.9,
        nu: 0.9,
        ratio_factor: 1.0,
        n0: 16,
        s_max,
        ..Default::default()
    };
    ScaleSchedule::from_params(&p).unwrap()
}

/// The block eigenvalue at x = (0.3, 0.5) farthest from the rest of the spectrum.
fn isolated_block_eigenvalue(model: &QuasiPeriodicModel64) -> Complex64 {
    let x = Phase::new(&[0.3, 0.5]);
    let seq = model.sequence(&x, -41, 40).unwrap();
    let pairs = eigensolve(&build_finite_cmv(&seq, -40, 40, one(), one()).unwrap()).unwrap();
    let mut best = (0.0, one());
    for p in &pairs {
        let outside = (-40..=-5)
            .chain(5..=40)
            .map(|s| p.vector.at(s).norm())
            .fold(0.0, f64::max);
        if outside == 0.0 {
            let sep = pairs
                .iter()
                .filter(|q| q.index != p.index)
                .map(|q| dist(q.value, p.value))
                .fold(f64::INFINITY, f64::min);
            if sep > best.0 {
                best = (sep, p.value);
            }
        }
    }
    assert!(best.0 > 0.1, "no well separated block eigenvalue");
    best.1
}

fn initial_state(gamma: f64) -> (InductiveState64, ScaleSchedule64) {
    let model = decoupled_model();
    let z0 = isolated_block_eigenvalue(&model);
    let sch = example_schedule(1);
    let st =
        InductiveState::initialize(model, &sch, vec![0.3], z0, gamma, 3, one(), one()).unwrap();
    (st, sch)
}

fn advance_opts() -> AdvanceOptions {
    AdvanceOptions {
        require_conditions: false,
        samples: 20,
        seed: 1,
        extra_samples: 4,
    }
}

#[test]
fn default_schedule_is_admissible() {
    let sch = ScaleSchedule::<f64>::from_params(&ScheduleParams::default()).unwrap();
    assert!(sch.ordering_chain().iter().all(|l| l.holds));
    assert_eq!(example_schedule(1).scales().unwrap(), vec![16, 30]);
}

#[test]
fn initialization_lands_on_the_block() {
    let (st, _) = initial_state(1.0);
    let s = st.summary();
    assert_eq!(s.nodes[0].x, vec![0.3, 0.5]);
    assert!(st.max_residual() < 1e-9);
    assert!(st.in_strip());
}

#[test]
fn conditions_a_and_b_hold_at_depth_zero() {
    let (st, sch) = initial_state(1.0);
    let rep = verify_conditions_abcd(
        &st,
        &sch,
        &AbcdOptions {
            samples: 20,
            seed: 3,
            h_hat: None,
            h0: None,
        },
    )
    .unwrap();
    assert!(rep.a.holds, "{:?}", rep.a);
    assert!(rep.b.holds, "{:?}", rep.b);
    assert!(matches!(rep.c, ConditionC::Estimated { .. }));
    assert!(matches!(rep.d, ConditionD::Estimated { .. }));
}

#[test]
fn probe_on_the_orbit_is_rejected() {
    let (st, sch) = initial_state(1.0);
    let omega = omega2();
    let on_orbit = omega.coords().to_vec();
    let opts = AbcdOptions {
        samples: 4,
        seed: 3,
        h_hat: Some(on_orbit),
        h0: None,
    };
    let rep = verify_conditions_abcd(&st, &sch, &opts).unwrap();
    assert!(matches!(rep.c, ConditionC::Rejected { .. }), "{:?}", rep.c);
}

#[test]
fn zero_direction_is_rejected() {
    let (st, sch) = initial_state(1.0);
    for h0 in [
        vec![Complex64::new(0.0, 0.0); 2],
        vec![Complex64::new(2.0, 0.0), Complex64::new(0.0, 0.0)],
    ] {
        let opts = AbcdOptions {
            samples: 4,
            seed: 3,
            h_hat: None,
            h0: Some(h0),
        };
        let rep = verify_conditions_abcd(&st, &sch, &opts).unwrap();
        assert!(matches!(rep.d, ConditionD::Rejected { .. }), "{:?}", rep.d);
    }
}

#[test]
fn zero_depth_schedule_does_nothing() {
    let (st, _) = initial_state(1.0);
    let out = inductive_advance(&st, &example_schedule(0), &advance_opts()).unwrap();
    assert!(matches!(out, AdvanceOutcome::NoOp { .. }));
}

#[test]
fn absurd_gamma_fails_the_displacement_bound() {
    let (st, sch) = initial_state(1e4);
    let out = inductive_advance(&st, &sch, &advance_opts()).unwrap();
    assert_eq!(
        out.failed_stage(),
        Some(AdvanceStage::BulkDisplacement),
        "{out:?}"
    );
}

#[test]
fn decoupled_block_advances_one_depth() {
    let (st, sch) = initial_state(1.0);
    match inductive_advance(&st, &sch, &advance_opts()).unwrap() {
        AdvanceOutcome::Advanced(next, rep) => {
            assert_eq!(next.depth, 1);
            assert_eq!(rep.n_next, 30);
            assert!(rep.step.all_hold, "{:?}", rep.step.first_failure());
            assert!(rep.max_displacement < rep.displacement_bound);
            assert!(rep.max_vector_gap < rep.vector_bound);
            assert!(rep.min_separation > rep.separation_floor);
            assert!(next.in_strip());
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn boundary_heavy_eigenvector_breaks_the_decay_hypothesis() {
    let model = strong_model();
    let x0 = Phase::new(&[0.3, 0.5]);
    let seq = model.sequence(&x0, -17, 16).unwrap();
    let pairs = eigensolve(&build_finite_cmv(&seq, -16, 16, one(), one()).unwrap()).unwrap();
    let edge = |p: &EigenPair64| p.vector.at(-16).norm().max(p.vector.at(16).norm());
    let worst = pairs
        .iter()
        .max_by(|a, b| edge(a).total_cmp(&edge(b)))
        .unwrap();
    let inp = LocalizationInput {
        model: &model,
        x0,
        z0: worst.value,
        n0: 16,
        inner: (-16, 16),
        n_outer: 30,
        windows: None,
        beta_hat: 0.81,
        gamma: 1.0,
        beta: one(),
        eta: one(),
        probes: Vec::new(),
        extra_samples: 0,
        seed: 0,
    };
    match finite_localization_step(&inp) {
        Err(CmvError::Hypothesis(msg)) => assert!(msg.starts_with("(ii)"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn compact_block_passes_the_localization_step() {
    let model = decoupled_model();
    let z0 = isolated_block_eigenvalue(&model);
    let inp = LocalizationInput {
        model: &model,
        x0: Phase::new(&[0.3, 0.5]),
        z0,
        n0: 16,
        inner: (-16, 16),
        n_outer: 30,
        windows: None,
        beta_hat: 0.81,
        gamma: 1.0,
        beta: one(),
        eta: one(),
        probes: Vec::new(),
        extra_samples: 4,
        seed: 5,
    };
    let step = finite_localization_step(&inp).unwrap();
    assert!(step.all_hold, "{:?}", step.first_failure());
}

#[test]
fn constant_coverage_matches_the_floquet_band() {
    let alpha = Complex64::new(0.5, 0.0);
    let f = SamplingFunction::constant(2, alpha).unwrap();
    let (grid, n) = (180, 100);
    let opts = CoverageOptions::new((0.0, std::f64::consts::TAU), grid, n, 0.02);
    let scan = interval_coverage_scan(&f, &omega2(), &opts).unwrap();
    let step = std::f64::consts::TAU / grid as f64;
    let slack = step + 2.0 / n as f64;
    for p in &scan.points {
        let near_edge = [-slack, slack]
            .iter()
            .any(|d| in_floquet_band(alpha, p.theta + d) != in_floquet_band(alpha, p.theta));
        if !near_edge {
            assert_eq!(
                p.covered,
                in_floquet_band(alpha, p.theta),
                "θ = {}",
                p.theta
            );
        }
    }
    assert_eq!(scan.gaps.len(), 1);
    let (g0, g1) = scan.gaps[0];
    let lo = std::f64::consts::PI * 5.0 / 3.0;
    let hi = std::f64::consts::TAU + std::f64::consts::PI / 3.0;
    let (g0, g1) = if g1 < std::f64::consts::PI {
        (g0 + std::f64::consts::TAU, g1 + std::f64::consts::TAU)
    } else {
        (g0, g1)
    };
    assert!(
        (g0 - lo).abs() <= slack && (g1 - hi).abs() <= slack,
        "gap {:?}",
        scan.gaps[0]
    );
}

#[test]
fn coverage_is_independent_of_worker_count() {
    let f = SamplingFunction::two_mode(0.9, 0.02).unwrap();
    let mut opts = CoverageOptions::new((0.0, 3.0), 24, 20, 0.05);
    opts.phase_samples = 8;
    opts.seed = 42;
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            interval_coverage_scan(&f, &omega2(), &opts)
                .unwrap()
                .to_csv()
        })
    };
    assert_eq!(run(1), run(4));
}
