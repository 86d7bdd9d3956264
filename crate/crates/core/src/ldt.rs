//! Empirical large-deviation scans and the spectral and covering forms of the
//! large-deviation estimate as computable predicates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmv::{build_finite_cmv, Cut, QuasiPeriodicModel, VerblunskySequence};
use crate::cocycle::{lyapunov_finite, sampled_log_norms, SpectralPoint};
use crate::determinants::normalized_phi;
use crate::error::{CmvError, Result};
use crate::montecarlo::{
    derive_seed, sample_phase, sample_uniform, stream_rng, ExceptionalSetEstimate,
};
use crate::scalar::{Cx, Real};
use crate::spectral::{distance_to_spectrum, eigenvalues};
use crate::torus::{Frequency, Phase, SamplingFunction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdtEntry {
    pub n: usize,
    /// L_n estimated on an independent set of phases.
    pub l_n: f64,
    pub l_n_stderr: f64,
    /// n^{1−τ}.
    pub threshold: f64,
    pub deviation: ExceptionalSetEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdtScan {
    pub entries: Vec<LdtEntry>,
    /// True when some measured L_n is not positive; the scan then says
    /// nothing about the estimate.
    pub vacuous: bool,
    /// Successive estimates nonincreasing up to overlapping Wilson intervals.
    pub trend_nonincreasing: bool,
}

fn trend_ok(entries: &[LdtEntry]) -> bool {
    entries
        .windows(2)
        .all(|w| w[1].deviation.wilson_low <= w[0].deviation.wilson_high)
}

fn scan_with<T: Real>(
    f: &SamplingFunction<T>,
    omega: &Frequency<T>,
    z: &SpectralPoint<T>,
    n_list: &[usize],
    tau: T,
    samples: usize,
    seed: u64,
    label: &str,
    per_sample: impl Fn(usize, usize) -> Result<T> + Sync,
) -> Result<LdtScan> {
    if n_list.is_empty() || samples == 0 {
        return Err(CmvError::InvalidInput(
            "need at least one n and one sample".into(),
        ));
    }
    let mut entries = Vec::with_capacity(n_list.len());
    let mut vacuous = false;
    for &n in n_list {
        if n == 0 {
            return Err(CmvError::InvalidInput("n must be positive".into()));
        }
        let est = lyapunov_finite(f, omega, z, n, samples, derive_seed(seed, 2 * n as u64 + 1))?;
        // rounding leaves a ~1e-16 exponent where the exact value is zero
        if est.value <= T::c(1e-10) {
            vacuous = true;
        }
        let nn = T::from_usize_lossy(n);
        let threshold = nn.powf(T::one() - tau);
        let center = nn * est.value;
        let logs: Vec<T> = (0..samples)
            .into_par_iter()
            .map(|i| per_sample(n, i))
            .collect::<Result<_>>()?;
        // a −∞ (singular) sample always counts as deviating
        let hits = logs
            .iter()
            .filter(|v| !((**v - center).abs() <= threshold))
            .count();
        entries.push(LdtEntry {
            n,
            l_n: est.value.to_f64_lossy(),
            l_n_stderr: est.std_error.to_f64_lossy(),
            threshold: threshold.to_f64_lossy(),
            deviation: ExceptionalSetEstimate::new(
                format!(
                    "|{label} − nL_n| > n^(1−τ), n = {n}, τ = {}",
                    tau.to_f64_lossy()
                ),
                hits,
                samples,
            ),
        });
    }
    let trend_nonincreasing = trend_ok(&entries);
    Ok(LdtScan {
        entries,
        vacuous,
        trend_nonincreasing,
    })
}

/// Fraction of phases with |log‖M_n(x)‖ − nL_n| > n^{1−τ} for each n.
pub fn ldt_measure_scan<T: Real>(
    f: &SamplingFunction<T>,
    omega: &Frequency<T>,
    z: &SpectralPoint<T>,
    n_list: &[usize],
    tau: T,
    samples: usize,
    seed: u64,
) -> Result<LdtScan> {
    let logs: Vec<Vec<T>> = n_list
        .iter()
        .map(|&n| sampled_log_norms(f, omega, z, n, samples, derive_seed(seed, 2 * n as u64)))
        .collect::<Result<_>>()?;
    let index = |n: usize| {
        n_list
            .iter()
            .position(|m| *m == n)
            .expect("n from the list")
    };
    scan_with(
        f,
        omega,
        z,
        n_list,
        tau,
        samples,
        seed,
        "log‖M_n‖",
        |n, i| Ok(logs[index(n)][i]),
    )
}

/// Same scan for log|φ^{β,η}_{[0,n−1]}(x)| with the normalized determinant.
#[allow(clippy::too_many_arguments)]
pub fn ldt_determinant_scan<T: Real>(
    f: &SamplingFunction<T>,
    omega: &Frequency<T>,
    z: &SpectralPoint<T>,
    n_list: &[usize],
    tau: T,
    samples: usize,
    seed: u64,
    beta: Cx<T>,
    eta: Cx<T>,
) -> Result<LdtScan> {
    let model = QuasiPeriodicModel::new(f.clone(), omega.clone())?;
    scan_with(
        f,
        omega,
        z,
        n_list,
        tau,
        samples,
        seed,
        "log|φ|",
        |n, i| {
            let x = sample_phase(
                &mut stream_rng(derive_seed(seed, 2 * n as u64), i as u64),
                f.dim(),
            );
            let seq = model.sequence(&x, -1, n as i64 - 1)?;
            Ok(
                normalized_phi(&seq, 0, n as i64 - 1, Cut::Set(beta), Cut::Set(eta), z.z())?
                    .log_abs,
            )
        },
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralForm {
    pub resolvent_ok: bool,
    pub logphi_ok: bool,
    /// ‖(𝓔 − z)^{−1}‖ = 1/dist(z, σ) for the unitary truncation.
    pub resolvent_norm: f64,
    /// log|φ^{β,η}_{[0,n−1]}(z)| (normalized determinant).
    pub log_phi: f64,
}

impl SpectralForm {
    /// resolvent_ok ⇒ logphi_ok.
    pub fn implication_holds(&self) -> bool {
        !self.resolvent_ok || self.logphi_ok
    }
}

/// resolvent_ok iff ‖(𝓔^{β,η}_{[0,n−1]} − z)^{−1}‖ ≤ C·exp(n^{ν/2}); logphi_ok iff
/// log|φ| > nL_n − n^{1−τ/2}. `l_n` is the caller's estimate of L_n(z).
#[allow(clippy::too_many_arguments)]
pub fn spectral_form_predicate<T: Real>(
    seq: &VerblunskySequence<T>,
    n: usize,
    beta: Cx<T>,
    eta: Cx<T>,
    z: Cx<T>,
    nu: T,
    tau: T,
    l_n: T,
    c: T,
) -> Result<SpectralForm> {
    if n == 0 {
        return Err(CmvError::InvalidInput("n must be positive".into()));
    }
    let b = n as i64 - 1;
    let m = build_finite_cmv(seq, 0, b, beta, eta)?;
    let dist = distance_to_spectrum(&eigenvalues(&m)?, z);
    let nn = T::from_usize_lossy(n);
    let resolvent_norm = if dist > T::zero() {
        dist.recip()
    } else {
        T::infinity()
    };
    let resolvent_ok = resolvent_norm <= c * nn.powf(nu / T::c(2.0)).exp();
    let phi = normalized_phi(seq, 0, b, Cut::Set(beta), Cut::Set(eta), z)?;
    let logphi_ok = phi.log_abs > nn * l_n - nn.powf(T::one() - tau / T::c(2.0));
    Ok(SpectralForm {
        resolvent_ok,
        logphi_ok,
        resolvent_norm: resolvent_norm.to_f64_lossy(),
        log_phi: phi.log_abs.to_f64_lossy(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveringFormReport {
    pub preconditions_ok: bool,
    /// (m, reason) for every site whose sub-window fails (i)–(iii).
    pub offending: Vec<(i64, String)>,
    /// exp(−2 max_m |I_m|^{1−τ/4}).
    pub bound: f64,
    /// dist(z₀, σ(𝓔^{β,η}_{[0,n−1]})) by eigensolve; None if preconditions failed.
    pub distance: Option<f64>,
    pub holds: Option<bool>,
}

/// Checks the covering form on [0, n−1]: given sub-windows I_m for every m,
/// verifies (i) dist(m, [0,n−1]∖I_m) ≥ |I_m|/100, (ii) |I_m| ≥ `floor`,
/// (iii) log|φ_{I_m}| > |I_m|L_{|I_m|} − |I_m|^{1−τ/4}, then tests the distance
/// conclusion by eigensolve. `l_of(len)` supplies L_len(z₀).
#[allow(clippy::too_many_arguments)]
pub fn covering_form_check<T: Real>(
    seq: &VerblunskySequence<T>,
    z0: Cx<T>,
    n: usize,
    subwindows: &[(i64, i64)],
    tau: T,
    floor: usize,
    beta: Cx<T>,
    eta: Cx<T>,
    l_of: impl Fn(usize) -> Result<T>,
) -> Result<CoveringFormReport> {
    if subwindows.len() != n {
        return Err(CmvError::DimensionMismatch {
            expected: n,
            got: subwindows.len(),
        });
    }
    let b = n as i64 - 1;
    let mut offending = Vec::new();
    let mut max_len = 0usize;
    for (m, &(lo, hi)) in subwindows.iter().enumerate() {
        let m = m as i64;
        if !(lo <= m && m <= hi && lo >= 0 && hi <= b) {
            offending.push((
                m,
                format!("I_m = [{lo}, {hi}] must contain m and lie in [0, {b}]"),
            ));
            continue;
        }
        let len = (hi - lo + 1) as usize;
        max_len = max_len.max(len);
        // distance from m to the complement of I_m inside [0, n−1]
        let left_gap = if lo > 0 { m - lo + 1 } else { i64::MAX };
        let right_gap = if hi < b { hi - m + 1 } else { i64::MAX };
        let gap = left_gap.min(right_gap);
        if gap != i64::MAX && (gap as f64) < len as f64 / 100.0 {
            offending.push((m, format!("(i) dist(m, [0,n−1]∖I_m) = {gap} < |I_m|/100")));
            continue;
        }
        if len < floor {
            offending.push((m, format!("(ii) |I_m| = {len} below the floor {floor}")));
            continue;
        }
        let lt = T::from_usize_lossy(len);
        let phi = normalized_phi(seq, lo, hi, Cut::Set(beta), Cut::Set(eta), z0)?;
        let need = lt * l_of(len)? - lt.powf(T::one() - tau / T::c(4.0));
        if !(phi.log_abs > need) {
            offending.push((
                m,
                format!(
                    "(iii) log|φ_I| = {} ≤ |I|L_|I| − |I|^(1−τ/4) = {}",
                    phi.log_abs, need
                ),
            ));
        }
    }
    let bound = (-T::c(2.0) * T::from_usize_lossy(max_len).powf(T::one() - tau / T::c(4.0))).exp();
    if !offending.is_empty() {
        return Ok(CoveringFormReport {
            preconditions_ok: false,
            offending,
            bound: bound.to_f64_lossy(),
            distance: None,
            holds: None,
        });
    }
    let m = build_finite_cmv(seq, 0, b, beta, eta)?;
    let dist = distance_to_spectrum(&eigenvalues(&m)?, z0);
    Ok(CoveringFormReport {
        preconditions_ok: true,
        offending,
        bound: bound.to_f64_lossy(),
        distance: Some(dist.to_f64_lossy()),
        holds: Some(dist >= bound),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnionCoveringReport {
    pub preconditions_ok: bool,
    pub offending: Vec<(i64, String)>,
    /// J = ∪ J_m.
    pub union: (i64, i64),
    /// ½exp(−K).
    pub bound: f64,
    /// min over sampled x of dist(σ(𝓔_J(x)), 𝓩); sample 0 is x₀ itself.
    pub min_distance: Option<f64>,
    pub samples: usize,
    pub holds: Option<bool>,
}

/// Verifies the union covering statement: per-site windows J_m with
/// dist(m, ∂J_m) ≥ |J_m|/100, K < ½min|J_m|^{ν/2} and
/// dist(σ(𝓔_{J_m}(x₀)), 𝓩) ≥ e^{−K} imply dist(σ(𝓔_J(x)), 𝓩) ≥ ½e^{−K}
/// for |x − x₀| < e^{−2K}; x is sampled.
#[allow(clippy::too_many_arguments)]
pub fn union_covering_check<T: Real>(
    model: &QuasiPeriodicModel<T>,
    x0: &Phase<T>,
    targets: &[Cx<T>],
    windows: &[(i64, (i64, i64))],
    k: T,
    nu: T,
    beta: Cx<T>,
    eta: Cx<T>,
    samples: usize,
    seed: u64,
) -> Result<UnionCoveringReport> {
    if targets.is_empty() || windows.is_empty() {
        return Err(CmvError::InvalidInput(
            "need at least one target point and one window".into(),
        ));
    }
    let lo = windows.iter().map(|w| w.1 .0).min().expect("nonempty");
    let hi = windows.iter().map(|w| w.1 .1).max().expect("nonempty");
    let seq0 = model.sequence(x0, lo - 1, hi)?;
    let dist_to_targets = |vals: &[Cx<T>]| {
        targets
            .iter()
            .map(|z| distance_to_spectrum(vals, *z))
            .fold(T::infinity(), T::min)
    };
    let mut offending = Vec::new();
    let min_len = windows
        .iter()
        .map(|w| (w.1 .1 - w.1 .0 + 1) as usize)
        .min()
        .expect("nonempty");
    let k_cap = T::c(0.5) * T::from_usize_lossy(min_len).powf(nu / T::c(2.0));
    if !(k < k_cap) {
        offending.push((
            i64::MIN,
            format!("K = {k} is not below ½min|J_m|^(ν/2) = {k_cap}"),
        ));
    }
    for &(m, (c, d)) in windows {
        let len = (d - c + 1) as f64;
        let edge = (m - c).min(d - m);
        if !(c <= m && m <= d) || (edge as f64) < len / 100.0 {
            offending.push((
                m,
                format!("J_m = [{c}, {d}] must contain m with dist(m, ∂J_m) ≥ |J_m|/100"),
            ));
            continue;
        }
        let e = build_finite_cmv(&seq0, c, d, beta, eta)?;
        let dist = dist_to_targets(&eigenvalues(&e)?);
        if dist < (-k).exp() {
            offending.push((m, format!("dist(σ(𝓔_J_m(x₀)), 𝓩) = {dist} < e^(−K)")));
        }
    }
    let bound = T::c(0.5) * (-k).exp();
    if !offending.is_empty() {
        return Ok(UnionCoveringReport {
            preconditions_ok: false,
            offending,
            union: (lo, hi),
            bound: bound.to_f64_lossy(),
            min_distance: None,
            samples: 0,
            holds: None,
        });
    }
    let radius = (-T::c(2.0) * k).exp();
    let dists: Vec<T> = (0..samples.max(1))
        .into_par_iter()
        .map(|i| -> Result<T> {
            let x = if i == 0 {
                x0.clone()
            } else {
                let mut rng = stream_rng(seed, i as u64);
                let h: Vec<T> = (0..x0.dim())
                    .map(|_| sample_uniform(&mut rng, -radius, radius))
                    .collect();
                x0.translated(&h)
            };
            let seq = model.sequence(&x, lo - 1, hi)?;
            let e = build_finite_cmv(&seq, lo, hi, beta, eta)?;
            Ok(dist_to_targets(&eigenvalues(&e)?))
        })
        .collect::<Result<_>>()?;
    let min_distance = dists.iter().copied().fold(T::infinity(), T::min);
    Ok(UnionCoveringReport {
        preconditions_ok: true,
        offending,
        union: (lo, hi),
        bound: bound.to_f64_lossy(),
        min_distance: Some(min_distance.to_f64_lossy()),
        samples: dists.len(),
        holds: Some(min_distance >= bound),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{cis, cone, cx};
    use crate::torus::SamplingFunction;

    #[test]
    fn constant_alpha_has_empty_deviation_set() {
        let f = SamplingFunction::constant(2, cx(0.5, 0.0)).unwrap();
        let om = Frequency::new(&[0.618_033_988_749_895, 0.414_213_562_373_095]);
        let z = SpectralPoint::new(0.0);
        let scan = ldt_measure_scan(&f, &om, &z, &[50, 100], 0.3, 64, 7).unwrap();
        for e in &scan.entries {
            assert_eq!(e.deviation.hits, 0);
            assert!((e.l_n - 3f64.sqrt().ln()).abs() < 0.02);
        }
        assert!(scan.trend_nonincreasing);
        assert!(!scan.vacuous);
    }

    #[test]
    fn free_case_is_vacuous_but_exact() {
        let f = SamplingFunction::constant(1, cx(0.0, 0.0)).unwrap();
        let om = Frequency::new(&[0.618_033_988_749_895]);
        let z = SpectralPoint::new(1.0);
        let scan = ldt_measure_scan(&f, &om, &z, &[10, 20], 0.3, 16, 1).unwrap();
        assert!(scan.vacuous);
        assert!(scan.entries.iter().all(|e| e.deviation.hits == 0));
    }

    #[test]
    fn spectral_form_far_from_spectrum() {
        // constant α = 0.5 has its gap around θ = 0
        let seq = VerblunskySequence::constant(cx(0.5, 0.0), -1, 20).unwrap();
        let l = 3f64.sqrt().ln();
        let s =
            spectral_form_predicate(&seq, 20, cone(), cone(), cis(0.0), 0.1, 0.3, l, 1.0).unwrap();
        assert!(s.implication_holds());
    }
}
