//! Eigenpairs of finite unitary truncations, localization profiles, eigenvalue
//! separation and the eigenvector perturbation check.

use std::fmt::Write as _;

use crate::cmv::FiniteCmv;
use crate::error::{CmvError, Result};
use crate::linalg::{complex_schur, BandLu, DenseMatrix};
use crate::scalar::{chordal, cone, creal, cx, czero, phase_of, Cx, Real};

/// Largest truncation `eigensolve` accepts by default.
pub const MAX_EIGEN_DIM: usize = 4096;

/// A vector indexed by lattice sites `first, first + 1, …`.
///
/// Sites outside the stored range read as zero, which is how vectors living
/// on different windows are compared.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteVector<T: Real> {
    pub first: i64,
    pub values: Vec<Cx<T>>,
}

impl<T: Real> SiteVector<T> {
    pub fn new(first: i64, values: Vec<Cx<T>>) -> Self {
        Self { first, values }
    }

    /// Unit vector at `site`.
    pub fn delta(site: i64) -> Self {
        Self {
            first: site,
            values: vec![cone()],
        }
    }

    pub fn last(&self) -> i64 {
        self.first + self.values.len() as i64 - 1
    }

    pub fn at(&self, s: i64) -> Cx<T> {
        if s < self.first || s > self.last() {
            czero()
        } else {
            self.values[(s - self.first) as usize]
        }
    }

    pub fn norm(&self) -> T {
        self.values.iter().map(|v| v.norm_sqr()).sum::<T>().sqrt()
    }

    /// Zero-padded copy supported on [lo, hi] (entries outside are dropped).
    pub fn padded(&self, lo: i64, hi: i64) -> Self {
        Self {
            first: lo,
            values: (lo..=hi).map(|s| self.at(s)).collect(),
        }
    }

    fn union_range(&self, other: &Self) -> (i64, i64) {
        (self.first.min(other.first), self.last().max(other.last()))
    }

    /// ⟨self, other⟩ = Σ conj(self(s))·other(s) after padding both.
    pub fn inner(&self, other: &Self) -> Cx<T> {
        let (lo, hi) = self.union_range(other);
        (lo..=hi)
            .map(|s| self.at(s).conj() * other.at(s))
            .fold(czero(), |a, b| a + b)
    }

    /// ‖self − other‖ after padding both to a common window.
    pub fn distance(&self, other: &Self) -> T {
        let (lo, hi) = self.union_range(other);
        (lo..=hi)
            .map(|s| (self.at(s) - other.at(s)).norm_sqr())
            .sum::<T>()
            .sqrt()
    }

    pub fn scaled(&self, c: Cx<T>) -> Self {
        Self {
            first: self.first,
            values: self.values.iter().map(|v| *v * c).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EigenPair<T: Real> {
    /// Position in the phase ordering.
    pub index: usize,
    /// Eigenvalue projected onto the unit circle.
    pub value: Cx<T>,
    /// |z| as returned by the solver, before projection.
    pub raw_modulus: T,
    pub vector: SiteVector<T>,
    /// ‖𝓔u − zu‖₂ with the projected z.
    pub residual: T,
}

impl<T: Real> EigenPair<T> {
    pub fn theta(&self) -> T {
        phase_of(self.value)
    }
}

fn project<T: Real>(z: Cx<T>) -> Cx<T> {
    let r = z.norm();
    if r == T::zero() {
        cone()
    } else {
        z / r
    }
}

fn normalize_and_gauge<T: Real>(v: &mut [Cx<T>]) {
    let nrm = v.iter().map(|x| x.norm_sqr()).sum::<T>().sqrt();
    if nrm == T::zero() {
        return;
    }
    // first entry of maximal modulus becomes real positive
    let mut best = 0usize;
    let mut best_abs = T::neg_infinity();
    for (i, x) in v.iter().enumerate() {
        if x.norm() > best_abs {
            best_abs = x.norm();
            best = i;
        }
    }
    let ph = v[best].conj() / v[best].norm();
    let c = ph / nrm;
    for x in v.iter_mut() {
        *x *= c;
    }
}

fn residual_of<T: Real>(av: &[Cx<T>], v: &[Cx<T>], z: Cx<T>) -> T {
    av.iter()
        .zip(v)
        .map(|(a, x)| (*a - z * *x).norm_sqr())
        .sum::<T>()
        .sqrt()
}

fn sort_by_phase<T: Real>(pairs: &mut [EigenPair<T>]) {
    pairs.sort_by(|p, q| {
        p.theta()
            .partial_cmp(&q.theta())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    for (k, p) in pairs.iter_mut().enumerate() {
        p.index = k;
    }
}

/// Full eigen-decomposition of a unitary truncation, ordered by phase.
pub fn eigensolve<T: Real>(m: &FiniteCmv<T>) -> Result<Vec<EigenPair<T>>> {
    eigensolve_with_limit(m, MAX_EIGEN_DIM)
}

pub fn eigensolve_with_limit<T: Real>(
    m: &FiniteCmv<T>,
    max_dim: usize,
) -> Result<Vec<EigenPair<T>>> {
    let n = m.dim();
    if n > max_dim {
        return Err(CmvError::InvalidInput(format!(
            "truncation of size {n} exceeds the eigensolver limit {max_dim}"
        )));
    }
    let schur = complex_schur(&m.to_dense(), true)?;
    let z = schur.vectors.expect("vectors requested");
    let (a, _) = m.interval();
    let mut pairs = Vec::with_capacity(n);
    for (k, raw) in schur.eigenvalues.iter().enumerate() {
        let mut v = z.column(k).to_vec();
        normalize_and_gauge(&mut v);
        let value = project(*raw);
        let residual = residual_of(&m.apply(&v)?, &v, value);
        pairs.push(EigenPair {
            index: k,
            value,
            raw_modulus: raw.norm(),
            vector: SiteVector::new(a, v),
            residual,
        });
    }
    sort_by_phase(&mut pairs);
    Ok(pairs)
}

/// Eigen-decomposition of an arbitrary normal (typically unitary) dense matrix;
/// the vectors are indexed from site 0.
pub fn eigensolve_dense<T: Real>(a: &DenseMatrix<T>) -> Result<Vec<EigenPair<T>>> {
    let schur = complex_schur(a, true)?;
    let z = schur.vectors.expect("vectors requested");
    let mut pairs = Vec::with_capacity(a.dim());
    for (k, raw) in schur.eigenvalues.iter().enumerate() {
        let mut v = z.column(k).to_vec();
        normalize_and_gauge(&mut v);
        let value = project(*raw);
        let residual = residual_of(&a.matvec(&v), &v, value);
        pairs.push(EigenPair {
            index: k,
            value,
            raw_modulus: raw.norm(),
            vector: SiteVector::new(0, v),
            residual,
        });
    }
    sort_by_phase(&mut pairs);
    Ok(pairs)
}

/// Phase-sorted, circle-projected eigenvalues without vectors.
pub fn eigenvalues<T: Real>(m: &FiniteCmv<T>) -> Result<Vec<Cx<T>>> {
    let schur = complex_schur(&m.to_dense(), false)?;
    let mut vals: Vec<Cx<T>> = schur.eigenvalues.into_iter().map(project).collect();
    vals.sort_by(|p, q| {
        phase_of(*p)
            .partial_cmp(&phase_of(*q))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(vals)
}

/// Eigenvector for an (accurate) eigenvalue estimate by inverse iteration
/// through a banded LU of z − 𝓔.
pub fn inverse_iteration<T: Real>(
    m: &FiniteCmv<T>,
    z: Cx<T>,
    iterations: usize,
) -> Result<EigenPair<T>> {
    let n = m.dim();
    let (a, _) = m.interval();
    let shift_for = |z: Cx<T>| {
        BandLu::factor(n, 2, 2, |i, j| {
            let e = m.entry(a + i as i64, a + j as i64);
            if i == j {
                z - e
            } else {
                -e
            }
        })
    };
    let mut lu = shift_for(z);
    if lu.min_pivot() == T::zero() {
        lu = shift_for(z * cx(T::one(), T::c(1e-14)));
    }
    // deterministic start with no special alignment to any eigenvector
    let mut v: Vec<Cx<T>> = (0..n)
        .map(|i| {
            let t = T::c(0.618_033_988_749_895 * (i as f64 + 1.0));
            cx(T::one() + t.sin() * T::c(0.3), t.cos())
        })
        .collect();
    for _ in 0..iterations.max(1) {
        v = lu.solve(&v)?;
        if v.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
            return Err(CmvError::Numeric("inverse iteration overflowed".into()));
        }
        normalize_and_gauge(&mut v);
    }
    let av = m.apply(&v)?;
    let rq = v
        .iter()
        .zip(&av)
        .map(|(x, y)| x.conj() * *y)
        .fold(czero(), |s, t| s + t);
    let value = project(rq);
    let residual = residual_of(&av, &v, value);
    Ok(EigenPair {
        index: 0,
        value,
        raw_modulus: rq.norm(),
        vector: SiteVector::new(a, v),
        residual,
    })
}

/// The eigenpair closest to z; the lower index wins ties.
pub fn nearest_eigen<T: Real>(pairs: &[EigenPair<T>], z: Cx<T>) -> Result<(&EigenPair<T>, T)> {
    let mut best: Option<(&EigenPair<T>, T)> = None;
    for p in pairs {
        let d = chordal(p.value, z);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((p, d));
        }
    }
    best.ok_or_else(|| CmvError::InvalidInput("no eigenpairs".into()))
}

/// Distance from z to the nearest of the given eigenvalues.
pub fn distance_to_spectrum<T: Real>(values: &[Cx<T>], z: Cx<T>) -> T {
    values
        .iter()
        .map(|v| chordal(*v, z))
        .fold(T::infinity(), |a, b| a.min(b))
}

/// min_{j ≠ k} |z_j − z_k|.
pub fn separation_gap<T: Real>(pairs: &[EigenPair<T>], k: usize) -> Result<T> {
    if pairs.len() < 2 || k >= pairs.len() {
        return Err(CmvError::InvalidInput(
            "separation gap needs at least two pairs and a valid index".into(),
        ));
    }
    let zk = pairs[k].value;
    Ok(pairs
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != k)
        .map(|(_, p)| chordal(p.value, zk))
        .fold(T::infinity(), |a, b| a.min(b)))
}

/// Pairs two phase-sorted spectra of equal size by the cyclic shift that
/// minimizes the largest distance; returns (shift, max distance).
pub fn match_eigenvalues<T: Real>(a: &[Cx<T>], b: &[Cx<T>]) -> Result<(usize, T)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(CmvError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let n = a.len();
    let mut best = (0usize, T::infinity());
    for s in 0..n {
        let d = (0..n)
            .map(|i| chordal(a[i], b[(i + s) % n]))
            .fold(T::zero(), |x, y| x.max(y));
        if d < best.1 {
            best = (s, d);
        }
    }
    Ok(best)
}

#[derive(Clone, Debug)]
pub struct LocalizationProfile<T: Real> {
    /// Site of the largest |u(s)|.
    pub center: i64,
    /// (s, log|u(s)|) over the support window.
    pub log_abs: Vec<(i64, T)>,
    /// Least-squares slope of −log|u(s)| against |s| on the tail sites.
    pub fitted_rate: T,
    /// Tail sites: |s| ≥ 3N₀/4.
    pub tail_threshold: i64,
    pub passes: bool,
    /// Worst value of log|u(s)| + γ|s|/20 over the tail (negative means pass).
    pub worst_margin: T,
}

impl<T: Real> LocalizationProfile<T> {
    /// "s,log_abs_u" lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,log_abs_u\n");
        for (s, l) in &self.log_abs {
            let _ = writeln!(out, "{s},{l}");
        }
        out
    }
}

/// Checks |u(s)| < exp(−γ|s|/20) for every stored site with |s| ≥ 3N₀/4.
pub fn localization_profile<T: Real>(
    pair: &EigenPair<T>,
    n0: usize,
    gamma: T,
) -> Result<LocalizationProfile<T>> {
    let u = &pair.vector;
    let threshold = (3 * n0 as i64 + 3) / 4;
    let floor = T::min_positive_value().ln();
    let log_abs: Vec<(i64, T)> = (u.first..=u.last())
        .map(|s| {
            let a = u.at(s).norm();
            (s, if a > T::zero() { a.ln() } else { floor })
        })
        .collect();
    let tail: Vec<(T, T)> = log_abs
        .iter()
        .filter(|(s, _)| s.abs() >= threshold)
        .map(|(s, l)| (T::from_i64_lossy(s.abs()), *l))
        .collect();
    if tail.is_empty() {
        return Err(CmvError::InvalidInput(format!(
            "no sites with |s| ≥ {threshold} in the eigenvector window"
        )));
    }
    let twenty = T::c(20.0);
    let worst_margin = tail
        .iter()
        .map(|(s, l)| *l + gamma * *s / twenty)
        .fold(T::neg_infinity(), |a, b| a.max(b));
    let k = T::from_usize_lossy(tail.len());
    let mx = tail.iter().map(|p| p.0).sum::<T>() / k;
    let my = tail.iter().map(|p| p.1).sum::<T>() / k;
    let sxx = tail.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<T>();
    let sxy = tail.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<T>();
    let fitted_rate = if sxx > T::zero() {
        -sxy / sxx
    } else {
        T::zero()
    };
    let center = log_abs
        .iter()
        .fold((u.first, T::neg_infinity()), |(bs, bl), (s, l)| {
            if *l > bl {
                (*s, *l)
            } else {
                (bs, bl)
            }
        })
        .0;
    Ok(LocalizationProfile {
        center,
        log_abs,
        fitted_rate,
        tail_threshold: threshold,
        passes: worst_margin < T::zero(),
        worst_margin,
    })
}

#[derive(Clone, Debug)]
pub enum PartB<T: Real> {
    /// More than one eigenvalue inside 𝓓(z, ε̂).
    Refused { count: usize },
    Checked {
        z0: Cx<T>,
        distance: T,
        bound: T,
        holds: bool,
    },
}

#[derive(Clone, Debug)]
pub struct PerturbReport<T: Real> {
    /// ‖(A − z)φ‖.
    pub residual: T,
    /// (z₀, |⟨φ,ψ⟩|) of the best-overlap eigenpair inside 𝓓(z, √2·ε̃).
    pub part_a: Option<(Cx<T>, T)>,
    pub part_a_holds: bool,
    pub part_b: PartB<T>,
}

/// Verifies both parts of the eigenvector perturbation statement for a unitary
/// matrix A and an approximate eigenvector φ at z.
pub fn perturb_eigen_check<T: Real>(
    a: &DenseMatrix<T>,
    phi: &[Cx<T>],
    z: Cx<T>,
    eps_tilde: T,
    eps_hat: T,
) -> Result<PerturbReport<T>> {
    let n = a.dim();
    if phi.len() != n {
        return Err(CmvError::DimensionMismatch {
            expected: n,
            got: phi.len(),
        });
    }
    let nrm = phi.iter().map(|x| x.norm_sqr()).sum::<T>().sqrt();
    if (nrm - T::one()).abs() > T::c(1e-8) {
        return Err(CmvError::InvalidInput(format!(
            "φ must be normalized, got ‖φ‖ = {nrm}"
        )));
    }
    let residual = residual_of(&a.matvec(phi), phi, z);
    if residual >= eps_tilde {
        return Err(CmvError::Hypothesis(format!(
            "‖(A − z)φ‖ = {residual} is not below ε̃ = {eps_tilde}"
        )));
    }
    let pairs = eigensolve_dense(a)?;
    let phi_v = SiteVector::new(0, phi.to_vec());
    let sqrt2 = T::c(2f64.sqrt());
    let part_a = pairs
        .iter()
        .filter(|p| chordal(p.value, z) < sqrt2 * eps_tilde)
        .map(|p| (p.value, phi_v.inner(&p.vector).norm()))
        .fold(None, |best: Option<(Cx<T>, T)>, c| match best {
            Some(b) if b.1 >= c.1 => Some(b),
            _ => Some(c),
        });
    let need = (T::c(2.0) * T::from_usize_lossy(n)).sqrt().recip();
    let part_a_holds = part_a.is_some_and(|(_, o)| o >= need);

    let inside: Vec<&EigenPair<T>> = pairs
        .iter()
        .filter(|p| chordal(p.value, z) < eps_hat)
        .collect();
    let part_b = if inside.len() > 1 {
        PartB::Refused {
            count: inside.len(),
        }
    } else {
        let bound = sqrt2 * eps_tilde / eps_hat;
        match inside.first().filter(|p| chordal(p.value, z) < eps_tilde) {
            Some(p) => {
                let ov = p.vector.inner(&phi_v);
                let align = if ov.norm() > T::zero() {
                    ov / ov.norm()
                } else {
                    creal(T::one())
                };
                let distance = phi_v.distance(&p.vector.scaled(align));
                PartB::Checked {
                    z0: p.value,
                    distance,
                    bound,
                    holds: distance < bound,
                }
            }
            None => PartB::Checked {
                z0: z,
                distance: T::infinity(),
                bound,
                holds: false,
            },
        }
    };
    Ok(PerturbReport {
        residual,
        part_a,
        part_a_holds,
        part_b,
    })
}

/// "k,theta_k,residual" lines.
pub fn eigen_csv<T: Real>(pairs: &[EigenPair<T>]) -> String {
    let mut out = String::from("k,theta_k,residual\n");
    for p in pairs {
        let _ = writeln!(out, "{},{},{}", p.index, p.theta(), p.residual);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmv::{build_finite_cmv, VerblunskySequence};

    fn seq(n: i64, seed: u64) -> VerblunskySequence<f64> {
        let mut s = seed;
        let mut next = || {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        };
        let vals = (0..n + 2).map(|_| cx(next(), next())).collect();
        VerblunskySequence::from_values(-1, vals).unwrap()
    }

    #[test]
    fn eigenpairs_have_small_residual_and_unit_values() {
        let s = seq(40, 3);
        let m = build_finite_cmv(&s, 0, 39, cone(), cone()).unwrap();
        let pairs = eigensolve(&m).unwrap();
        assert_eq!(pairs.len(), 40);
        for p in &pairs {
            assert!(p.residual < 1e-10, "residual {}", p.residual);
            assert!((p.raw_modulus - 1.0).abs() < 1e-10);
            assert!((p.vector.norm() - 1.0).abs() < 1e-12);
        }
        for w in pairs.windows(2) {
            assert!(w[0].theta() <= w[1].theta());
        }
    }

    #[test]
    fn one_by_one() {
        let s = seq(2, 9);
        let m = build_finite_cmv(&s, 0, 0, cone(), cone()).unwrap();
        let pairs = eigensolve(&m).unwrap();
        let e = m.entry(0, 0);
        assert!((pairs[0].value - e / e.norm()).norm() < 1e-14);
    }

    #[test]
    fn inverse_iteration_recovers_vector() {
        let s = seq(30, 5);
        let m = build_finite_cmv(&s, 0, 29, cone(), cone()).unwrap();
        let pairs = eigensolve(&m).unwrap();
        let p = inverse_iteration(&m, pairs[11].value, 2).unwrap();
        assert!(p.residual < 1e-10);
        assert!(p.vector.distance(&pairs[11].vector) < 1e-8);
    }

    #[test]
    fn nearest_tie_goes_to_lower_index() {
        let mk = |z: Cx<f64>, k| EigenPair {
            index: k,
            value: z,
            raw_modulus: 1.0,
            vector: SiteVector::delta(0),
            residual: 0.0,
        };
        let pairs = vec![mk(cx(0.0, 1.0), 0), mk(cx(0.0, -1.0), 1)];
        let (p, d) = nearest_eigen(&pairs, cx(1.0, 0.0)).unwrap();
        assert_eq!(p.index, 0);
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn padding_compares_across_windows() {
        let u = SiteVector::new(-1, vec![cx(0.0, 0.0), cx(1.0, 0.0)]);
        let v = SiteVector::new(0, vec![cx(1.0, 0.0), cx(0.0, 0.0), cx(0.0, 0.0)]);
        assert_eq!(u.distance(&v), 0.0);
        assert_eq!(u.inner(&v), cone());
    }

    #[test]
    fn delta_profile_passes() {
        let p = EigenPair {
            index: 0,
            value: cone(),
            raw_modulus: 1.0,
            vector: SiteVector::delta(0).padded(-10, 10),
            residual: 0.0,
        };
        let prof = localization_profile(&p, 4, 5.0).unwrap();
        assert!(prof.passes);
        assert_eq!(prof.center, 0);
    }

    #[test]
    fn flat_profile_fails() {
        let n = 41;
        let v = vec![cx(1.0 / (n as f64).sqrt(), 0.0); n];
        let p = EigenPair {
            index: 0,
            value: cone(),
            raw_modulus: 1.0,
            vector: SiteVector::new(-20, v),
            residual: 0.0,
        };
        assert!(!localization_profile(&p, 20, 10.0).unwrap().passes);
    }
}
