//! Phases, frequencies, Diophantine certificates and analytic sampling functions.

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CmvError, Result};
use crate::scalar::{cis, czero, Cx, Real};

/// A point of 𝕋^d, optionally displaced into the complex strip by `imag`.
#[derive(Clone, Debug, PartialEq)]
pub struct Phase<T: Real> {
    coords: Vec<T>,
    imag: Option<Vec<T>>,
}

impl<T: Real> Phase<T> {
    pub fn new(raw: &[T]) -> Self {
        reduce_phase(raw)
    }

    pub fn with_imag(raw: &[T], imag: &[T]) -> Result<Self> {
        if raw.len() != imag.len() {
            return Err(CmvError::DimensionMismatch {
                expected: raw.len(),
                got: imag.len(),
            });
        }
        let mut p = reduce_phase(raw);
        if imag.iter().any(|y| *y != T::zero()) {
            p.imag = Some(imag.to_vec());
        }
        Ok(p)
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            coords: vec![T::zero(); dim],
            imag: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn imag(&self) -> Option<&[T]> {
        self.imag.as_deref()
    }

    pub fn is_real(&self) -> bool {
        self.imag.is_none()
    }

    /// sup-norm of the imaginary displacement.
    pub fn imag_sup(&self) -> T {
        self.imag
            .as_ref()
            .map(|y| y.iter().fold(T::zero(), |m, v| m.max(v.abs())))
            .unwrap_or_else(T::zero)
    }

    /// x + nω, reduced mod 1; the imaginary part is carried along.
    pub fn shifted(&self, omega: &Frequency<T>, n: i64) -> Self {
        let nn = T::from_i64_lossy(n);
        let raw: Vec<T> = self
            .coords
            .iter()
            .zip(omega.coords())
            .map(|(x, w)| *x + nn * *w)
            .collect();
        let mut p = reduce_phase(&raw);
        p.imag = self.imag.clone();
        p
    }

    /// x + h for a real displacement h, reduced mod 1.
    pub fn translated(&self, h: &[T]) -> Self {
        let raw: Vec<T> = self.coords.iter().zip(h).map(|(x, d)| *x + *d).collect();
        let mut p = reduce_phase(&raw);
        p.imag = self.imag.clone();
        p
    }

    /// Torus distance in the sup-norm between real parts.
    pub fn distance(&self, other: &Self) -> T {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| dist_to_integer(*a - *b))
            .fold(T::zero(), T::max)
    }
}

/// Reduces every coordinate into [0, 1).
pub fn reduce_phase<T: Real>(raw: &[T]) -> Phase<T> {
    let coords = raw
        .iter()
        .map(|&v| {
            let mut r = v - v.floor();
            if r >= T::one() {
                r = T::zero();
            }
            r
        })
        .collect();
    Phase { coords, imag: None }
}

/// ‖t‖: distance from t to the nearest integer.
pub fn dist_to_integer<T: Real>(t: T) -> T {
    (t - t.round()).abs()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frequency<T: Real> {
    coords: Vec<T>,
}

impl<T: Real> Frequency<T> {
    pub fn new(raw: &[T]) -> Self {
        Self {
            coords: reduce_phase(raw).coords,
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn certify(&self, p: T, q: T, k_max: u64) -> Result<DiophantineCertificate> {
        check_diophantine(&self.coords, p, q, k_max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiophantineCertificate {
    pub ok: bool,
    pub worst_k: Vec<i64>,
    pub worst_ratio: f64,
    pub p: f64,
    pub q: f64,
    pub k_max: u64,
}

/// Exhaustive check of ‖k·ω‖·|k|^q ≥ p over 0 < |k|₁ ≤ K_max.
///
/// Only one of ±k is visited (first nonzero coordinate positive). Shells are
/// scanned in order of increasing |k|₁ and lexicographically inside a shell;
/// the first strict minimum is reported as `worst_k`.
pub fn check_diophantine<T: Real>(
    omega: &[T],
    p: T,
    q: T,
    k_max: u64,
) -> Result<DiophantineCertificate> {
    let d = omega.len();
    if d == 0 {
        return Err(CmvError::InvalidInput("frequency has dimension 0".into()));
    }
    if p.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) {
        return Err(CmvError::InvalidInput(format!(
            "p must be positive, got {p}"
        )));
    }
    if q <= T::from_usize_lossy(d) {
        return Err(CmvError::InvalidInput(format!(
            "q must exceed d = {d}, got {q}"
        )));
    }
    if k_max < 1 {
        return Err(CmvError::InvalidInput("K_max must be at least 1".into()));
    }
    let w: Vec<f64> = omega.iter().map(|v| v.to_f64_lossy()).collect();
    let qf = q.to_f64_lossy();

    let best = (1..=k_max)
        .into_par_iter()
        .map(|norm| {
            let mut best: Option<(f64, Vec<i64>)> = None;
            let mut k = vec![0i64; d];
            let exponent = (norm as f64).powf(qf);
            shell(&mut k, 0, norm as i64, true, &mut |k| {
                let dot: f64 = k.iter().zip(&w).map(|(a, b)| *a as f64 * b).sum();
                let ratio = (dot - dot.round()).abs() * exponent;
                if best.as_ref().is_none_or(|(r, _)| ratio < *r) {
                    best = Some((ratio, k.to_vec()));
                }
            });
            (norm, best)
        })
        .filter_map(|(n, b)| b.map(|(r, k)| (r, n, k)))
        .reduce_with(|a, b| {
            if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
                b
            } else {
                a
            }
        })
        .expect("at least one lattice vector");

    let (ratio, _, worst_k) = best;
    let pf = p.to_f64_lossy();
    Ok(DiophantineCertificate {
        ok: ratio >= pf,
        worst_k,
        worst_ratio: ratio,
        p: pf,
        q: qf,
        k_max,
    })
}

// Visits all k with Σ|k_i| = remaining over coordinates i.., first nonzero positive
// while `leading` is set, in lexicographic order.
fn shell(k: &mut [i64], i: usize, remaining: i64, leading: bool, visit: &mut dyn FnMut(&[i64])) {
    let d = k.len();
    if i == d - 1 {
        if remaining == 0 {
            if !leading {
                k[i] = 0;
                visit(k);
            }
            return;
        }
        if !leading {
            k[i] = -remaining;
            visit(k);
        }
        k[i] = remaining;
        visit(k);
        return;
    }
    let lo = if leading { 0 } else { -remaining };
    for v in lo..=remaining {
        k[i] = v;
        let rest = remaining - v.abs();
        shell(k, i + 1, rest, leading && v == 0, visit);
    }
    k[i] = 0;
}

/// Lattice ℓ¹ norm |k| = Σ|k_i|.
pub fn lattice_norm(k: &[i64]) -> i64 {
    k.iter().map(|v| v.abs()).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FourierTerm<T: Real> {
    pub k: Vec<i64>,
    pub c: Cx<T>,
}

/// α(x) = Σ c_k e^{2πi k·x}, analytic on the strip |Im x| < h.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingFunction<T: Real> {
    dim: usize,
    terms: Vec<FourierTerm<T>>,
    h: T,
    sup_bound: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoeffSpec {
    pub k: Vec<i64>,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingFunctionSpec {
    pub dim: usize,
    pub h: f64,
    pub coeffs: Vec<CoeffSpec>,
}

impl<T: Real> SamplingFunction<T> {
    /// Builds the function and certifies sup|α| < 1 on |Im x| ≤ h/2.
    pub fn new(dim: usize, terms: Vec<FourierTerm<T>>, h: T) -> Result<Self> {
        if dim == 0 {
            return Err(CmvError::InvalidInput("dimension must be positive".into()));
        }
        if h.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) {
            return Err(CmvError::InvalidInput(format!(
                "strip width must be positive, got {h}"
            )));
        }
        for t in &terms {
            if t.k.len() != dim {
                return Err(CmvError::DimensionMismatch {
                    expected: dim,
                    got: t.k.len(),
                });
            }
        }
        let mut terms: Vec<FourierTerm<T>> = terms.into_iter().filter(|t| t.c != czero()).collect();
        terms.sort_by(|a, b| (lattice_norm(&a.k), &a.k).cmp(&(lattice_norm(&b.k), &b.k)));
        for w in terms.windows(2) {
            if w[0].k == w[1].k {
                return Err(CmvError::InvalidInput(format!(
                    "duplicate Fourier index {:?}",
                    w[0].k
                )));
            }
        }
        let mut f = Self {
            dim,
            terms,
            h,
            sup_bound: T::zero(),
        };
        let bound = f.certify_sup();
        if bound >= T::one() || !bound.is_finite() {
            return Err(CmvError::SupBound {
                bound: bound.to_f64_lossy(),
            });
        }
        f.sup_bound = bound;
        Ok(f)
    }

    /// α ≡ a for all x.
    pub fn constant(dim: usize, a: Cx<T>) -> Result<Self> {
        Self::new(
            dim,
            vec![FourierTerm {
                k: vec![0; dim],
                c: a,
            }],
            T::one(),
        )
    }

    /// α(x) = a·e^{2πi x_j}.
    pub fn single_mode(dim: usize, axis: usize, a: Cx<T>, h: T) -> Result<Self> {
        if axis >= dim {
            return Err(CmvError::InvalidInput(format!(
                "axis {axis} out of range for d = {dim}"
            )));
        }
        let mut k = vec![0; dim];
        k[axis] = 1;
        Self::new(dim, vec![FourierTerm { k, c: a }], h)
    }

    /// α(x) = (λ/2)(e^{2πi x₁} + e^{2πi x₂}).
    pub fn two_mode(lambda: T, h: T) -> Result<Self> {
        let half = Complex::new(lambda / T::c(2.0), T::zero());
        Self::new(
            2,
            vec![
                FourierTerm {
                    k: vec![1, 0],
                    c: half,
                },
                FourierTerm {
                    k: vec![0, 1],
                    c: half,
                },
            ],
            h,
        )
    }

    pub fn from_spec(spec: &SamplingFunctionSpec) -> Result<Self> {
        let terms = spec
            .coeffs
            .iter()
            .map(|c| FourierTerm {
                k: c.k.clone(),
                c: Complex::new(T::c(c.re), T::c(c.im)),
            })
            .collect();
        Self::new(spec.dim, terms, T::c(spec.h))
    }

    pub fn to_spec(&self) -> SamplingFunctionSpec {
        SamplingFunctionSpec {
            dim: self.dim,
            h: self.h.to_f64_lossy(),
            coeffs: self
                .terms
                .iter()
                .map(|t| CoeffSpec {
                    k: t.k.clone(),
                    re: t.c.re.to_f64_lossy(),
                    im: t.c.im.to_f64_lossy(),
                })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[FourierTerm<T>] {
        &self.terms
    }

    pub fn strip_width(&self) -> T {
        self.h
    }

    pub fn sup_bound(&self) -> T {
        self.sup_bound
    }

    pub fn degree(&self) -> i64 {
        self.terms
            .iter()
            .map(|t| lattice_norm(&t.k))
            .max()
            .unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|t| t.k.iter().all(|v| *v == 0))
    }

    fn check_phase(&self, x: &Phase<T>) -> Result<()> {
        if x.dim() != self.dim {
            return Err(CmvError::DimensionMismatch {
                expected: self.dim,
                got: x.dim(),
            });
        }
        let y = x.imag_sup();
        if y >= self.h {
            return Err(CmvError::StripViolation {
                y: y.to_f64_lossy(),
                h: self.h.to_f64_lossy(),
            });
        }
        Ok(())
    }

    /// α(x + iy) = Σ c_k e^{2πi k·x} e^{−2π k·y}.
    pub fn eval_alpha(&self, x: &Phase<T>) -> Result<Cx<T>> {
        self.check_phase(x)?;
        Ok(self.eval_unchecked(x, false))
    }

    /// Analytic continuation of conj(α(x)): Σ conj(c_k) e^{−2πi k·(x+iy)}.
    pub fn eval_alpha_reflected(&self, x: &Phase<T>) -> Result<Cx<T>> {
        self.check_phase(x)?;
        Ok(self.eval_unchecked(x, true))
    }

    pub fn eval_rho(&self, x: &Phase<T>) -> Result<T> {
        if !x.is_real() {
            return Err(CmvError::InvalidInput(
                "ρ is only defined for real phases".into(),
            ));
        }
        let a = self.eval_alpha(x)?;
        Ok(rho_of(a))
    }

    pub(crate) fn eval_unchecked(&self, x: &Phase<T>, reflected: bool) -> Cx<T> {
        let two_pi = T::PI() + T::PI();
        let mut acc = czero();
        for t in &self.terms {
            let mut kx = T::zero();
            for (k, xi) in t.k.iter().zip(x.coords()) {
                kx += T::from_i64_lossy(*k) * *xi;
            }
            // keep the phase argument small before scaling by 2π
            kx = kx - kx.round();
            let decay = match x.imag() {
                Some(y) => {
                    let ky: T =
                        t.k.iter()
                            .zip(y)
                            .map(|(k, v)| T::from_i64_lossy(*k) * *v)
                            .sum();
                    (-two_pi * ky).exp()
                }
                None => T::one(),
            };
            if reflected {
                acc += t.c.conj() * cis(-two_pi * kx) / decay;
            } else {
                acc += t.c * cis(two_pi * kx) * decay;
            }
        }
        acc
    }

    /// Certified bound for sup|α| on |Im x| ≤ h/2: the smaller of the coefficient
    /// bound Σ|c_k|e^{πh|k|} and a grid maximum plus a Lipschitz slack.
    ///
    /// The grid has 64 points per real dimension when d ≤ 2 (16 when d = 3) and
    /// five imaginary levels {−h/2, −h/4, 0, h/4, h/2} per dimension. For d > 3
    /// only the coefficient bound is used.
    fn certify_sup(&self) -> T {
        let pi = T::PI();
        let coeff_bound: T = self
            .terms
            .iter()
            .map(|t| t.c.norm() * (pi * self.h * T::from_i64_lossy(lattice_norm(&t.k))).exp())
            .sum();
        if self.is_constant() || coeff_bound < T::one() {
            return coeff_bound;
        }
        let per_dim = match self.dim {
            1 | 2 => 64usize,
            3 => 16,
            _ => return coeff_bound,
        };
        let levels = 5usize;
        let dx = T::one() / T::from_usize_lossy(per_dim);
        let dy = self.h / T::from_usize_lossy(levels - 1);
        let mut lip = T::zero();
        for i in 0..self.dim {
            let li: T = self
                .terms
                .iter()
                .map(|t| {
                    t.c.norm()
                        * (pi + pi)
                        * T::from_i64_lossy(t.k[i].abs())
                        * (pi * self.h * T::from_i64_lossy(lattice_norm(&t.k))).exp()
                })
                .sum();
            lip += li * (dx + dy) / T::c(2.0);
        }
        let total = per_dim.pow(self.dim as u32) * levels.pow(self.dim as u32);
        let mut grid_max = T::zero();
        let mut xs = vec![T::zero(); self.dim];
        let mut ys = vec![T::zero(); self.dim];
        for idx in 0..total {
            let mut r = idx;
            for i in 0..self.dim {
                xs[i] = T::from_usize_lossy(r % per_dim) * dx;
                r /= per_dim;
            }
            for y in ys.iter_mut() {
                *y = -self.h / T::c(2.0) + T::from_usize_lossy(r % levels) * dy;
                r /= levels;
            }
            let p = Phase {
                coords: xs.clone(),
                imag: Some(ys.clone()),
            };
            grid_max = grid_max.max(self.eval_unchecked(&p, false).norm());
        }
        coeff_bound.min(grid_max + lip)
    }
}

/// √(1 − |α|²), clamped at 0.
pub fn rho_of<T: Real>(a: Cx<T>) -> T {
    (T::one() - a.norm_sqr()).max(T::zero()).sqrt()
}

#[derive(Clone, Debug)]
pub struct Truncation<T: Real> {
    pub function: SamplingFunction<T>,
    pub error_bound: T,
    pub max_degree: i64,
}

/// Keeps the Fourier modes with |k| < n⁴. The bound Σ_{dropped}|c_k| dominates
/// the sup-norm error on the real torus; it must not exceed exp(−n²).
pub fn truncate_fourier<T: Real>(f: &SamplingFunction<T>, n: u32) -> Result<Truncation<T>> {
    if n < 2 {
        return Err(CmvError::InvalidInput(format!(
            "truncation order must be at least 2, got {n}"
        )));
    }
    let limit = (n as i64).checked_pow(4).unwrap_or(i64::MAX);
    let (kept, dropped): (Vec<_>, Vec<_>) = f
        .terms
        .iter()
        .cloned()
        .partition(|t| lattice_norm(&t.k) < limit);
    let bound: T = dropped.iter().map(|t| t.c.norm()).sum();
    let target = (-T::from_u32(n * n).expect("small integer")).exp();
    if bound > target {
        return Err(CmvError::TruncationTooCoarse {
            bound: bound.to_f64_lossy(),
            target: target.to_f64_lossy(),
        });
    }
    let function = SamplingFunction::new(f.dim, kept, f.h)?;
    Ok(Truncation {
        function,
        error_bound: bound,
        max_degree: limit - 1,
    })
}

/// x0, x0 + ω, …, x0 + (n−1)ω.
pub fn orbit<T: Real>(x0: &Phase<T>, omega: &Frequency<T>, n: usize) -> Vec<Phase<T>> {
    (0..n as i64).map(|j| x0.shifted(omega, j)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cx;

    #[test]
    fn reduce_phase_examples() {
        assert_eq!(reduce_phase(&[1.25f64, -0.5]).coords(), &[0.25, 0.5]);
        assert_eq!(reduce_phase(&[0.0f64, 0.0]).coords(), &[0.0, 0.0]);
        assert_eq!(reduce_phase(&[2.0f64, 3.0]).coords(), &[0.0, 0.0]);
        // a tiny negative value must not round up to 1.0
        let r = reduce_phase(&[-1e-20f64]);
        assert!(r.coords()[0] < 1.0);
    }

    #[test]
    fn rational_frequency_worst_vector() {
        let c = check_diophantine(&[0.5f64, 1.0 / 3.0], 1e-3, 3.0, 4).unwrap();
        assert!(!c.ok);
        assert_eq!(c.worst_k, vec![2, 0]);
        assert!(c.worst_ratio < 1e-12);
    }

    #[test]
    fn q_not_above_dimension_rejected() {
        assert!(check_diophantine(&[0.3f64, 0.7], 0.1, 2.0, 10).is_err());
    }

    #[test]
    fn shell_enumeration_counts() {
        // half of the 4n points with |k|₁ = n in d = 2
        for n in 1..6i64 {
            let mut count = 0;
            let mut k = vec![0; 2];
            shell(&mut k, 0, n, true, &mut |_| count += 1);
            assert_eq!(count, 2 * n);
        }
        let mut count = 0;
        let mut k = vec![0; 3];
        shell(&mut k, 0, 2, true, &mut |_| count += 1);
        // |k|₁ = 2 in d = 3 has 18 points
        assert_eq!(count, 9);
    }

    #[test]
    fn single_mode_values() {
        let f = SamplingFunction::single_mode(2, 0, cx(0.5f64, 0.0), 0.1).unwrap();
        let a = f.eval_alpha(&Phase::new(&[0.0, 0.0])).unwrap();
        assert!((a - cx(0.5, 0.0)).norm() < 1e-15);
        let b = f.eval_alpha(&Phase::new(&[0.25, 0.7])).unwrap();
        assert!((b - cx(0.0, 0.5)).norm() < 1e-15);
        let z = SamplingFunction::<f64>::new(2, vec![], 0.5).unwrap();
        assert_eq!(
            z.eval_alpha(&Phase::new(&[0.3, 0.1])).unwrap(),
            cx(0.0, 0.0)
        );
    }

    #[test]
    fn rho_examples() {
        assert_eq!(rho_of(cx(0.0f64, 0.0)), 1.0);
        assert!((rho_of(cx(0.5f64, 0.0)) - 0.75f64.sqrt()).abs() < 1e-15);
        assert!((rho_of(cx(0.0f64, 0.8)) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn strip_violation_detected() {
        let f = SamplingFunction::single_mode(1, 0, cx(0.5f64, 0.0), 0.1).unwrap();
        let p = Phase::with_imag(&[0.2], &[0.2]).unwrap();
        assert!(matches!(
            f.eval_alpha(&p),
            Err(CmvError::StripViolation { .. })
        ));
        let ok = Phase::with_imag(&[0.2], &[0.04]).unwrap();
        let v = f.eval_alpha(&ok).unwrap();
        let expected = 0.5 * (-2.0 * std::f64::consts::PI * 0.04).exp();
        assert!((v.norm() - expected).abs() < 1e-14);
    }

    #[test]
    fn reflected_value_is_conjugate_on_reals() {
        let f = SamplingFunction::two_mode(0.9f64, 0.02).unwrap();
        let x = Phase::new(&[0.13, 0.77]);
        let a = f.eval_alpha(&x).unwrap();
        let r = f.eval_alpha_reflected(&x).unwrap();
        assert!((a.conj() - r).norm() < 1e-15);
    }

    #[test]
    fn sup_bound_rejects_large_coefficients() {
        let terms = vec![
            FourierTerm {
                k: vec![1],
                c: cx(0.7f64, 0.0),
            },
            FourierTerm {
                k: vec![2],
                c: cx(0.4, 0.0),
            },
        ];
        assert!(matches!(
            SamplingFunction::new(1, terms, 0.01),
            Err(CmvError::SupBound { .. })
        ));
    }

    #[test]
    fn orbit_examples() {
        let o = orbit(
            &Phase::new(&[0.0f64, 0.0]),
            &Frequency::new(&[0.5, 0.25]),
            3,
        );
        assert_eq!(o[0].coords(), &[0.0, 0.0]);
        assert_eq!(o[1].coords(), &[0.5, 0.25]);
        assert_eq!(o[2].coords(), &[0.0, 0.5]);
        let o1 = orbit(&Phase::new(&[0.3f64]), &Frequency::new(&[0.0]), 4);
        assert!(o1.iter().all(|p| p.coords() == [0.3]));
        assert_eq!(
            orbit(&Phase::new(&[0.3f64]), &Frequency::new(&[0.1]), 1).len(),
            1
        );
    }

    #[test]
    fn truncation_of_polynomial_is_identity() {
        let f = SamplingFunction::single_mode(1, 0, cx(0.3f64, 0.1), 0.1).unwrap();
        let t = truncate_fourier(&f, 3).unwrap();
        assert_eq!(t.error_bound, 0.0);
        assert_eq!(t.function, f);
    }

    #[test]
    fn truncation_reports_slow_decay() {
        let terms = (0..31)
            .map(|k| FourierTerm {
                k: vec![k],
                c: cx(0.02f64, 0.0),
            })
            .collect();
        let f = SamplingFunction::new(1, terms, 0.001).unwrap();
        assert!(matches!(
            truncate_fourier(&f, 2),
            Err(CmvError::TruncationTooCoarse { .. })
        ));
    }
}
