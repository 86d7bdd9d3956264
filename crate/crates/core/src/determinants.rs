//! Characteristic determinants, the determinant/transfer-matrix identity,
//! finite-volume Green's functions, Poisson's formula and the covering
//! predicate.

use std::fmt::Write as _;

use crate::cmv::{build_truncation, Cut, FiniteCmv, VerblunskySequence};
use crate::cocycle::{transfer_product, SpectralPoint};
use crate::error::{CmvError, Result};
use crate::linalg::BandLu;
use crate::scalar::{cone, czero, Cx, Mat2, Real};
use crate::spectral::SiteVector;
use crate::torus::{rho_of, Frequency, Phase, SamplingFunction};

/// Pivot modulus below which z counts as an eigenvalue of the truncation.
pub const SINGULAR_PIVOT: f64 = 1e-12;

/// det(z − 𝓔) on [a, b], kept as log-modulus and phase.
#[derive(Clone, Debug, PartialEq)]
pub struct CharDet<T: Real> {
    pub a: i64,
    pub b: i64,
    /// α̃_{a−1} and α̃_b actually used at the cuts.
    pub left: Cx<T>,
    pub right: Cx<T>,
    pub z: Cx<T>,
    /// log|det|; −∞ when `singular`.
    pub log_abs: T,
    /// det / |det| (1 when singular).
    pub phase: Cx<T>,
    pub singular: bool,
}

impl<T: Real> CharDet<T> {
    pub fn value(&self) -> Cx<T> {
        if self.singular {
            czero()
        } else {
            self.phase * self.log_abs.exp()
        }
    }
}

/// det(z − 𝓔) of an assembled truncation by banded LU (two sub- and two
/// super-diagonals).
pub fn char_det<T: Real>(m: &FiniteCmv<T>, z: Cx<T>) -> CharDet<T> {
    let (a, b) = m.interval();
    let (left, right) = m.boundary();
    let lu = BandLu::factor(m.dim(), 2, 2, |i, j| {
        let e = m.entry(a + i as i64, a + j as i64);
        if i == j {
            z - e
        } else {
            -e
        }
    });
    let singular = lu.min_pivot() <= T::c(SINGULAR_PIVOT);
    CharDet {
        a,
        b,
        left,
        right,
        z,
        log_abs: if singular {
            T::neg_infinity()
        } else {
            lu.log_abs_det()
        },
        phase: if singular { cone() } else { lu.det_phase() },
        singular,
    }
}

/// φ^{β,η}_{[a,b]}(z) for a sequence and cut treatment.
pub fn char_det_on<T: Real>(
    seq: &VerblunskySequence<T>,
    a: i64,
    b: i64,
    left: Cut<T>,
    right: Cut<T>,
    z: Cx<T>,
) -> Result<CharDet<T>> {
    Ok(char_det(&build_truncation(seq, a, b, left, right)?, z))
}

/// A complex number stored as (log|w|, w/|w|).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogValue<T: Real> {
    pub log_abs: T,
    pub phase: Cx<T>,
}

impl<T: Real> LogValue<T> {
    pub fn one() -> Self {
        Self {
            log_abs: T::zero(),
            phase: cone(),
        }
    }

    pub fn value(&self) -> Cx<T> {
        if self.log_abs == T::neg_infinity() {
            czero()
        } else {
            self.phase * self.log_abs.exp()
        }
    }
}

/// Σ_{j=a}^{b} log ρ_j over the sequence's own coefficients (cuts ignored).
pub fn log_rho_sum<T: Real>(seq: &VerblunskySequence<T>, a: i64, b: i64) -> Result<T> {
    let mut s = T::zero();
    for j in a..=b {
        s += rho_of(seq.at(j)?).ln();
    }
    Ok(s)
}

/// The normalized determinant (ρ_a⋯ρ_b)^{−1} det(z − 𝓔) with the given cuts;
/// exactly 1 for a > b.
pub fn normalized_phi<T: Real>(
    seq: &VerblunskySequence<T>,
    a: i64,
    b: i64,
    left: Cut<T>,
    right: Cut<T>,
    z: Cx<T>,
) -> Result<LogValue<T>> {
    if a > b {
        return Ok(LogValue::one());
    }
    let d = char_det_on(seq, a, b, left, right, z)?;
    let lr = log_rho_sum(seq, a, b)?;
    if lr == T::neg_infinity() {
        return Err(CmvError::Singular(format!(
            "a unit-modulus coefficient inside [{a}, {b}] makes ρ vanish"
        )));
    }
    Ok(LogValue {
        log_abs: d.log_abs - lr,
        phase: d.phase,
    })
}

/// Relative max-entry error between M_n(x) from the cocycle and its expression
/// through the determinants φ_{[1,n−1]} and φ_{[0,n−1]} with unchanged cuts:
///
/// M_n = (√z)^{−n} (ρ_0⋯ρ_{n−1})^{−1} [[zφ₁, q], [z q*, φ₁*]],
/// q = (zφ₁ − φ₀)/α_{−1}, with p*(z) = z^{n−1} conj(p(z)) on the circle.
pub fn relation_residual<T: Real>(
    f: &SamplingFunction<T>,
    omega: &Frequency<T>,
    z: &SpectralPoint<T>,
    x: &Phase<T>,
    n: usize,
) -> Result<T> {
    if n < 2 {
        return Err(CmvError::InvalidInput(
            "the determinant relation needs n ≥ 2".into(),
        ));
    }
    let ni = n as i64;
    let seq = VerblunskySequence::sample(f, omega, x, -1, ni - 1)?;
    let am1 = seq.at(-1)?;
    if am1.norm() < T::c(1e-12) {
        return Err(CmvError::InvalidInput(
            "formula singular; choose different base phase (α_{−1} ≈ 0)".into(),
        ));
    }
    let lhs = transfer_product(f, omega, z, x, n)?;
    let (mat, scale) = (lhs.matrix(), lhs.log_norm());
    let zz = z.z();
    let d1 = char_det_on(&seq, 1, ni - 1, Cut::Keep, Cut::Keep, zz)?;
    let d0 = char_det_on(&seq, 0, ni - 1, Cut::Keep, Cut::Keep, zz)?;
    // everything is divided by e^{scale} before exponentiating
    let pre = -log_rho_sum(&seq, 0, ni - 1)? - scale;
    let lift = |d: &CharDet<T>| d.phase * (d.log_abs + pre).exp();
    let p1 = lift(&d1);
    let p0 = lift(&d0);
    let q = (zz * p1 - p0) / am1;
    let zdeg = zz.powi((n - 1) as i32);
    let sz = z.sqrt_z().powi(-(n as i32));
    let rhs = Mat2::new(zz * p1, q, zz * zdeg * q.conj(), zdeg * p1.conj()).scale_cx(sz);
    Ok(rhs.max_diff(&mat) / mat.max_abs())
}

/// Finite-volume Green's function G^{β,η}_{[a,b]}(j, k; z) for j ≤ k.
#[derive(Clone, Debug, PartialEq)]
pub struct GreenValue<T: Real> {
    pub a: i64,
    pub b: i64,
    pub j: i64,
    pub k: i64,
    pub z: Cx<T>,
    /// |G(j,k)| from the determinant-ratio formula.
    pub magnitude: T,
    /// G(j,k) from a direct solve of (z𝓛* − 𝓜)u = e_k.
    pub value: Cx<T>,
}

impl<T: Real> GreenValue<T> {
    /// |magnitude − |value|| / |value|.
    pub fn relative_mismatch(&self) -> T {
        (self.magnitude - self.value.norm()).abs() / self.value.norm()
    }
}

/// Banded factorization of z𝓛* − 𝓜 on a truncation; columns of its inverse are
/// the Green's function.
pub struct GreenSolver<T: Real> {
    a: i64,
    b: i64,
    lu: BandLu<T>,
}

impl<T: Real> GreenSolver<T> {
    pub fn new(m: &FiniteCmv<T>, z: Cx<T>) -> Result<Self> {
        let (a, b) = m.interval();
        let lu = BandLu::factor(m.dim(), 1, 1, |i, j| {
            m.green_operator_entry(z, a + i as i64, a + j as i64)
        });
        if lu.min_pivot() <= T::c(SINGULAR_PIVOT) {
            return Err(CmvError::Singular(format!(
                "z is (numerically) an eigenvalue of the truncation on [{a}, {b}]"
            )));
        }
        Ok(Self { a, b, lu })
    }

    /// G(·, k) as a vector over [a, b].
    pub fn column(&self, k: i64) -> Result<Vec<Cx<T>>> {
        if k < self.a || k > self.b {
            return Err(CmvError::InvalidInput(format!(
                "site {k} outside [{}, {}]",
                self.a, self.b
            )));
        }
        let mut e = vec![czero(); (self.b - self.a + 1) as usize];
        e[(k - self.a) as usize] = cone();
        self.lu.solve(&e)
    }

    pub fn entry(&self, j: i64, k: i64) -> Result<Cx<T>> {
        if j < self.a || j > self.b {
            return Err(CmvError::InvalidInput(format!(
                "site {j} outside [{}, {}]",
                self.a, self.b
            )));
        }
        Ok(self.column(k)?[(j - self.a) as usize])
    }
}

/// log|G^{β,η}_{[a,b]}(j,k;z)| from the determinant-ratio formula, j ≤ k.
pub fn green_log_magnitude<T: Real>(
    seq: &VerblunskySequence<T>,
    a: i64,
    b: i64,
    beta: Cx<T>,
    eta: Cx<T>,
    j: i64,
    k: i64,
    z: Cx<T>,
) -> Result<T> {
    let whole = normalized_phi(seq, a, b, Cut::Set(beta), Cut::Set(eta), z)?;
    if whole.log_abs == T::neg_infinity() {
        return Err(CmvError::Singular(format!(
            "z is an eigenvalue of the truncation on [{a}, {b}]"
        )));
    }
    let left = normalized_phi(seq, a, j - 1, Cut::Set(beta), Cut::Keep, z)?;
    let right = normalized_phi(seq, k + 1, b, Cut::Keep, Cut::Set(eta), z)?;
    Ok(left.log_abs + right.log_abs - whole.log_abs - seq.rho(k)?.ln())
}

pub fn green_value<T: Real>(
    seq: &VerblunskySequence<T>,
    a: i64,
    b: i64,
    beta: Cx<T>,
    eta: Cx<T>,
    j: i64,
    k: i64,
    z: Cx<T>,
) -> Result<GreenValue<T>> {
    if !(a <= j && j <= k && k <= b) {
        return Err(CmvError::InvalidInput(format!(
            "need a ≤ j ≤ k ≤ b, got [{a}, {b}], j = {j}, k = {k}"
        )));
    }
    let m = build_truncation(seq, a, b, Cut::Set(beta), Cut::Set(eta))?;
    let value = GreenSolver::new(&m, z)?.entry(j, k)?;
    let magnitude = green_log_magnitude(seq, a, b, beta, eta, j, k, z)?.exp();
    Ok(GreenValue {
        a,
        b,
        j,
        k,
        z,
        magnitude,
        value,
    })
}

/// "j,k,log_abs_G" over all j ≤ k by direct solves.
pub fn green_decay_csv<T: Real>(m: &FiniteCmv<T>, z: Cx<T>) -> Result<String> {
    let (a, b) = m.interval();
    let solver = GreenSolver::new(m, z)?;
    let mut out = String::from("j,k,log_abs_G\n");
    for k in a..=b {
        let col = solver.column(k)?;
        for j in a..=k {
            let _ = writeln!(out, "{},{},{}", j, k, col[(j - a) as usize].norm().ln());
        }
    }
    Ok(out)
}

/// Coefficients (c₀, c₁) with r_a = c₀u(a) + c₁u(a+1) at the left end of a
/// window whose left cut is β.
fn left_coeffs<T: Real>(
    seq: &VerblunskySequence<T>,
    a: i64,
    beta: Cx<T>,
    z: Cx<T>,
) -> Result<(Cx<T>, Cx<T>)> {
    let al = seq.at(a)?;
    let r = Cx::new(rho_of(al), T::zero());
    Ok(if a.rem_euclid(2) == 0 {
        (z * al + beta, z * r)
    } else {
        (-(z * beta.conj() + al.conj()), -r)
    })
}

/// Coefficients (c₀, c₁) with r_b = c₀u(b) + c₁u(b−1) at the right end of a
/// window whose right cut is η.
fn right_coeffs<T: Real>(
    seq: &VerblunskySequence<T>,
    b: i64,
    eta: Cx<T>,
    z: Cx<T>,
) -> Result<(Cx<T>, Cx<T>)> {
    let al = seq.at(b - 1)?;
    let r = Cx::new(rho_of(al), T::zero());
    Ok(if b.rem_euclid(2) == 0 {
        (z * eta + al, -r)
    } else {
        (-(z * al.conj() + eta.conj()), z * r)
    })
}

/// |G(a,m) r_a + G(m,b) r_b − u(m)| for a solution u of 𝓔̃u = zu around [a, b].
pub fn poisson_residual<T: Real>(
    seq: &VerblunskySequence<T>,
    a: i64,
    b: i64,
    beta: Cx<T>,
    eta: Cx<T>,
    z: Cx<T>,
    u: &SiteVector<T>,
    m: i64,
) -> Result<T> {
    if !(a < m && m < b) {
        return Err(CmvError::InvalidInput(format!(
            "need a < m < b, got [{a}, {b}], m = {m}"
        )));
    }
    let trunc = build_truncation(seq, a, b, Cut::Set(beta), Cut::Set(eta))?;
    let g = GreenSolver::new(&trunc, z)?;
    let (l0, l1) = left_coeffs(seq, a, beta, z)?;
    let (r0, r1) = right_coeffs(seq, b, eta, z)?;
    let ra = l0 * u.at(a) + l1 * u.at(a + 1);
    let rb = r0 * u.at(b) + r1 * u.at(b - 1);
    let rhs = g.entry(a, m)? * ra + g.entry(m, b)? * rb;
    Ok((rhs - u.at(m)).norm())
}

/// The sum |G_I(a_m, m)|·w_left + |G_I(m, b_m)|·w_right on the window
/// I = [a_m, b_m]; +∞ when z is an eigenvalue of the window.
pub fn covering_sum<T: Real>(
    seq: &VerblunskySequence<T>,
    z: Cx<T>,
    m: i64,
    window: (i64, i64),
    beta: Cx<T>,
    eta: Cx<T>,
) -> Result<T> {
    let (am, bm) = window;
    if !(am <= m && m <= bm) {
        return Err(CmvError::InvalidInput(format!(
            "site {m} is not inside [{am}, {bm}]"
        )));
    }
    let trunc = build_truncation(seq, am, bm, Cut::Set(beta), Cut::Set(eta))?;
    let g = match GreenSolver::new(&trunc, z) {
        Ok(g) => g,
        Err(CmvError::Singular(_)) => return Ok(T::infinity()),
        Err(e) => return Err(e),
    };
    let (l0, l1) = left_coeffs(seq, am, beta, z)?;
    let (r0, r1) = right_coeffs(seq, bm, eta, z)?;
    let wl = l0.norm() + l1.norm();
    let wr = r0.norm() + r1.norm();
    Ok(g.entry(am, m)?.norm() * wl + g.entry(m, bm)?.norm() * wr)
}

/// True iff the covering sum for site m on I_m is below 1.
pub fn covering_predicate<T: Real>(
    seq: &VerblunskySequence<T>,
    z: Cx<T>,
    m: i64,
    window: (i64, i64),
    beta: Cx<T>,
    eta: Cx<T>,
) -> Result<bool> {
    Ok(covering_sum(seq, z, m, window, beta, eta)? < T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmv::build_finite_cmv;
    use crate::scalar::{cis, cx};

    fn rand_seq(lo: i64, hi: i64, seed: u64, amp: f64) -> VerblunskySequence<f64> {
        let mut s = seed;
        let mut next = || {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        };
        VerblunskySequence::from_values(
            lo,
            (lo..=hi).map(|_| cx(amp * next(), amp * next())).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_site_is_scalar() {
        let s = rand_seq(-1, 2, 1, 0.8);
        let (beta, eta) = (cis(0.3), cis(1.1));
        let m = build_finite_cmv(&s, 0, 0, beta, eta).unwrap();
        let z = cis(2.0);
        let d = char_det(&m, z);
        assert!((d.value() - (z - m.entry(0, 0))).norm() < 1e-14);
    }

    #[test]
    fn matches_dense_determinant() {
        let s = rand_seq(-1, 30, 4, 0.9);
        let m = build_finite_cmv(&s, 0, 25, cis(0.2), cis(-0.7)).unwrap();
        let z = cis(1.3);
        let dense = crate::linalg::DenseMatrix::from_fn(m.dim(), |i, j| {
            let e = m.entry(i as i64, j as i64);
            if i == j {
                z - e
            } else {
                -e
            }
        })
        .determinant();
        let d = char_det(&m, z).value();
        assert!((d - dense).norm() / dense.norm() < 1e-10);
    }

    #[test]
    fn empty_interval_is_one() {
        let s = rand_seq(-1, 4, 2, 0.5);
        let v = normalized_phi(&s, 3, 2, Cut::Keep, Cut::Keep, cis(0.4)).unwrap();
        assert_eq!(v, LogValue::one());
    }

    #[test]
    fn green_formula_matches_solve() {
        let s = rand_seq(-2, 12, 7, 0.7);
        let (beta, eta) = (cis(0.4), cis(1.3));
        let z = cis(2.1);
        for j in 0..=7 {
            for k in j..=7 {
                let g = green_value(&s, 0, 7, beta, eta, j, k, z).unwrap();
                assert!(
                    g.relative_mismatch() < 1e-10,
                    "({j},{k}) {}",
                    g.relative_mismatch()
                );
            }
        }
    }

    #[test]
    fn covering_false_at_eigenvalue() {
        let s = rand_seq(-2, 30, 8, 0.6);
        let m = build_finite_cmv(&s, 5, 15, cone(), cone()).unwrap();
        let z = crate::spectral::eigenvalues(&m).unwrap()[3];
        assert!(!covering_predicate(&s, z, 10, (5, 15), cone(), cone()).unwrap());
    }
}
