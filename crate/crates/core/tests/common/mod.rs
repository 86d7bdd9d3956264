//! Oracles and generators shared by the integration tests. Nothing here calls
//! into the library's numerics.
#![allow(dead_code, clippy::needless_range_loop)]

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform point of the disk of radius `amp`.
pub fn disk_point(rng: &mut ChaCha8Rng, amp: f64) -> Complex64 {
    let r = amp * rng.random::<f64>().sqrt();
    Complex64::from_polar(r, std::f64::consts::TAU * rng.random::<f64>())
}

pub fn unit_point(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::from_polar(1.0, std::f64::consts::TAU * rng.random::<f64>())
}

pub fn disk_points(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Vec<Complex64> {
    (0..n).map(|_| disk_point(rng, amp)).collect()
}

/// Row-major dense matrix as nested vectors.
pub type Dense = Vec<Vec<Complex64>>;

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let n = a.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

pub fn adjoint(a: &Dense) -> Dense {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| a[j][i].conj()).collect())
        .collect()
}

pub fn matvec(a: &Dense, v: &[Complex64]) -> Vec<Complex64> {
    a.iter()
        .map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

pub fn max_abs_diff(a: &Dense, b: &Dense) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(r, s)| r.iter().zip(s).map(|(x, y)| (x - y).norm()))
        .fold(0.0, f64::max)
}

/// Determinant by Gaussian elimination with partial pivoting, returned as
/// (log|det|, det/|det|).
pub fn log_det(mut a: Dense) -> (f64, Complex64) {
    let n = a.len();
    let mut log_abs = 0.0;
    let mut phase = Complex64::new(1.0, 0.0);
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].norm().total_cmp(&a[j][c].norm()))
            .unwrap();
        if a[p][c].norm() == 0.0 {
            return (f64::NEG_INFINITY, phase);
        }
        if p != c {
            a.swap(p, c);
            phase = -phase;
        }
        let piv = a[c][c];
        log_abs += piv.norm().ln();
        phase *= piv / piv.norm();
        for r in c + 1..n {
            let f = a[r][c] / piv;
            for k in c..n {
                let t = a[c][k];
                a[r][k] -= f * t;
            }
        }
    }
    (log_abs, phase)
}

/// Solves a x = b by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Dense, mut b: Vec<Complex64>) -> Vec<Complex64> {
    let n = a.len();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].norm().total_cmp(&a[j][c].norm()))
            .unwrap();
        a.swap(p, c);
        b.swap(p, c);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                let t = a[c][k];
                a[r][k] -= f * t;
            }
            let t = b[c];
            b[r] -= f * t;
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for r in (0..n).rev() {
        let s: Complex64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Haar-ish random unitary: Gram-Schmidt on a complex Gaussian-like matrix.
pub fn random_unitary(rng: &mut ChaCha8Rng, n: usize) -> Dense {
    let mut cols: Vec<Vec<Complex64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        for _ in 0..2 {
            for c in &cols {
                let ip: Complex64 = c.iter().zip(&v).map(|(x, y)| x.conj() * y).sum();
                for (vi, ci) in v.iter_mut().zip(c) {
                    *vi -= ip * ci;
                }
            }
        }
        let nrm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if nrm > 1e-6 {
            cols.push(v.into_iter().map(|x| x / nrm).collect());
        }
    }
    (0..n)
        .map(|i| (0..n).map(|j| cols[j][i]).collect())
        .collect()
}

/// The Szego cocycle step written out from its definition, given s = √z.
pub fn szego_step(alpha: Complex64, s: Complex64) -> [[Complex64; 2]; 2] {
    let rho = (1.0 - alpha.norm_sqr()).sqrt();
    [
        [s / rho, -alpha.conj() / (s * rho)],
        [-alpha * s / rho, 1.0 / (s * rho)],
    ]
}

pub fn mul2(a: [[Complex64; 2]; 2], b: [[Complex64; 2]; 2]) -> [[Complex64; 2]; 2] {
    let mut c = [[Complex64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

/// Largest |eigenvalue| of a 2x2 matrix from the characteristic quadratic.
pub fn spectral_radius2(m: [[Complex64; 2]; 2]) -> f64 {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (tr * tr - 4.0 * det).sqrt();
    ((tr + disc) / 2.0).norm().max(((tr - disc) / 2.0).norm())
}

/// Floquet band test for constant α: |tr M(e^{iθ})| ≤ 2.
pub fn in_floquet_band(alpha: Complex64, theta: f64) -> bool {
    let m = szego_step(alpha, Complex64::from_polar(1.0, theta / 2.0));
    (m[0][0] + m[1][1]).norm() <= 2.0
}

/// Chordal distance on the circle.
pub fn dist(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm()
}

/// Dense (𝓛, 𝓜) on sites a..=b from Θ_n = [[ᾱ_n, ρ_n], [ρ_n, −α_n]] on (n, n+1);
/// 𝓛 holds the even n, 𝓜 the odd ones. `alpha(n)` must cover a−1..=b and the
/// cut values replace α_{a−1} and α_b.
pub fn lm_oracle(
    alpha: impl Fn(i64) -> Complex64,
    a: i64,
    b: i64,
    beta: Complex64,
    eta: Complex64,
) -> (Dense, Dense) {
    let dim = (b - a + 1) as usize;
    let zero = Complex64::new(0.0, 0.0);
    let mut l = vec![vec![zero; dim]; dim];
    let mut m = vec![vec![zero; dim]; dim];
    for n in a - 1..=b {
        let al = if n == a - 1 {
            beta
        } else if n == b {
            eta
        } else {
            alpha(n)
        };
        let rho = Complex64::new((1.0 - al.norm_sqr()).max(0.0).sqrt(), 0.0);
        let theta = [[al.conj(), rho], [rho, -al]];
        let target = if n.rem_euclid(2) == 0 { &mut l } else { &mut m };
        for (di, row) in theta.iter().enumerate() {
            for (dj, v) in row.iter().enumerate() {
                let (i, j) = (n + di as i64, n + dj as i64);
                if (a..=b).contains(&i) && (a..=b).contains(&j) {
                    target[(i - a) as usize][(j - a) as usize] = *v;
                }
            }
        }
    }
    (l, m)
}

pub fn nested(m: &cmvspec_core::DenseMatrix64) -> Dense {
    let n = m.dim();
    (0..n)
        .map(|i| (0..n).map(|j| m.get(i, j)).collect())
        .collect()
}
