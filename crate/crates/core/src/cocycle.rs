//! Szegő cocycle, renormalized transfer products, finite-scale Lyapunov
//! exponents and the avalanche-principle estimator.

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CmvError, Result};
use crate::montecarlo::{mean_and_stderr, sample_phase, stream_rng};
use crate::scalar::{cis, cone, creal, czero, Cx, Mat2, Real};
use crate::torus::{rho_of, Frequency, Phase, SamplingFunction};

/// z = e^{iθ} with θ ∈ [0, 2π) and the branch √z = e^{iθ/2}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralPoint<T: Real> {
    theta: T,
}

impl<T: Real> SpectralPoint<T> {
    pub fn new(theta: T) -> Self {
        let two_pi = T::PI() + T::PI();
        let mut t = theta % two_pi;
        if t < T::zero() {
            t += two_pi;
        }
        if t >= two_pi {
            t = T::zero();
        }
        Self { theta: t }
    }

    pub fn from_z(z: Cx<T>) -> Self {
        Self::new(z.im.atan2(z.re))
    }

    pub fn theta(&self) -> T {
        self.theta
    }

    pub fn z(&self) -> Cx<T> {
        cis(self.theta)
    }

    pub fn sqrt_z(&self) -> Cx<T> {
        cis(self.theta / T::c(2.0))
    }
}

/// (1/ρ)[[√z, −α♯/√z], [−α√z, 1/√z]] where α♯ continues conj(α) off the real torus.
pub fn cocycle_matrix<T: Real>(
    alpha: Cx<T>,
    alpha_reflected: Cx<T>,
    rho: Cx<T>,
    z: &SpectralPoint<T>,
) -> Mat2<T> {
    let s = z.sqrt_z();
    let si = s.conj();
    let inv = cone::<T>() / rho;
    Mat2::new(
        s * inv,
        -alpha_reflected * si * inv,
        -alpha * s * inv,
        si * inv,
    )
}

/// M(ω, z; x) for a real or strip phase x.
pub fn cocycle_step<T: Real>(
    f: &SamplingFunction<T>,
    z: &SpectralPoint<T>,
    x: &Phase<T>,
) -> Result<Mat2<T>> {
    let a = f.eval_alpha(x)?;
    if x.is_real() {
        return Ok(cocycle_matrix(a, a.conj(), creal(rho_of(a)), z));
    }
    let r = f.eval_alpha_reflected(x)?;
    let rho = (cone::<T>() - a * r).sqrt();
    Ok(cocycle_matrix(a, r, rho, z))
}

/// Running product P = S_n ⋯ S_1 kept as P = Q·R with Q unitary and
/// R = e^{a}[[u₁₁, w], [0, u₂₂e^{b−a}]], |u₁₁| = |u₂₂| = 1.
#[derive(Clone, Copy, Debug)]
pub struct RenormalizedProduct<T: Real> {
    q: Mat2<T>,
    a: T,
    b: T,
    u11: Cx<T>,
    u22: Cx<T>,
    w: Cx<T>,
    steps: usize,
}

impl<T: Real> Default for RenormalizedProduct<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> RenormalizedProduct<T> {
    pub fn new() -> Self {
        Self {
            q: Mat2::identity(),
            a: T::zero(),
            b: T::zero(),
            u11: cone(),
            u22: cone(),
            w: czero(),
            steps: 0,
        }
    }

    /// P ← S·P.
    pub fn push_left(&mut self, s: Mat2<T>) {
        let m = s * self.q;
        let c1 = [m.m[0][0], m.m[1][0]];
        let c2 = [m.m[0][1], m.m[1][1]];
        let r11 = (c1[0].norm_sqr() + c1[1].norm_sqr()).sqrt();
        let (q1, q2) = if r11 == T::zero() {
            ([cone(), czero()], [czero(), cone()])
        } else {
            let q1 = [c1[0] / r11, c1[1] / r11];
            (q1, [-q1[1].conj(), q1[0].conj()])
        };
        let r12 = q1[0].conj() * c2[0] + q1[1].conj() * c2[1];
        let r22 = q2[0].conj() * c2[0] + q2[1].conj() * c2[1];
        let r22n = r22.norm();
        let scale = (self.b - self.a).exp();
        self.w = self.w + r12 / r11 * self.u22 * scale;
        self.a += r11.ln();
        self.b += r22n.ln();
        if r22n > T::zero() {
            self.u22 *= r22 / r22n;
        }
        self.q = Mat2::new(q1[0], q2[0], q1[1], q2[1]);
        self.steps += 1;
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn scaled_r(&self) -> Mat2<T> {
        Mat2::new(
            self.u11,
            self.w,
            czero(),
            self.u22 * (self.b - self.a).exp(),
        )
    }

    /// log‖P‖ (spectral norm).
    pub fn log_norm(&self) -> T {
        self.a + self.scaled_r().norm().ln()
    }

    pub fn log_abs_det(&self) -> T {
        self.a + self.b
    }

    /// (P / ‖P‖_max, log‖P‖_max).
    pub fn normalized(&self) -> (Mat2<T>, T) {
        let k = self.q * self.scaled_r();
        let m = k.max_abs();
        (k.scale(T::one() / m), self.a + m.ln())
    }
}

#[derive(Clone, Debug)]
pub struct CocycleProduct<T: Real> {
    pub n: usize,
    pub z: SpectralPoint<T>,
    pub base: Phase<T>,
    acc: RenormalizedProduct<T>,
}

impl<T: Real> CocycleProduct<T> {
    /// M_n / ‖M_n‖_max.
    pub fn matrix(&self) -> Mat2<T> {
        self.acc.normalized().0
    }

    /// log‖M_n‖_max: the scale stripped from `matrix()`.
    pub fn log_norm(&self) -> T {
        self.acc.normalized().1
    }

    /// log‖M_n‖ in the operator norm.
    pub fn log_operator_norm(&self) -> T {
        // det M_n = 1 forces ‖M_n‖ ≥ 1; clamp the rounding below it
        self.acc.log_norm().max(T::zero())
    }

    pub fn log_abs_det(&self) -> T {
        self.acc.log_abs_det()
    }

    /// The unrenormalized product; overflows for large positive-exponent n.
    pub fn full_matrix(&self) -> Mat2<T> {
        let (m, s) = self.acc.normalized();
        m.scale(s.exp())
    }

    /// u_n(x) = log‖M_n(x)‖ / n.
    pub fn u(&self) -> T {
        self.log_operator_norm() / T::from_usize_lossy(self.n)
    }
}

/// M_n(ω, z; x) = M(x + (n−1)ω) ⋯ M(x).
pub fn transfer_product<T: Real>(
    f: &SamplingFunction<T>,
    omega: &Frequency<T>,
    z: &SpectralPoint<T>,
    x: &Phase<T>,
    n: usize,
) -> Result<CocycleProduct<T>> {
    if n == 0 {
        return Err(CmvError::InvalidInput(
            "transfer product needs n ≥ 1".into(),
        ));
    }
    if omega.dim() != f.dim() {
        return Err(CmvError::DimensionMismatch {
            expected: f.dim(),
            got: omega.dim(),
        });
    }
    let mut acc = RenormalizedProduct::new();
    for j in 0..n {
        acc.push_left(cocycle_step(f, z, &x.shifted(omega, j as i64))?);
    }
    Ok(CocycleProduct {
        n,
        z: *z,
        base: x.clone(),
        acc,
    })
}

/// Product of cocycle steps built from explicit coefficients α_0, …, α_{n−1}.
pub fn transfer_product_from_alphas<T: Real>(
    alphas: &[Cx<T>],
    z: &SpectralPoint<T>,
) -> RenormalizedProduct<T> {
    let mut acc = RenormalizedProduct::new();
    for a in alphas {
        acc.push_left(cocycle_matrix(*a, a.conj(), creal(rho_of(*a)), z));
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LyapunovMethod {
    Direct,
    Avalanche,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovEstimate<T: Real> {
    pub n: usize,
    pub value: T,
    pub sample_count: usize,
    pub std_error: T,
    pub method: LyapunovMethod,
}

/// Per-sample log‖M_n(x_i)‖ for phases drawn from stream i of `seed`.
pub fn sampled_log_norms<T: Real>(
    f: &SamplingFunction<T>,
    omega: &Frequency<T>,
    z: &SpectralPoint<T>,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<T>> {
    (0..samples)
        .into_par_iter()
        .map(|i| {
            let x = sample_phase(&mut stream_rng(seed, i as u64), f.dim());
            transfer_product(f, omega, z, &x, n).map(|p| p.log_operator_norm())
        })
        .collect()
}

/// Monte-Carlo L_n = ∫ u_n dx over uniform phases.
pub fn lyapunov_finite<T: Real>(
    f: &SamplingFunction<T>,
    omega: &Frequency<T>,
    z: &SpectralPoint<T>,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<LyapunovEstimate<T>> {
    if samples == 0 {
        return Err(CmvError::InvalidInput(
            "at least one sample is required".into(),
        ));
    }
    let nn = T::from_usize_lossy(n);
    let u: Vec<T> = sampled_log_norms(f, omega, z, n, samples, seed)?
        .into_iter()
        .map(|v| v / nn)
        .collect();
    let (value, std_error) = mean_and_stderr(&u);
    Ok(LyapunovEstimate {
        n,
        value,
        sample_count: samples,
        std_error,
        method: LyapunovMethod::Direct,
    })
}

/// log‖A_m⋯A_1‖ + Σ_{j=2}^{m−1} log‖A_j‖ − Σ_{j=1}^{m−1} log‖A_{j+1}A_j‖, blocks[0] = A_1.
pub fn avalanche_expression<T: Real>(blocks: &[Mat2<T>]) -> T {
    let m = blocks.len();
    let mut acc = RenormalizedProduct::new();
    for b in blocks {
        acc.push_left(*b);
    }
    let mut e = acc.log_norm();
    for b in blocks.iter().take(m.saturating_sub(1)).skip(1) {
        e += b.norm().ln();
    }
    for j in 0..m.saturating_sub(1) {
        e -= (blocks[j + 1] * blocks[j]).norm().ln();
    }
    e
}

#[derive(Clone, Debug, PartialEq)]
pub struct AvalancheCheck<T: Real> {
    /// μ = min_j ‖A_j‖.
    pub mu: T,
    /// max_j [log‖A_{j+1}‖ + log‖A_j‖ − log‖A_{j+1}A_j‖].
    pub max_pair_defect: T,
    pub expression: T,
}

/// Verifies min‖A_j‖ ≥ μ ≥ m and the pair-angle condition with μ = min‖A_j‖.
pub fn check_avalanche<T: Real>(blocks: &[Mat2<T>]) -> Result<AvalancheCheck<T>> {
    let m = blocks.len();
    if m < 2 {
        return Err(CmvError::InvalidInput(
            "the avalanche principle needs at least two blocks".into(),
        ));
    }
    let norms: Vec<T> = blocks.iter().map(|b| b.norm()).collect();
    let (jmin, mu) =
        norms.iter().enumerate().fold(
            (0, T::infinity()),
            |(bj, bv), (j, v)| if *v < bv { (j, *v) } else { (bj, bv) },
        );
    if mu < T::from_usize_lossy(m) {
        return Err(CmvError::Avalanche(format!(
            "norm condition fails: min ‖A_j‖ = {mu} at j = {} is below m = {m}",
            jmin + 1
        )));
    }
    let half_log_mu = mu.ln() / T::c(2.0);
    let mut worst = T::neg_infinity();
    for j in 0..m - 1 {
        let d = norms[j + 1].ln() + norms[j].ln() - (blocks[j + 1] * blocks[j]).norm().ln();
        if d >= half_log_mu {
            return Err(CmvError::Avalanche(format!(
                "angle condition fails at pair (A_{}, A_{}): defect {d} ≥ ½log μ = {half_log_mu}",
                j + 2,
                j + 1
            )));
        }
        worst = worst.max(d);
    }
    Ok(AvalancheCheck {
        mu,
        max_pair_defect: worst,
        expression: avalanche_expression(blocks),
    })
}

/// Number of consecutive length-n blocks checked against the hypotheses per sample.
pub const AVALANCHE_BLOCKS: usize = 4;

/// Multilevel estimate L ≈ 2L_{2n} − L_n at n = n₀2^ℓ, ℓ = 0..levels.
///
/// For every sampled phase the blocks M_n(x + jnω), j < 4, must satisfy the
/// avalanche hypotheses; the per-sample combination 2u_{2n}(x) − u_n(x) is
/// averaged, so its standard error accounts for the correlation.
pub fn lyapunov_avalanche<T: Real>(
    f: &SamplingFunction<T>,
    omega: &Frequency<T>,
    z: &SpectralPoint<T>,
    n0: usize,
    levels: usize,
    samples: usize,
    seed: u64,
) -> Result<LyapunovEstimate<T>> {
    if n0 == 0 || levels == 0 || samples == 0 {
        return Err(CmvError::InvalidInput(
            "n₀, levels and samples must be positive".into(),
        ));
    }
    let mut last = None;
    for level in 0..levels {
        let n = n0 << level;
        let nn = T::from_usize_lossy(n);
        let vals: Vec<T> = (0..samples)
            .into_par_iter()
            .map(|i| -> Result<T> {
                let x = sample_phase(&mut stream_rng(seed, i as u64), f.dim());
                let blocks = (0..AVALANCHE_BLOCKS)
                    .map(|j| {
                        transfer_product(f, omega, z, &x.shifted(omega, (j * n) as i64), n)
                            .map(|p| p.full_block())
                    })
                    .collect::<Result<Vec<_>>>()?;
                check_scaled_avalanche(&blocks).map_err(|e| match e {
                    CmvError::Avalanche(msg) => {
                        CmvError::Avalanche(format!("sample {i}, block length {n}: {msg}"))
                    }
                    other => other,
                })?;
                let un = blocks[0].1 / nn;
                let u2n = transfer_product(f, omega, z, &x, 2 * n)?.log_operator_norm() / (nn + nn);
                Ok(u2n + u2n - un)
            })
            .collect::<Result<Vec<T>>>()?;
        let (value, std_error) = mean_and_stderr(&vals);
        last = Some(LyapunovEstimate {
            n: 2 * n,
            value,
            sample_count: samples,
            std_error,
            method: LyapunovMethod::Avalanche,
        });
    }
    Ok(last.expect("levels ≥ 1"))
}

impl<T: Real> CocycleProduct<T> {
    // (M_n / ‖M_n‖_max, log‖M_n‖)
    fn full_block(&self) -> (Mat2<T>, T) {
        (self.matrix(), self.log_operator_norm())
    }
}

// Avalanche hypotheses for blocks given as (normalized matrix, log‖A‖); works
// in log space so long blocks do not overflow.
fn check_scaled_avalanche<T: Real>(blocks: &[(Mat2<T>, T)]) -> Result<()> {
    let m = blocks.len();
    let log_mu = blocks.iter().map(|b| b.1).fold(T::infinity(), T::min);
    if log_mu < T::from_usize_lossy(m).ln() {
        return Err(CmvError::Avalanche(format!(
            "norm condition fails: min log‖A_j‖ = {log_mu} is below log m = {}",
            T::from_usize_lossy(m).ln()
        )));
    }
    for j in 0..m - 1 {
        let (a1, l1) = blocks[j];
        let (a2, l2) = blocks[j + 1];
        let s1 = l1 - a1.norm().ln();
        let s2 = l2 - a2.norm().ln();
        let log_pair = (a2 * a1).norm().ln() + s1 + s2;
        let d = l1 + l2 - log_pair;
        if d >= log_mu / T::c(2.0) {
            return Err(CmvError::Avalanche(format!(
                "angle condition fails at pair ({}, {}): defect {d} ≥ ½log μ = {}",
                j + 2,
                j + 1,
                log_mu / T::c(2.0)
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonotonicityReport<T: Real> {
    pub estimates: Vec<LyapunovEstimate<T>>,
    /// (m, n, L_n − L_m, 3·stderr of the paired difference) for each violated m | n.
    pub violations: Vec<(usize, usize, T, T)>,
    /// max over n < n_max of (L_n − L_{n_max})·n / (log n)^{1/σ}.
    pub fitted_c: Option<T>,
}

/// Checks L_n ≤ L_m + 3σ for m | n on a common sample set.
pub fn check_ln_monotonicity<T: Real>(
    f: &SamplingFunction<T>,
    omega: &Frequency<T>,
    z: &SpectralPoint<T>,
    scales: &[usize],
    samples: usize,
    seed: u64,
    sigma: T,
) -> Result<MonotonicityReport<T>> {
    if scales.is_empty() || scales.windows(2).any(|w| w[0] >= w[1]) || scales[0] == 0 {
        return Err(CmvError::InvalidInput(
            "scales must be positive and strictly increasing".into(),
        ));
    }
    if samples == 0 {
        return Err(CmvError::InvalidInput(
            "at least one sample is required".into(),
        ));
    }
    let per_scale: Vec<Vec<T>> = scales
        .iter()
        .map(|&n| {
            let nn = T::from_usize_lossy(n);
            sampled_log_norms(f, omega, z, n, samples, seed)
                .map(|v| v.into_iter().map(|x| x / nn).collect())
        })
        .collect::<Result<_>>()?;
    let estimates: Vec<LyapunovEstimate<T>> = scales
        .iter()
        .zip(&per_scale)
        .map(|(&n, u)| {
            let (value, std_error) = mean_and_stderr(u);
            LyapunovEstimate {
                n,
                value,
                sample_count: samples,
                std_error,
                method: LyapunovMethod::Direct,
            }
        })
        .collect();
    let mut violations = Vec::new();
    for (i, &m) in scales.iter().enumerate() {
        for (j, &n) in scales.iter().enumerate().skip(i + 1) {
            if n % m != 0 {
                continue;
            }
            let diff: Vec<T> = per_scale[j]
                .iter()
                .zip(&per_scale[i])
                .map(|(a, b)| *a - *b)
                .collect();
            let (d, se) = mean_and_stderr(&diff);
            let tol = T::c(3.0) * se + T::c(1e-12);
            if d > tol {
                violations.push((m, n, d, tol));
            }
        }
    }
    let l_inf = estimates.last().expect("nonempty").value;
    let fitted_c = estimates[..estimates.len() - 1]
        .iter()
        .filter(|e| e.n > 1)
        .map(|e| {
            let nn = T::from_usize_lossy(e.n);
            (e.value - l_inf) * nn / nn.ln().powf(T::one() / sigma)
        })
        .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.max(v))));
    Ok(MonotonicityReport {
        estimates,
        violations,
        fitted_c,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StripReport<T: Real> {
    /// (y, L_n(y), |L_n(y) − L_n(0)| / Σ|y_i|)
    pub entries: Vec<(Vec<T>, T, T)>,
    pub max_ratio: T,
}

/// Empirical Lipschitz ratio of y ↦ L_n(y) = ∫ u_n(x + iy) dx.
pub fn strip_continuity_check<T: Real>(
    f: &SamplingFunction<T>,
    omega: &Frequency<T>,
    z: &SpectralPoint<T>,
    n: usize,
    y_list: &[Vec<T>],
    samples: usize,
    seed: u64,
) -> Result<StripReport<T>> {
    if samples == 0 || n == 0 {
        return Err(CmvError::InvalidInput(
            "n and samples must be positive".into(),
        ));
    }
    let half = f.strip_width() / T::c(2.0);
    for y in y_list {
        if y.len() != f.dim() {
            return Err(CmvError::DimensionMismatch {
                expected: f.dim(),
                got: y.len(),
            });
        }
        let s = y.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if s >= half {
            return Err(CmvError::StripViolation {
                y: s.to_f64_lossy(),
                h: half.to_f64_lossy(),
            });
        }
    }
    let nn = T::from_usize_lossy(n);
    let l_at = |y: &[T]| -> Result<T> {
        let vals = (0..samples)
            .into_par_iter()
            .map(|i| {
                let x = sample_phase::<T>(&mut stream_rng(seed, i as u64), f.dim());
                let xp = Phase::with_imag(x.coords(), y)?;
                transfer_product(f, omega, z, &xp, n).map(|p| p.log_operator_norm() / nn)
            })
            .collect::<Result<Vec<T>>>()?;
        Ok(mean_and_stderr(&vals).0)
    };
    let base = l_at(&vec![T::zero(); f.dim()])?;
    let mut entries = Vec::new();
    let mut max_ratio = T::zero();
    for y in y_list {
        let l = l_at(y)?;
        let denom: T = y.iter().map(|v| v.abs()).sum();
        let ratio = if denom == T::zero() {
            T::zero()
        } else {
            (l - base).abs() / denom
        };
        max_ratio = max_ratio.max(ratio);
        entries.push((y.clone(), l, ratio));
    }
    Ok(StripReport { entries, max_ratio })
}

#[derive(Clone, Debug, PartialEq)]
pub struct UniformUpperReport<T: Real> {
    pub sup_log_norm: T,
    pub n_times_ln: T,
    pub excess: T,
}

/// sup over a grid of log‖M_n(x)‖ minus n·L_n (L_n from `samples` Monte-Carlo phases).
pub fn uniform_upper_check<T: Real>(
    f: &SamplingFunction<T>,
    omega: &Frequency<T>,
    z: &SpectralPoint<T>,
    n: usize,
    grid_per_dim: usize,
    samples: usize,
    seed: u64,
) -> Result<UniformUpperReport<T>> {
    if grid_per_dim < 32 {
        return Err(CmvError::InvalidInput(format!(
            "grid resolution must be ≥ 32 per dimension, got {grid_per_dim}"
        )));
    }
    let d = f.dim();
    let total = grid_per_dim
        .checked_pow(d as u32)
        .ok_or_else(|| CmvError::InvalidInput("grid too large".into()))?;
    let step = T::one() / T::from_usize_lossy(grid_per_dim);
    let sup = (0..total)
        .into_par_iter()
        .map(|idx| {
            let mut r = idx;
            let coords: Vec<T> = (0..d)
                .map(|_| {
                    let c = T::from_usize_lossy(r % grid_per_dim) * step;
                    r /= grid_per_dim;
                    c
                })
                .collect();
            transfer_product(f, omega, z, &Phase::new(&coords), n).map(|p| p.log_operator_norm())
        })
        .collect::<Result<Vec<T>>>()?
        .into_iter()
        .fold(T::neg_infinity(), T::max);
    let l = lyapunov_finite(f, omega, z, n, samples, seed)?;
    let n_l = l.value * T::from_usize_lossy(n);
    Ok(UniformUpperReport {
        sup_log_norm: sup,
        n_times_ln: n_l,
        excess: sup - n_l,
    })
}

/// Spectral radius of a 2×2 matrix; the closed-form Floquet growth rate
/// of a constant cocycle is its logarithm.
pub fn spectral_radius<T: Real>(m: &Mat2<T>) -> T {
    let tr = m.trace();
    let det = m.det();
    let disc = (tr * tr - det * Complex::new(T::c(4.0), T::zero())).sqrt();
    let half = T::c(0.5);
    ((tr + disc) * half).norm().max(((tr - disc) * half).norm())
}
