//! Exponent schedule, the inductive conditions (A)-(D), the finite-scale
//! localization step, one-depth advances and the interval-coverage scan.
//!
//! The phase maps x_s are found by root finding on the last phase coordinate:
//! with φ ∈ ℝ^{d−1} held fixed, t ↦ arg z_k(φ, t) − arg z is driven to zero by
//! a damped Newton iteration, with bisection on a bracket as the fallback.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmv::{build_finite_cmv, FiniteCmv, QuasiPeriodicModel};
use crate::error::{CmvError, Result};
use crate::montecarlo::{
    derive_seed, sample_phase, sample_uniform, stream_rng, ExceptionalSetEstimate,
};
use crate::scalar::{chordal, cis, cone, cx, czero, phase_of, wrap_angle, Cx, Real};
use crate::spectral::{
    eigensolve, eigenvalues, inverse_iteration, separation_gap, EigenPair, SiteVector,
};
use crate::torus::{dist_to_integer, Frequency, Phase, SamplingFunction};

/// Angle tolerance at which the phase Newton iteration stops.
pub const NEWTON_TOL: f64 = 1e-12;
/// Largest residual |z_k(x_s(φ,z)) − z| accepted as a solution.
pub const SOLVER_TOL: f64 = 1e-9;
/// Finite-difference step for phase derivatives.
pub const FD_STEP: f64 = 1e-6;

const MAX_NEWTON: usize = 60;
const MAX_PHASE_STEP: f64 = 0.02;
const INIT_SCAN: usize = 64;

fn f64_of<T: Real>(v: T) -> f64 {
    v.to_f64_lossy()
}

fn cx_pair<T: Real>(z: Cx<T>) -> (f64, f64) {
    (z.re.to_f64_lossy(), z.im.to_f64_lossy())
}

// ---------------------------------------------------------------------------
// schedule

/// Plain parameters of the exponent schedule, as read from a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleParams {
    pub nu_prime: f64,
    pub nu: f64,
    pub tau: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// Every link of the ordering chain must have ratio ≥ this factor.
    pub ratio_factor: f64,
    pub n0: usize,
    pub s_max: usize,
    /// N_s ≤ growth_cap·N_{s−1}; `None` leaves ⌊N^Â⌋ uncapped.
    pub growth_cap: Option<f64>,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            nu_prime: 0.1,
            nu: 0.1,
            tau: 0.3,
            c0: 3.5,
            c1: 2.0,
            c2: 3.2,
            ratio_factor: 1.5,
            n0: 16,
            s_max: 1,
            growth_cap: Some(3.0),
        }
    }
}

/// One link a ≪ b of the ordering chain.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainLink {
    pub smaller: &'static str,
    pub larger: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleSchedule<T: Real> {
    pub nu_prime: T,
    pub nu: T,
    pub tau: T,
    pub c0: T,
    pub c1: T,
    pub c2: T,
    pub ratio_factor: T,
    pub n0: usize,
    pub s_max: usize,
    pub growth_cap: Option<T>,
}

impl<T: Real> ScaleSchedule<T> {
    /// Validates C₁+1 < C₂ < C₀ < 2C₁, 0 < ν′ ≤ ν ≤ 1, the ordering chain and
    /// strict growth of the scales up to s_max.
    pub fn from_params(p: &ScheduleParams) -> Result<Self> {
        let bad = |m: String| Err(CmvError::InvalidInput(m));
        if !(p.nu_prime > 0.0 && p.nu_prime <= p.nu && p.nu <= 1.0) {
            return bad(format!(
                "need 0 < nu_prime <= nu <= 1, got nu_prime = {}, nu = {}",
                p.nu_prime, p.nu
            ));
        }
        if !(p.tau > 0.0 && p.tau < 1.0) {
            return bad(format!("tau must lie in (0, 1), got {}", p.tau));
        }
        if !(p.c1 + 1.0 < p.c2 && p.c2 < p.c0 && p.c0 < 2.0 * p.c1) {
            return bad(format!(
                "need C1 + 1 < C2 < C0 < 2 C1, got C0 = {}, C1 = {}, C2 = {}",
                p.c0, p.c1, p.c2
            ));
        }
        if !(p.ratio_factor >= 1.0) {
            return bad(format!(
                "ratio factor must be at least 1, got {}",
                p.ratio_factor
            ));
        }
        if p.n0 < 2 {
            return bad(format!("N0 must be at least 2, got {}", p.n0));
        }
        if let Some(c) = p.growth_cap {
            if !(c > 1.0) {
                return bad(format!("growth cap must exceed 1, got {c}"));
            }
        }
        let s = Self {
            nu_prime: T::c(p.nu_prime),
            nu: T::c(p.nu),
            tau: T::c(p.tau),
            c0: T::c(p.c0),
            c1: T::c(p.c1),
            c2: T::c(p.c2),
            ratio_factor: T::c(p.ratio_factor),
            n0: p.n0,
            s_max: p.s_max,
            growth_cap: p.growth_cap.map(T::c),
        };
        if let Some(l) = s.ordering_chain().into_iter().find(|l| !l.holds) {
            return bad(format!(
                "ordering {} << {} fails: {:e} vs {:e} (ratio {:.4} below factor {})",
                l.smaller, l.larger, l.lhs, l.rhs, l.ratio, p.ratio_factor
            ));
        }
        s.scales()?;
        Ok(s)
    }

    pub fn to_params(&self) -> ScheduleParams {
        ScheduleParams {
            nu_prime: f64_of(self.nu_prime),
            nu: f64_of(self.nu),
            tau: f64_of(self.tau),
            c0: f64_of(self.c0),
            c1: f64_of(self.c1),
            c2: f64_of(self.c2),
            ratio_factor: f64_of(self.ratio_factor),
            n0: self.n0,
            s_max: self.s_max,
            growth_cap: self.growth_cap.map(f64_of),
        }
    }

    pub fn delta_hat(&self) -> T {
        self.nu_prime.powf(self.c0)
    }

    pub fn beta_hat(&self) -> T {
        self.nu_prime.powf(self.c1)
    }

    pub fn mu_hat(&self) -> T {
        self.nu_prime.powf(self.c2)
    }

    pub fn a_hat(&self) -> T {
        T::one() / self.beta_hat()
    }

    /// β̂² ≪ δ̂ ≪ μ̂ ≪ β̂ν ≪ β̂ ≪ ν.
    pub fn ordering_chain(&self) -> Vec<ChainLink> {
        let b = self.beta_hat();
        let chain = [
            ("beta_hat^2", b * b),
            ("delta_hat", self.delta_hat()),
            ("mu_hat", self.mu_hat()),
            ("beta_hat*nu", b * self.nu),
            ("beta_hat", b),
            ("nu", self.nu),
        ];
        let factor = f64_of(self.ratio_factor);
        chain
            .windows(2)
            .map(|w| {
                let (lhs, rhs) = (f64_of(w[0].1), f64_of(w[1].1));
                let ratio = rhs / lhs;
                ChainLink {
                    smaller: w[0].0,
                    larger: w[1].0,
                    lhs,
                    rhs,
                    ratio,
                    holds: lhs < rhs && ratio >= factor,
                }
            })
            .collect()
    }

    /// N_0, …, N_{s_max}.
    pub fn scales(&self) -> Result<Vec<usize>> {
        let mut out = vec![self.n0];
        let a = f64_of(self.a_hat());
        for s in 1..=self.s_max {
            let prev = out[s - 1] as f64;
            let mut next = prev.powf(a).floor();
            if let Some(c) = self.growth_cap {
                next = next.min((f64_of(c) * prev).floor());
            }
            if !next.is_finite() || next > 1e9 {
                return Err(CmvError::InvalidInput(format!(
                    "scale N_{s} = {next:e} is out of range; set a growth cap"
                )));
            }
            let next = next as usize;
            if next <= out[s - 1] {
                return Err(CmvError::InvalidInput(format!(
                    "scales must increase strictly: N_{} = {} but N_{s} = {next}",
                    s - 1,
                    out[s - 1]
                )));
            }
            out.push(next);
        }
        Ok(out)
    }

    pub fn scale(&self, s: usize) -> Result<usize> {
        self.scales()?.get(s).copied().ok_or_else(|| {
            CmvError::InvalidInput(format!("depth {s} exceeds s_max = {}", self.s_max))
        })
    }

    /// r_s = exp(−N_s^δ̂).
    pub fn radius(&self, s: usize) -> Result<T> {
        let n = T::from_usize_lossy(self.scale(s)?);
        Ok((-n.powf(self.delta_hat())).exp())
    }
}

/// b lies strictly between a and c on the arc running counterclockwise from a to c.
pub fn dotted_order<T: Real>(a: Cx<T>, b: Cx<T>, c: Cx<T>) -> bool {
    let two_pi = T::PI() + T::PI();
    let ccw = |from: Cx<T>, to: Cx<T>| {
        let mut d = phase_of(to) - phase_of(from);
        if d < T::zero() {
            d += two_pi;
        }
        d
    };
    let ab = ccw(a, b);
    let ac = ccw(a, c);
    ab > T::zero() && ab < ac
}

// ---------------------------------------------------------------------------
// window helpers and the phase solver

#[derive(Clone, Copy)]
struct Window<'a, T: Real> {
    model: &'a QuasiPeriodicModel<T>,
    lo: i64,
    hi: i64,
    beta: Cx<T>,
    eta: Cx<T>,
}

impl<'a, T: Real> Window<'a, T> {
    fn new(
        model: &'a QuasiPeriodicModel<T>,
        (lo, hi): (i64, i64),
        beta: Cx<T>,
        eta: Cx<T>,
    ) -> Self {
        Self {
            model,
            lo,
            hi,
            beta,
            eta,
        }
    }

    fn cmv(&self, x: &Phase<T>) -> Result<FiniteCmv<T>> {
        let seq = self.model.sequence(x, self.lo - 1, self.hi)?;
        build_finite_cmv(&seq, self.lo, self.hi, self.beta, self.eta)
    }

    fn values(&self, x: &Phase<T>) -> Result<Vec<Cx<T>>> {
        eigenvalues(&self.cmv(x)?)
    }

    /// Eigenvalue nearest `reference`.
    fn track(&self, x: &Phase<T>, reference: Cx<T>) -> Result<Cx<T>> {
        nearest_value(&self.values(x)?, reference)
    }

    /// Full eigenpair nearest `reference` and its separation from the rest.
    fn pair(&self, x: &Phase<T>, reference: Cx<T>) -> Result<(EigenPair<T>, T)> {
        let pairs = eigensolve(&self.cmv(x)?)?;
        let k = nearest_index(&pairs, reference)?;
        let sep = if pairs.len() > 1 {
            separation_gap(&pairs, k)?
        } else {
            T::infinity()
        };
        Ok((pairs[k].clone(), sep))
    }
}

fn nearest_value<T: Real>(vals: &[Cx<T>], z: Cx<T>) -> Result<Cx<T>> {
    let mut best: Option<(Cx<T>, T)> = None;
    for v in vals {
        let d = chordal(*v, z);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((*v, d));
        }
    }
    best.map(|b| b.0)
        .ok_or_else(|| CmvError::InvalidInput("empty spectrum".into()))
}

fn nearest_index<T: Real>(pairs: &[EigenPair<T>], z: Cx<T>) -> Result<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, p) in pairs.iter().enumerate() {
        let d = chordal(p.value, z);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|b| b.0)
        .ok_or_else(|| CmvError::InvalidInput("no eigenpairs".into()))
}

fn phase_with_last<T: Real>(phi: &[T], t: T) -> Phase<T> {
    let mut raw = phi.to_vec();
    raw.push(t);
    Phase::new(&raw)
}

/// Aligns `b` to `a` by the unimodular factor minimizing ‖a − cb‖.
fn aligned<T: Real>(a: &SiteVector<T>, b: &SiteVector<T>) -> SiteVector<T> {
    let ip = b.inner(a);
    if ip.norm() == T::zero() {
        return b.clone();
    }
    b.scaled(ip / ip.norm())
}

struct PhaseRoot<T: Real> {
    t: T,
    value: Cx<T>,
    iterations: usize,
}

/// Solves arg z_k(φ, t) = arg z for t, following the eigenvalue that starts
/// nearest `reference` at t0.
fn solve_last_coord<T, F>(
    track: &F,
    phi: &[T],
    z: Cx<T>,
    t0: T,
    reference: Cx<T>,
    max_iter: usize,
) -> Result<PhaseRoot<T>>
where
    T: Real,
    F: Fn(&Phase<T>, Cx<T>) -> Result<Cx<T>>,
{
    let target = phase_of(z);
    let g_of = |v: Cx<T>| wrap_angle(phase_of(v) - target);
    let h = T::c(FD_STEP);
    let tol = T::c(NEWTON_TOL);
    let mut t = t0;
    let mut val = track(&phase_with_last(phi, t), reference)?;
    let mut g = g_of(val);
    for it in 0..max_iter {
        if g.abs() <= tol {
            return Ok(PhaseRoot {
                t,
                value: val,
                iterations: it,
            });
        }
        let vp = track(&phase_with_last(phi, t + h), val)?;
        let vm = track(&phase_with_last(phi, t - h), val)?;
        let dg = wrap_angle(phase_of(vp) - phase_of(vm)) / (h + h);
        if !(dg.abs() > T::c(1e-10)) || !dg.is_finite() {
            break;
        }
        let cap = T::c(MAX_PHASE_STEP);
        let mut step = (-g / dg).max(-cap).min(cap);
        let mut accepted = false;
        for _ in 0..10 {
            let tn = t + step;
            let vn = track(&phase_with_last(phi, tn), val)?;
            let gn = g_of(vn);
            if gn.abs() < g.abs() {
                t = tn;
                val = vn;
                g = gn;
                accepted = true;
                break;
            }
            step = step / T::c(2.0);
        }
        if !accepted {
            if g.abs() <= T::c(SOLVER_TOL) {
                return Ok(PhaseRoot {
                    t,
                    value: val,
                    iterations: it + 1,
                });
            }
            break;
        }
    }
    if g.abs() <= tol {
        return Ok(PhaseRoot {
            t,
            value: val,
            iterations: max_iter,
        });
    }
    bisect_last_coord(track, phi, z, t, val, max_iter)
}

/// Bracket search outward from t followed by bisection.
fn bisect_last_coord<T, F>(
    track: &F,
    phi: &[T],
    z: Cx<T>,
    t0: T,
    v0: Cx<T>,
    max_iter: usize,
) -> Result<PhaseRoot<T>>
where
    T: Real,
    F: Fn(&Phase<T>, Cx<T>) -> Result<Cx<T>>,
{
    let target = phase_of(z);
    let g_of = |v: Cx<T>| wrap_angle(phase_of(v) - target);
    let g0 = g_of(v0);
    let dt = T::c(2e-3);
    for dir in [T::one(), -T::one()] {
        let (mut ta, mut va, mut ga) = (t0, v0, g0);
        for _ in 0..250 {
            let tb = ta + dir * dt;
            let vb = track(&phase_with_last(phi, tb), va)?;
            let gb = g_of(vb);
            // a sign change with a small jump is a genuine crossing, not a wrap at ±π
            if ga * gb <= T::zero() && (ga - gb).abs() < T::c(1.0) {
                let (mut lo, mut hi, mut vlo, mut glo) = (ta, tb, va, ga);
                let mut vmid = vb;
                let mut gmid = gb;
                let mut tmid = tb;
                for _ in 0..(max_iter.max(60)) {
                    tmid = (lo + hi) / T::c(2.0);
                    vmid = track(&phase_with_last(phi, tmid), vlo)?;
                    gmid = g_of(vmid);
                    if gmid.abs() <= T::c(NEWTON_TOL) || (hi - lo).abs() < T::epsilon() * T::c(4.0)
                    {
                        break;
                    }
                    if glo * gmid <= T::zero() {
                        hi = tmid;
                    } else {
                        lo = tmid;
                        vlo = vmid;
                        glo = gmid;
                    }
                }
                if gmid.abs() <= T::c(SOLVER_TOL) {
                    return Ok(PhaseRoot {
                        t: tmid,
                        value: vmid,
                        iterations: max_iter,
                    });
                }
                return Err(CmvError::Numeric(format!(
                    "phase bisection stalled at |arg residual| = {:e}",
                    f64_of(gmid.abs())
                )));
            }
            ta = tb;
            va = vb;
            ga = gb;
        }
    }
    Err(CmvError::Numeric(format!(
        "phase continuation diverged: no root of arg z_k - arg z near t = {}",
        f64_of(t0)
    )))
}

// ---------------------------------------------------------------------------
// inductive state

/// A solved node of the grid over Π_s.
#[derive(Clone, Debug)]
pub struct GridNode<T: Real> {
    pub phi: Vec<T>,
    pub z: Cx<T>,
    /// Unreduced last phase coordinate.
    pub t: T,
    pub x: Phase<T>,
    pub eigen: EigenPair<T>,
    /// |z_{k_s}(x_s(φ,z)) − z|.
    pub residual: T,
    /// min_{j≠k_s} |z_j(x_s(φ,z)) − z|.
    pub separation: T,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct InductiveState<T: Real> {
    pub depth: usize,
    pub n_s: usize,
    /// [−N_s′, N_s″].
    pub window: (i64, i64),
    pub z_center: Cx<T>,
    pub phi_center: Vec<T>,
    pub radius: T,
    /// Phase-order index of the tracked eigenvalue at the center node.
    pub k_s: usize,
    /// `nodes[0]` is the center (φ_s, z_s).
    pub nodes: Vec<GridNode<T>>,
    pub gamma: T,
    pub beta: Cx<T>,
    pub eta: Cx<T>,
    pub model: QuasiPeriodicModel<T>,
    pub grid: usize,
}

/// Offsets in (−r/2, r/2) for a g-point axis; the center comes first.
fn axis_offsets<T: Real>(g: usize, r: T) -> Vec<T> {
    if g <= 1 {
        return vec![T::zero()];
    }
    let half = r / T::c(2.0);
    let mut out = vec![T::zero()];
    for i in 0..g {
        let o = half
            * (T::c(2.0) * T::from_usize_lossy(i) / T::from_usize_lossy(g - 1) - T::one())
            * T::c(0.9);
        if o.abs() > T::epsilon() * r {
            out.push(o);
        }
    }
    out
}

/// Grid over Π = (φ_c + box) × arc around z_c, center first.
fn grid_points<T: Real>(phi_c: &[T], z_c: Cx<T>, r: T, g: usize) -> Vec<(Vec<T>, Cx<T>)> {
    let offs = axis_offsets(g, r);
    let mut phis: Vec<Vec<T>> = vec![phi_c.to_vec()];
    for axis in 0..phi_c.len() {
        let mut next = Vec::new();
        for p in &phis {
            for (i, o) in offs.iter().enumerate() {
                let mut q = p.clone();
                q[axis] += *o;
                if i == 0 {
                    next.insert(0, q);
                } else {
                    next.push(q);
                }
            }
        }
        // keep the all-center point at the front
        next.sort_by_key(|q| q.iter().zip(phi_c).any(|(a, b)| a != b));
        phis = next;
    }
    let mut out = Vec::with_capacity(phis.len() * offs.len());
    for p in &phis {
        for o in &offs {
            out.push((p.clone(), z_c * cis(*o)));
        }
    }
    out
}

fn solve_node<T: Real>(
    win: &Window<'_, T>,
    phi: &[T],
    z: Cx<T>,
    t0: T,
    reference: Cx<T>,
) -> Result<GridNode<T>> {
    let track = |x: &Phase<T>, r: Cx<T>| win.track(x, r);
    let root = solve_last_coord(&track, phi, z, t0, reference, MAX_NEWTON)?;
    let x = phase_with_last(phi, root.t);
    let (eigen, separation) = win.pair(&x, root.value)?;
    let residual = chordal(eigen.value, z);
    Ok(GridNode {
        phi: phi.to_vec(),
        z,
        t: root.t,
        x,
        eigen,
        residual,
        separation,
        iterations: root.iterations,
    })
}

impl<T: Real> InductiveState<T> {
    /// Depth-0 state on [−N₀, N₀]: the center node is located by a scan over
    /// the last phase coordinate, the other nodes by Newton from the center.
    #[allow(clippy::too_many_arguments)]
    pub fn initialize(
        model: QuasiPeriodicModel<T>,
        schedule: &ScaleSchedule<T>,
        phi0: Vec<T>,
        z0: Cx<T>,
        gamma: T,
        grid: usize,
        beta: Cx<T>,
        eta: Cx<T>,
    ) -> Result<Self> {
        let d = model.dim();
        if phi0.len() + 1 != d {
            return Err(CmvError::DimensionMismatch {
                expected: d - 1,
                got: phi0.len(),
            });
        }
        if !((z0.norm() - T::one()).abs() < T::c(1e-9)) {
            return Err(CmvError::InvalidInput(
                "z0 must lie on the unit circle".into(),
            ));
        }
        let n0 = schedule.n0;
        let window = (-(n0 as i64), n0 as i64);
        let win = Window::new(&model, window, beta, eta);
        // coarse scan of the last coordinate; starts whose eigenvector is
        // already small at the window edges come first
        let mut cands: Vec<(bool, T, T, Cx<T>)> = (0..INIT_SCAN)
            .into_par_iter()
            .map(|j| {
                let t = T::from_usize_lossy(j) / T::from_usize_lossy(INIT_SCAN);
                let pairs = eigensolve(&win.cmv(&phase_with_last(&phi0, t))?)?;
                Ok(pairs
                    .into_iter()
                    .map(|p| {
                        (
                            edge_mass(&p.vector) > T::c(1e-3),
                            chordal(p.value, z0),
                            t,
                            p.value,
                        )
                    })
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        cands.sort_by(|a, b| {
            a.0.cmp(&b.0)
                .then(a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
        });
        // among the solutions from the best starts keep the most central eigenvector
        let mut center: Option<(T, GridNode<T>)> = None;
        let mut last_err = None;
        for (_, _, t, v) in cands.iter().take(8) {
            match solve_node(&win, &phi0, z0, *t, *v) {
                Ok(n) if n.residual <= T::c(SOLVER_TOL) => {
                    let e = edge_mass(&n.eigen.vector);
                    if center.as_ref().is_none_or(|(be, _)| e < *be) {
                        center = Some((e, n));
                    }
                }
                Ok(n) => {
                    last_err = Some(CmvError::Numeric(format!(
                        "residual {:e} above tolerance",
                        f64_of(n.residual)
                    )))
                }
                Err(e) => last_err = Some(e),
            }
        }
        let center = center.map(|c| c.1).ok_or_else(|| {
            last_err.unwrap_or_else(|| CmvError::Numeric("no starting phase found".into()))
        })?;
        let radius = schedule.radius(0)?;
        let mut state = Self {
            depth: 0,
            n_s: n0,
            window,
            z_center: z0,
            phi_center: phi0.clone(),
            radius,
            k_s: center.eigen.index,
            nodes: vec![center],
            gamma,
            beta,
            eta,
            model,
            grid: grid.max(1),
        };
        state.fill_grid()?;
        Ok(state)
    }

    fn window_view(&self) -> Window<'_, T> {
        Window::new(&self.model, self.window, self.beta, self.eta)
    }

    /// Solves the non-center grid nodes from nodes[0].
    fn fill_grid(&mut self) -> Result<()> {
        let pts = grid_points(&self.phi_center, self.z_center, self.radius, self.grid);
        let c = self.nodes[0].clone();
        let win = self.window_view();
        let rest = pts[1..]
            .par_iter()
            .map(|(phi, z)| solve_node(&win, phi, *z, c.t, c.eigen.value))
            .collect::<Result<Vec<_>>>()?;
        self.nodes.truncate(1);
        self.nodes.extend(rest);
        Ok(())
    }

    /// x_s(φ, z), continued from the nearest grid node.
    pub fn phase_map(&self, phi: &[T], z: Cx<T>) -> Result<GridNode<T>> {
        let node = self
            .nodes
            .iter()
            .min_by(|a, b| {
                let da = node_distance(a, phi, z);
                let db = node_distance(b, phi, z);
                da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal)
            })
            .ok_or_else(|| CmvError::InvalidInput("state has no grid nodes".into()))?;
        solve_node(&self.window_view(), phi, z, node.t, node.eigen.value)
    }

    pub fn max_residual(&self) -> T {
        self.nodes
            .iter()
            .map(|n| n.residual)
            .fold(T::zero(), T::max)
    }

    pub fn min_separation(&self) -> T {
        self.nodes
            .iter()
            .map(|n| n.separation)
            .fold(T::infinity(), T::min)
    }

    /// All grid phases are real, hence inside 𝕋^d_{h/2}.
    pub fn in_strip(&self) -> bool {
        let half = self.model.f.strip_width() / T::c(2.0);
        self.nodes.iter().all(|n| n.x.imag_sup() <= half)
    }

    pub fn summary(&self) -> StateSummary {
        StateSummary {
            depth: self.depth,
            n_s: self.n_s,
            window: self.window,
            z_center: cx_pair(self.z_center),
            phi_center: self.phi_center.iter().map(|v| f64_of(*v)).collect(),
            radius: f64_of(self.radius),
            k_s: self.k_s,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeSummary {
                    phi: n.phi.iter().map(|v| f64_of(*v)).collect(),
                    z: cx_pair(n.z),
                    x: n.x.coords().iter().map(|v| f64_of(*v)).collect(),
                    residual: f64_of(n.residual),
                    separation: f64_of(n.separation),
                    iterations: n.iterations,
                })
                .collect(),
        }
    }
}

/// Largest |u| on the four outermost sites at either end.
fn edge_mass<T: Real>(u: &SiteVector<T>) -> T {
    (0..4)
        .flat_map(|i| [u.first + i, u.last() - i])
        .map(|s| u.at(s).norm())
        .fold(T::zero(), T::max)
}

fn node_distance<T: Real>(n: &GridNode<T>, phi: &[T], z: Cx<T>) -> T {
    let dp = n
        .phi
        .iter()
        .zip(phi)
        .map(|(a, b)| (*a - *b).abs())
        .fold(T::zero(), T::max);
    dp.max(chordal(n.z, z))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeSummary {
    pub phi: Vec<f64>,
    pub z: (f64, f64),
    pub x: Vec<f64>,
    pub residual: f64,
    pub separation: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StateSummary {
    pub depth: usize,
    pub n_s: usize,
    pub window: (i64, i64),
    pub z_center: (f64, f64),
    pub phi_center: Vec<f64>,
    pub radius: f64,
    pub k_s: usize,
    pub nodes: Vec<NodeSummary>,
}

// ---------------------------------------------------------------------------
// conditions (A)-(D)

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionA {
    pub max_residual: f64,
    pub solver_tolerance: f64,
    pub min_separation: f64,
    /// exp(−N_s^δ̂)
    pub separation_floor: f64,
    pub in_strip: bool,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionB {
    /// max over nodes and |n| ≥ N_s/4 of log|u(n)| + γ|n|/10.
    pub worst_margin: f64,
    pub worst_site: i64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum ConditionC {
    Rejected {
        reason: String,
    },
    Estimated {
        h_hat: Vec<f64>,
        /// dist(ĥ, Υ_s) and its floor exp(−N_s^μ̂).
        orbit_distance: f64,
        orbit_floor: f64,
        /// exp(−N_s^β̂/2)
        threshold: f64,
        /// exp(−N_s^{2δ̂})
        target: f64,
        estimate: ExceptionalSetEstimate,
        consistent: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum ConditionD {
    Rejected {
        reason: String,
    },
    Estimated {
        h0: Vec<(f64, f64)>,
        /// −N_s^μ̂/2
        log_threshold: f64,
        target: f64,
        estimate: ExceptionalSetEstimate,
        /// Largest relative disagreement between step h and 2h differences.
        richardson_max: f64,
        consistent: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AbcdReport {
    pub depth: usize,
    pub n_s: usize,
    pub a: ConditionA,
    pub b: ConditionB,
    pub c: ConditionC,
    pub d: ConditionD,
}

impl AbcdReport {
    pub fn all_hold(&self) -> bool {
        self.a.holds
            && self.b.holds
            && matches!(
                self.c,
                ConditionC::Estimated {
                    consistent: true,
                    ..
                }
            )
            && matches!(
                self.d,
                ConditionD::Estimated {
                    consistent: true,
                    ..
                }
            )
    }

    /// First condition that does not hold, with its inequality.
    pub fn first_failure(&self) -> Option<String> {
        if !self.a.holds {
            return Some(format!(
                "(A): max residual {:e} (tolerance {:e}), min separation {:e} vs floor exp(-N^delta_hat) = {:e}, in strip {}",
                self.a.max_residual, self.a.solver_tolerance, self.a.min_separation, self.a.separation_floor, self.a.in_strip
            ));
        }
        if !self.b.holds {
            return Some(format!(
                "(B): log|u(n)| + gamma|n|/10 = {:e} > 0 at n = {}",
                self.b.worst_margin, self.b.worst_site
            ));
        }
        match &self.c {
            ConditionC::Rejected { reason } => return Some(format!("(C): {reason}")),
            ConditionC::Estimated { consistent: false, estimate, target, .. } => {
                return Some(format!(
                    "(C): exceptional measure {} (Wilson low {:e}) exceeds exp(-N^(2 delta_hat)) = {:e}",
                    estimate.estimate, estimate.wilson_low, target
                ))
            }
            _ => {}
        }
        match &self.d {
            ConditionD::Rejected { reason } => Some(format!("(D): {reason}")),
            ConditionD::Estimated { consistent: false, estimate, target, .. } => Some(format!(
                "(D): exceptional measure {} (Wilson low {:e}) exceeds exp(-N^(2 delta_hat)) = {:e}",
                estimate.estimate, estimate.wilson_low, target
            )),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct AbcdOptions<T: Real> {
    pub samples: usize,
    pub seed: u64,
    /// Probe shift for (C); drawn at random when absent.
    pub h_hat: Option<Vec<T>>,
    /// Unit direction for (D); drawn at random when absent.
    pub h0: Option<Vec<Cx<T>>>,
}

/// min_{|n| ≤ 3N/2} ‖ĥ − nω‖ in the torus sup-norm.
pub fn orbit_distance<T: Real>(h: &[T], omega: &Frequency<T>, n: usize) -> T {
    let m = (3 * n / 2) as i64;
    (-m..=m)
        .map(|k| {
            let kk = T::from_i64_lossy(k);
            h.iter()
                .zip(omega.coords())
                .map(|(a, w)| dist_to_integer(*a - kk * *w))
                .fold(T::zero(), T::max)
        })
        .fold(T::infinity(), T::min)
}

/// Largest q with q² < n, so that |n′| < n^{1/2} ⇔ |n′| ≤ q.
fn sqrt_bound(n: usize) -> i64 {
    let mut q = 0i64;
    while ((q + 1) * (q + 1)) < n as i64 {
        q += 1;
    }
    q
}

/// (φ, z) sample i in the half box around the state's center.
fn sample_pi<T: Real>(state: &InductiveState<T>, seed: u64, i: u64) -> (Vec<T>, Cx<T>) {
    let mut rng = stream_rng(seed, i);
    let half = state.radius / T::c(2.0);
    let phi: Vec<T> = state
        .phi_center
        .iter()
        .map(|p| *p + sample_uniform(&mut rng, -half, half))
        .collect();
    let z = state.z_center * cis(sample_uniform(&mut rng, -half, half));
    (phi, z)
}

/// Checks (A)-(D) at the state's depth.
pub fn verify_conditions_abcd<T: Real>(
    state: &InductiveState<T>,
    schedule: &ScaleSchedule<T>,
    opts: &AbcdOptions<T>,
) -> Result<AbcdReport> {
    let n = state.n_s;
    let nn = T::from_usize_lossy(n);
    let dim = state.model.dim();

    let sep_floor = (-nn.powf(schedule.delta_hat())).exp();
    let max_residual = state.max_residual();
    let min_sep = state.min_separation();
    let in_strip = state.in_strip();
    let a = ConditionA {
        max_residual: f64_of(max_residual),
        solver_tolerance: SOLVER_TOL,
        min_separation: f64_of(min_sep),
        separation_floor: f64_of(sep_floor),
        in_strip,
        holds: max_residual <= T::c(SOLVER_TOL) && min_sep > sep_floor && in_strip,
    };

    let mut worst = (T::neg_infinity(), 0i64);
    for node in &state.nodes {
        let u = &node.eigen.vector;
        for s in u.first..=u.last() {
            if 4 * s.unsigned_abs() as usize >= n {
                let m = u.at(s).norm().ln() + state.gamma * T::from_i64_lossy(s.abs()) / T::c(10.0);
                if m > worst.0 {
                    worst = (m, s);
                }
            }
        }
    }
    let b = ConditionB {
        worst_margin: f64_of(worst.0),
        worst_site: worst.1,
        holds: worst.0 <= T::zero(),
    };

    let target = (-nn.powf(T::c(2.0) * schedule.delta_hat())).exp();
    let c = condition_c(state, schedule, opts, target)?;
    let d = condition_d(state, schedule, opts, target, dim)?;
    Ok(AbcdReport {
        depth: state.depth,
        n_s: n,
        a,
        b,
        c,
        d,
    })
}

fn condition_c<T: Real>(
    state: &InductiveState<T>,
    schedule: &ScaleSchedule<T>,
    opts: &AbcdOptions<T>,
    target: T,
) -> Result<ConditionC> {
    let n = state.n_s;
    let nn = T::from_usize_lossy(n);
    let dim = state.model.dim();
    let omega = &state.model.omega;
    let floor = (-nn.powf(schedule.mu_hat())).exp();
    let h_hat = match &opts.h_hat {
        Some(h) => {
            if h.len() != dim {
                return Ok(ConditionC::Rejected {
                    reason: format!("probe has dimension {}, expected {dim}", h.len()),
                });
            }
            let dist = orbit_distance(h, omega, n);
            if !(dist >= floor) {
                return Ok(ConditionC::Rejected {
                    reason: format!(
                        "dist(h_hat, Upsilon_s) = {:e} is below exp(-N^mu_hat) = {:e}",
                        f64_of(dist),
                        f64_of(floor)
                    ),
                });
            }
            h.clone()
        }
        None => {
            let mut rng = stream_rng(derive_seed(opts.seed, 0xC0), 0);
            let mut found = None;
            for _ in 0..1000 {
                let p: Phase<T> = sample_phase(&mut rng, dim);
                if orbit_distance(p.coords(), omega, n) >= floor {
                    found = Some(p.coords().to_vec());
                    break;
                }
            }
            match found {
                Some(h) => h,
                None => {
                    return Ok(ConditionC::Rejected {
                        reason: "no admissible probe found in 1000 draws".into(),
                    })
                }
            }
        }
    };
    let threshold = (-nn.powf(schedule.beta_hat()) / T::c(2.0)).exp();
    let q = sqrt_bound(n);
    let seed = derive_seed(opts.seed, 0xC1);
    let hits = (0..opts.samples as u64)
        .into_par_iter()
        .map(|i| {
            let (phi, z) = sample_pi(state, seed, i);
            let x = state.phase_map(&phi, z)?.x.translated(&h_hat);
            let mut worst = T::neg_infinity();
            for n1 in -q..=q {
                for n2 in -q..=q {
                    let w = Window::new(
                        &state.model,
                        (-(n as i64) + n1, n as i64 + n2),
                        state.beta,
                        state.eta,
                    );
                    let d = crate::spectral::distance_to_spectrum(&w.values(&x)?, z);
                    worst = worst.max(d);
                }
            }
            Ok(worst < threshold)
        })
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|h| *h)
        .count();
    let estimate = ExceptionalSetEstimate::new(
        "max over |n'|,|n''| < N^(1/2) of dist(sigma(E(x_s(phi,z) + h_hat)), z) < exp(-N^beta_hat/2)",
        hits,
        opts.samples,
    );
    let consistent = estimate.wilson_low <= f64_of(target);
    Ok(ConditionC::Estimated {
        h_hat: h_hat.iter().map(|v| f64_of(*v)).collect(),
        orbit_distance: f64_of(orbit_distance(&h_hat, omega, n)),
        orbit_floor: f64_of(floor),
        threshold: f64_of(threshold),
        target: f64_of(target),
        estimate,
        consistent,
    })
}

/// ∂z_k/∂x_j by central differences at step h.
fn eigen_gradient<T: Real>(
    win: &Window<'_, T>,
    x: &Phase<T>,
    reference: Cx<T>,
    h: T,
) -> Result<Vec<Cx<T>>> {
    let dim = x.dim();
    (0..dim)
        .map(|j| {
            let mut e = vec![T::zero(); dim];
            e[j] = h;
            let p = win.track(&x.translated(&e), reference)?;
            e[j] = -h;
            let m = win.track(&x.translated(&e), reference)?;
            Ok((p - m) / cx(h + h, T::zero()))
        })
        .collect()
}

fn condition_d<T: Real>(
    state: &InductiveState<T>,
    schedule: &ScaleSchedule<T>,
    opts: &AbcdOptions<T>,
    target: T,
    dim: usize,
) -> Result<ConditionD> {
    let h0 = match &opts.h0 {
        Some(h) => {
            if h.len() != dim {
                return Ok(ConditionD::Rejected {
                    reason: format!("h0 has dimension {}, expected {dim}", h.len()),
                });
            }
            let nrm = h.iter().map(|v| v.norm_sqr()).sum::<T>().sqrt();
            if !((nrm - T::one()).abs() <= T::c(1e-9)) {
                return Ok(ConditionD::Rejected {
                    reason: format!("h0 is not a unit vector (norm {:e})", f64_of(nrm)),
                });
            }
            h.clone()
        }
        None => {
            let mut rng = stream_rng(derive_seed(opts.seed, 0xD0), 0);
            let raw: Vec<Cx<T>> = (0..dim)
                .map(|_| {
                    cx(
                        sample_uniform(&mut rng, -T::one(), T::one()),
                        sample_uniform(&mut rng, -T::one(), T::one()),
                    )
                })
                .collect();
            let nrm = raw.iter().map(|v| v.norm_sqr()).sum::<T>().sqrt();
            raw.into_iter().map(|v| v / cx(nrm, T::zero())).collect()
        }
    };
    let nn = T::from_usize_lossy(state.n_s);
    let log_threshold = -nn.powf(schedule.mu_hat()) / T::c(2.0);
    let win = state.window_view();
    let h = T::c(FD_STEP);
    let seed = derive_seed(opts.seed, 0xD1);
    let per = (0..opts.samples as u64)
        .into_par_iter()
        .map(|i| {
            let (phi, z) = sample_pi(state, seed, i);
            let node = state.phase_map(&phi, z)?;
            let g1 = eigen_gradient(&win, &node.x, node.eigen.value, h)?;
            let g2 = eigen_gradient(&win, &node.x, node.eigen.value, h + h)?;
            let mut rich = T::zero();
            for (a, b) in g1.iter().zip(&g2) {
                let scale = a.norm().max(T::c(1e-300));
                rich = rich.max((*a - *b).norm() / scale);
            }
            let inner: Cx<T> = g1.iter().zip(&h0).fold(czero(), |s, (g, v)| s + *g * *v);
            Ok((inner.norm().ln() < log_threshold, rich))
        })
        .collect::<Result<Vec<(bool, T)>>>()?;
    let hits = per.iter().filter(|p| p.0).count();
    let richardson_max = per.iter().map(|p| p.1).fold(T::zero(), T::max);
    let estimate = ExceptionalSetEstimate::new(
        "log|<grad z(x_s(phi,z)), h0>| < -N^mu_hat/2",
        hits,
        opts.samples,
    );
    let consistent = estimate.wilson_low <= f64_of(target);
    Ok(ConditionD::Estimated {
        h0: h0.iter().map(|v| cx_pair(*v)).collect(),
        log_threshold: f64_of(log_threshold),
        target: f64_of(target),
        estimate,
        richardson_max: f64_of(richardson_max),
        consistent,
    })
}

// ---------------------------------------------------------------------------
// finite-scale localization step

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub value: f64,
    pub bound: f64,
    pub holds: bool,
}

impl Verdict {
    fn below<T: Real>(value: T, bound: T) -> Self {
        Self {
            value: f64_of(value),
            bound: f64_of(bound),
            holds: value < bound,
        }
    }

    fn above<T: Real>(value: T, bound: T) -> Self {
        Self {
            value: f64_of(value),
            bound: f64_of(bound),
            holds: value > bound,
        }
    }
}

/// Conclusions (1)-(4) at one phase x.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepVerdicts {
    pub phase: Vec<f64>,
    /// |x − x₀| in the torus sup-norm.
    pub displacement: f64,
    /// (1) |z_k^{union}(x) − z_{k₀}(x)| < exp(−γN₀/40)
    pub tracking: Verdict,
    /// (2) min_{j≠k} |z_j − z_k| > exp(−N₀^β̂)/8
    pub separation: Verdict,
    /// (3) max_{|s| ≥ 3N₀/4} log|u(s)| + γ|s|/20 < 0
    pub decay: Verdict,
    /// (4) ‖u^{union}(x) − u^{[−N₀′,N₀″]}(x)‖ < exp(−γN₀/40)
    pub closeness: Verdict,
}

impl StepVerdicts {
    pub fn all_hold(&self) -> bool {
        self.tracking.holds && self.separation.holds && self.decay.holds && self.closeness.holds
    }

    pub fn first_failure(&self) -> Option<String> {
        let list = [
            ("(1) |z_k(x) - z_k0(x)| < exp(-gamma N0/40)", &self.tracking),
            ("(2) separation > exp(-N0^beta_hat)/8", &self.separation),
            (
                "(3) log|u(s)| + gamma|s|/20 < 0 for |s| >= 3N0/4",
                &self.decay,
            ),
            (
                "(4) ||u_union - u_inner|| < exp(-gamma N0/40)",
                &self.closeness,
            ),
        ];
        list.iter().find(|(_, v)| !v.holds).map(|(name, v)| {
            format!(
                "{name}: value {:e} vs bound {:e} at x = {:?}",
                v.value, v.bound, self.phase
            )
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalizationStep {
    pub k0: usize,
    pub z_k0: (f64, f64),
    /// (i) |z_{k₀}(x₀) − z₀| < exp(−2N₀^β̂)
    pub hypothesis_i: Verdict,
    /// (ii) max edge value at i = 0..3 < exp(−2N₀^β̂)
    pub hypothesis_ii: Verdict,
    pub inner: (i64, i64),
    pub union: (i64, i64),
    pub windows: Vec<(i64, (i64, i64))>,
    pub verdicts: Vec<StepVerdicts>,
    pub all_hold: bool,
}

impl LocalizationStep {
    pub fn first_failure(&self) -> Option<String> {
        self.verdicts.iter().find_map(|v| v.first_failure())
    }
}

#[derive(Clone, Debug)]
pub struct LocalizationInput<'a, T: Real> {
    pub model: &'a QuasiPeriodicModel<T>,
    pub x0: Phase<T>,
    pub z0: Cx<T>,
    pub n0: usize,
    /// [−N₀′, N₀″]
    pub inner: (i64, i64),
    /// Outer scale n: sites 3N₀/2 < |m| ≤ n get a window J_m.
    pub n_outer: usize,
    /// Per-m windows; searched for when absent.
    pub windows: Option<Vec<(i64, (i64, i64))>>,
    pub beta_hat: T,
    pub gamma: T,
    pub beta: Cx<T>,
    pub eta: Cx<T>,
    /// Phases always checked besides x₀.
    pub probes: Vec<Phase<T>>,
    /// Extra phases drawn uniformly with |x − x₀| < exp(−2N₀^β̂).
    pub extra_samples: usize,
    pub seed: u64,
}

/// Sites m with 3N₀/2 < |m| ≤ n, in increasing order.
fn outer_sites(n0: usize, n: usize) -> Vec<i64> {
    let n = n as i64;
    (-n..=n).filter(|m| 2 * m.abs() > 3 * n0 as i64).collect()
}

/// For each 3N₀/2 < |m| ≤ n, a window J_m = m + [−N₀+n′, N₀+n″] with
/// |n′|,|n″| < N₀^{1/2} and dist(σ(𝓔_{J_m}(x₀)), z₀) ≥ exp(−N₀^β̂).
#[allow(clippy::too_many_arguments)]
pub fn find_good_windows<T: Real>(
    model: &QuasiPeriodicModel<T>,
    x0: &Phase<T>,
    z0: Cx<T>,
    n0: usize,
    n_outer: usize,
    beta_hat: T,
    beta: Cx<T>,
    eta: Cx<T>,
) -> Result<Vec<(i64, (i64, i64))>> {
    let floor = (-T::from_usize_lossy(n0).powf(beta_hat)).exp();
    let q = sqrt_bound(n0);
    let mut shifts: Vec<(i64, i64)> = (-q..=q)
        .flat_map(|a| (-q..=q).map(move |b| (a, b)))
        .collect();
    shifts.sort_by_key(|(a, b)| (a.abs() + b.abs(), *a, *b));
    let n0i = n0 as i64;
    outer_sites(n0, n_outer)
        .into_par_iter()
        .map(|m| {
            let mut best = T::neg_infinity();
            for (a, b) in &shifts {
                let j = (m - n0i + a, m + n0i + b);
                let d = crate::spectral::distance_to_spectrum(&Window::new(model, j, beta, eta).values(x0)?, z0);
                if d >= floor {
                    return Ok((m, j));
                }
                best = best.max(d);
            }
            Err(CmvError::Hypothesis(format!(
                "no window J_m for m = {m}: best dist(sigma(E_J(x0)), z0) = {:e} < exp(-N0^beta_hat) = {:e}",
                f64_of(best),
                f64_of(floor)
            )))
        })
        .collect()
}

fn union_window(n0: usize, inner: (i64, i64), windows: &[(i64, (i64, i64))]) -> (i64, i64) {
    let c = (3 * n0 / 2) as i64;
    let mut lo = (-c).min(inner.0);
    let mut hi = c.max(inner.1);
    for (_, (a, b)) in windows {
        lo = lo.min(*a);
        hi = hi.max(*b);
    }
    (lo, hi)
}

/// Verifies hypotheses (i)-(ii) on the inner eigenpair, then conclusions
/// (1)-(4) on the union window at x₀, the probes and random displacements.
pub fn finite_localization_step<T: Real>(
    inp: &LocalizationInput<'_, T>,
) -> Result<LocalizationStep> {
    let n0f = T::from_usize_lossy(inp.n0);
    let eps = (-(T::c(2.0)) * n0f.powf(inp.beta_hat)).exp();
    let inner = Window::new(inp.model, inp.inner, inp.beta, inp.eta);
    let (p0, _) = inner.pair(&inp.x0, inp.z0)?;
    let dist0 = chordal(p0.value, inp.z0);
    let hyp_i = Verdict::below(dist0, eps);
    if !hyp_i.holds {
        return Err(CmvError::Hypothesis(format!(
            "(i) |z_k0(x0) - z0| = {:e} is not below exp(-2 N0^beta_hat) = {:e}",
            f64_of(dist0),
            f64_of(eps)
        )));
    }
    let (a, b) = inp.inner;
    let mut edge = (T::zero(), a);
    for i in 0..4 {
        for s in [a + i, b - i] {
            let v = p0.vector.at(s).norm();
            if v > edge.0 {
                edge = (v, s);
            }
        }
    }
    let hyp_ii = Verdict::below(edge.0, eps);
    if !hyp_ii.holds {
        return Err(CmvError::Hypothesis(format!(
            "(ii) |u_k0(x0; {})| = {:e} is not below exp(-2 N0^beta_hat) = {:e}",
            edge.1,
            f64_of(edge.0),
            f64_of(eps)
        )));
    }
    let windows = match &inp.windows {
        Some(w) => w.clone(),
        None => find_good_windows(
            inp.model,
            &inp.x0,
            inp.z0,
            inp.n0,
            inp.n_outer,
            inp.beta_hat,
            inp.beta,
            inp.eta,
        )?,
    };
    let union = union_window(inp.n0, inp.inner, &windows);
    let outer = Window::new(inp.model, union, inp.beta, inp.eta);

    let mut phases = vec![inp.x0.clone()];
    phases.extend(inp.probes.iter().cloned());
    let dim = inp.x0.dim();
    let radius = eps * T::c(0.99);
    for i in 0..inp.extra_samples as u64 {
        let mut rng = stream_rng(inp.seed, i);
        let h: Vec<T> = (0..dim)
            .map(|_| sample_uniform(&mut rng, -radius, radius))
            .collect();
        phases.push(inp.x0.translated(&h));
    }

    let track_bound = (-inp.gamma * n0f / T::c(40.0)).exp();
    let sep_bound = (-n0f.powf(inp.beta_hat)).exp() / T::c(8.0);
    let tail = (3 * inp.n0).div_ceil(4) as i64;
    let verdicts = phases
        .par_iter()
        .map(|x| {
            let (small, _) = inner.pair(x, p0.value)?;
            let (big, sep) = outer.pair(x, small.value)?;
            let tracking = Verdict::below(chordal(big.value, small.value), track_bound);
            let separation = Verdict::above(sep, sep_bound);
            let mut worst = T::neg_infinity();
            for s in union.0..=union.1 {
                if s.abs() >= tail {
                    let m = big.vector.at(s).norm().ln()
                        + inp.gamma * T::from_i64_lossy(s.abs()) / T::c(20.0);
                    worst = worst.max(m);
                }
            }
            let decay = Verdict::below(worst, T::zero());
            let gap = small.vector.distance(&aligned(&small.vector, &big.vector));
            let closeness = Verdict::below(gap, track_bound);
            Ok(StepVerdicts {
                phase: x.coords().iter().map(|v| f64_of(*v)).collect(),
                displacement: f64_of(x.distance(&inp.x0)),
                tracking,
                separation,
                decay,
                closeness,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let all_hold = verdicts.iter().all(StepVerdicts::all_hold);
    Ok(LocalizationStep {
        k0: p0.index,
        z_k0: cx_pair(p0.value),
        hypothesis_i: hyp_i,
        hypothesis_ii: hyp_ii,
        inner: inp.inner,
        union,
        windows,
        verdicts,
        all_hold,
    })
}

// ---------------------------------------------------------------------------
// one-depth advance

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum AdvanceStage {
    Preconditions,
    WindowAssembly,
    LemmaHypotheses,
    Continuation,
    BulkDisplacement,
    BulkEigenvector,
    Separation,
    LemmaConclusions,
}

#[derive(Clone, Debug, Default)]
pub struct AdvanceOptions {
    /// Run (A)-(D) first and refuse to advance if any fails.
    pub require_conditions: bool,
    pub samples: usize,
    pub seed: u64,
    /// Random displaced phases checked in the lemma conclusions.
    pub extra_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdvanceReport {
    pub from_depth: usize,
    pub n_s: usize,
    pub n_next: usize,
    pub window: (i64, i64),
    pub phi_next: Vec<f64>,
    pub max_displacement: f64,
    /// exp(−γN_s/50)
    pub displacement_bound: f64,
    pub max_vector_gap: f64,
    /// exp(−γN_s/500)
    pub vector_bound: f64,
    pub min_separation: f64,
    /// exp(−N_{s+1}^δ̂)
    pub separation_floor: f64,
    pub step: LocalizationStep,
    pub conditions: Option<AbcdReport>,
}

#[derive(Clone, Debug)]
pub enum AdvanceOutcome<T: Real> {
    NoOp {
        reason: String,
    },
    Advanced(Box<InductiveState<T>>, Box<AdvanceReport>),
    Failed {
        stage: AdvanceStage,
        inequality: String,
    },
}

impl<T: Real> AdvanceOutcome<T> {
    pub fn failed_stage(&self) -> Option<AdvanceStage> {
        match self {
            Self::Failed { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

fn fail<T: Real>(stage: AdvanceStage, inequality: String) -> Result<AdvanceOutcome<T>> {
    Ok(AdvanceOutcome::Failed { stage, inequality })
}

/// One step s → s+1: window assembly, continuation of x_s on the new window,
/// the bulk estimates, separation, and the lemma conclusions, in that order.
pub fn inductive_advance<T: Real>(
    state: &InductiveState<T>,
    schedule: &ScaleSchedule<T>,
    opts: &AdvanceOptions,
) -> Result<AdvanceOutcome<T>> {
    if state.depth >= schedule.s_max {
        return Ok(AdvanceOutcome::NoOp {
            reason: format!(
                "depth {} already at s_max = {}",
                state.depth, schedule.s_max
            ),
        });
    }
    let conditions = if opts.require_conditions {
        let rep = verify_conditions_abcd(
            state,
            schedule,
            &AbcdOptions {
                samples: opts.samples,
                seed: opts.seed,
                h_hat: None,
                h0: None,
            },
        )?;
        if let Some(msg) = rep.first_failure() {
            return fail(AdvanceStage::Preconditions, msg);
        }
        Some(rep)
    } else {
        None
    };
    let n_s = state.n_s;
    let n_next = schedule.scale(state.depth + 1)?;
    let beta_hat = schedule.beta_hat();
    let z1 = state.z_center;

    // window assembly: the center first, then nearby φ inside the box
    let mut attempts = vec![state.nodes[0].clone()];
    let seed = derive_seed(opts.seed, 0xA55E);
    for i in 0..16u64 {
        let (phi, _) = sample_pi(state, seed, i);
        attempts.push(state.phase_map(&phi, z1)?);
    }
    let mut assembled = None;
    let mut last = String::new();
    for node in &attempts {
        match find_good_windows(
            &state.model,
            &node.x,
            z1,
            n_s,
            n_next,
            beta_hat,
            state.beta,
            state.eta,
        ) {
            Ok(w) => {
                assembled = Some((node.clone(), w));
                break;
            }
            Err(CmvError::Hypothesis(m)) => last = m,
            Err(e) => return Err(e),
        }
    }
    let Some((center_old, windows)) = assembled else {
        return fail(AdvanceStage::WindowAssembly, last);
    };
    let union = union_window(n_s, state.window, &windows);

    // hypotheses of the localization lemma on the inner eigenpair
    let step_input = LocalizationInput {
        model: &state.model,
        x0: center_old.x.clone(),
        z0: z1,
        n0: n_s,
        inner: state.window,
        n_outer: n_next,
        windows: Some(windows.clone()),
        beta_hat,
        gamma: state.gamma,
        beta: state.beta,
        eta: state.eta,
        probes: Vec::new(),
        extra_samples: 0,
        seed: derive_seed(opts.seed, 0x57E9),
    };
    if let Err(e) = finite_localization_step(&step_input) {
        return match e {
            CmvError::Hypothesis(m) => fail(AdvanceStage::LemmaHypotheses, m),
            other => Err(other),
        };
    }

    // continuation on the new window
    let new_win = Window::new(&state.model, union, state.beta, state.eta);
    let radius = schedule.radius(state.depth + 1)?;
    let pts = grid_points(&center_old.phi, z1, radius, state.grid);
    let solved = pts
        .par_iter()
        .map(
            |(phi, z)| -> Result<std::result::Result<(GridNode<T>, GridNode<T>), String>> {
                let old = state.phase_map(phi, *z)?;
                let reference = new_win.track(&old.x, *z)?;
                match solve_node(&new_win, phi, *z, old.t, reference) {
                    Ok(n) if n.residual <= T::c(SOLVER_TOL) => Ok(Ok((old, n))),
                    Ok(n) => Ok(Err(format!(
                        "|z_k(x_(s+1)) - z| = {:e} above solver tolerance {:e} at z = {:?}",
                        f64_of(n.residual),
                        SOLVER_TOL,
                        cx_pair(*z)
                    ))),
                    Err(CmvError::Numeric(m)) => Ok(Err(m)),
                    Err(e) => Err(e),
                }
            },
        )
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::with_capacity(solved.len());
    for s in solved {
        match s {
            Ok(p) => pairs.push(p),
            Err(m) => return fail(AdvanceStage::Continuation, m),
        }
    }

    let ns = T::from_usize_lossy(n_s);
    let disp_bound = (-state.gamma * ns / T::c(50.0)).exp();
    let mut max_disp = T::zero();
    for (old, new) in &pairs {
        let d = new.x.distance(&old.x);
        max_disp = max_disp.max(d);
        if !(d < disp_bound) {
            return fail(
                AdvanceStage::BulkDisplacement,
                format!(
                    "|x_(s+1) - x_s| = {:e} is not below exp(-gamma N_s/50) = {:e} at phi = {:?}, z = {:?}",
                    f64_of(d),
                    f64_of(disp_bound),
                    old.phi.iter().map(|v| f64_of(*v)).collect::<Vec<_>>(),
                    cx_pair(old.z)
                ),
            );
        }
    }

    let vec_bound = (-state.gamma * ns / T::c(500.0)).exp();
    let mut max_gap = T::zero();
    for (old, new) in &pairs {
        let (u_old, _) = new_win.pair(&old.x, new.eigen.value)?;
        let gap = new
            .eigen
            .vector
            .distance(&aligned(&new.eigen.vector, &u_old.vector));
        max_gap = max_gap.max(gap);
        if !(gap < vec_bound) {
            return fail(
                AdvanceStage::BulkEigenvector,
                format!(
                    "||u(x_(s+1)) - u(x_s)|| = {:e} is not below exp(-gamma N_s/500) = {:e}",
                    f64_of(gap),
                    f64_of(vec_bound)
                ),
            );
        }
    }

    let sep_floor = (-T::from_usize_lossy(n_next).powf(schedule.delta_hat())).exp();
    let min_sep = pairs
        .iter()
        .map(|(_, n)| n.separation)
        .fold(T::infinity(), T::min);
    if !(min_sep > sep_floor) {
        return fail(
            AdvanceStage::Separation,
            format!(
                "min_(j != k) |z_j - z| = {:e} is not above exp(-N_(s+1)^delta_hat) = {:e}",
                f64_of(min_sep),
                f64_of(sep_floor)
            ),
        );
    }

    let step = finite_localization_step(&LocalizationInput {
        probes: pairs.iter().map(|(_, n)| n.x.clone()).collect(),
        extra_samples: opts.extra_samples,
        ..step_input
    })?;
    if !step.all_hold {
        return fail(
            AdvanceStage::LemmaConclusions,
            step.first_failure().unwrap_or_default(),
        );
    }

    let nodes: Vec<GridNode<T>> = pairs.into_iter().map(|(_, n)| n).collect();
    let next = InductiveState {
        depth: state.depth + 1,
        n_s: n_next,
        window: union,
        z_center: z1,
        phi_center: center_old.phi.clone(),
        radius,
        k_s: nodes[0].eigen.index,
        nodes,
        gamma: state.gamma,
        beta: state.beta,
        eta: state.eta,
        model: state.model.clone(),
        grid: state.grid,
    };
    let report = AdvanceReport {
        from_depth: state.depth,
        n_s,
        n_next,
        window: union,
        phi_next: center_old.phi.iter().map(|v| f64_of(*v)).collect(),
        max_displacement: f64_of(max_disp),
        displacement_bound: f64_of(disp_bound),
        max_vector_gap: f64_of(max_gap),
        vector_bound: f64_of(vec_bound),
        min_separation: f64_of(min_sep),
        separation_floor: f64_of(sep_floor),
        step,
        conditions,
    };
    Ok(AdvanceOutcome::Advanced(Box::new(next), Box::new(report)))
}

// ---------------------------------------------------------------------------
// interval coverage

#[derive(Clone, Debug)]
pub struct CoverageOptions<T: Real> {
    /// Arc [θ₁, θ₂]; a span of 2π or more is the full circle.
    pub arc: (T, T),
    pub grid: usize,
    /// Window [−N, N].
    pub n: usize,
    pub tol: T,
    pub phase_samples: usize,
    pub seed: u64,
    pub beta: Cx<T>,
    pub eta: Cx<T>,
    /// Newton steps on the last phase coordinate for points not covered by sampling.
    pub refine_steps: usize,
}

impl<T: Real> CoverageOptions<T> {
    pub fn new(arc: (T, T), grid: usize, n: usize, tol: T) -> Self {
        Self {
            arc,
            grid,
            n,
            tol,
            phase_samples: 16,
            seed: 0,
            beta: cone(),
            eta: cone(),
            refine_steps: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoveragePoint {
    pub theta: f64,
    pub covered: bool,
    pub best_dist: f64,
    pub phase_x: Vec<f64>,
    /// max |u| over the two outermost sites at each end.
    pub edge_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageScan {
    pub points: Vec<CoveragePoint>,
    /// Maximal covered sub-arcs (θ_start, θ_end) between grid points; θ_end may exceed 2π after a wrap.
    pub arcs: Vec<(f64, f64)>,
    pub gaps: Vec<(f64, f64)>,
    pub full_circle: bool,
}

impl CoverageScan {
    /// "theta,covered,best_dist,phase_x1,…" lines.
    pub fn to_csv(&self) -> String {
        let d = self.points.first().map(|p| p.phase_x.len()).unwrap_or(0);
        let mut out = String::from("theta,covered,best_dist");
        for j in 1..=d {
            let _ = write!(out, ",phase_x{j}");
        }
        out.push('\n');
        for p in &self.points {
            let _ = write!(out, "{},{},{}", p.theta, u8::from(p.covered), p.best_dist);
            for v in &p.phase_x {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

fn runs(flags: &[bool], thetas: &[f64], want: bool, cyclic: bool) -> Vec<(f64, f64)> {
    let n = flags.len();
    if n == 0 {
        return Vec::new();
    }
    if flags.iter().all(|f| *f == want) {
        let span = if cyclic {
            thetas[0] + 2.0 * std::f64::consts::PI
        } else {
            thetas[n - 1]
        };
        return vec![(thetas[0], span)];
    }
    let mut out = Vec::new();
    // start scanning right after a point that does not match, so cyclic runs stay whole
    let start = if cyclic {
        (0..n)
            .find(|&i| flags[i] != want)
            .map(|i| i + 1)
            .unwrap_or(0)
    } else {
        0
    };
    let mut i = 0;
    let two_pi = 2.0 * std::f64::consts::PI;
    while i < n {
        let idx = (start + i) % n;
        if flags[idx] == want {
            let first = idx;
            let mut j = i;
            while j + 1 < n && flags[(start + j + 1) % n] == want {
                j += 1;
            }
            let last = (start + j) % n;
            let mut end = thetas[last];
            if cyclic && last < first {
                end += two_pi;
            }
            out.push((thetas[first], end));
            i = j + 1;
        } else {
            i += 1;
        }
    }
    if !cyclic {
        return out;
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    out
}

struct ScanSample<T: Real> {
    x: Phase<T>,
    cmv: FiniteCmv<T>,
    values: Vec<Cx<T>>,
}

fn edge_max<T: Real>(u: &SiteVector<T>) -> T {
    [u.first, u.first + 1, u.last() - 1, u.last()]
        .iter()
        .map(|s| u.at(*s).norm())
        .fold(T::zero(), T::max)
}

/// For each grid z on the arc, looks for a sampled phase with an eigenvalue of
/// 𝓔^{β,η}_{[−N,N]}(x) within `tol` whose eigenvector has edge values ≤ tol^{1/2}.
pub fn interval_coverage_scan<T: Real>(
    f: &SamplingFunction<T>,
    omega: &Frequency<T>,
    opts: &CoverageOptions<T>,
) -> Result<CoverageScan> {
    if opts.grid < 2 {
        return Err(CmvError::InvalidInput(format!(
            "grid needs at least 2 points, got {}",
            opts.grid
        )));
    }
    if opts.n == 0 || 2 * opts.n + 1 > crate::spectral::MAX_EIGEN_DIM {
        return Err(CmvError::InvalidInput(format!(
            "window N = {} is outside the eigensolver range",
            opts.n
        )));
    }
    let model = QuasiPeriodicModel::new(f.clone(), omega.clone())?;
    let n = opts.n as i64;
    let win = Window::new(&model, (-n, n), opts.beta, opts.eta);
    let two_pi = T::PI() + T::PI();
    let (t1, t2) = opts.arc;
    let full = t2 - t1 >= two_pi - T::c(1e-12);
    let m = opts.grid;
    let thetas: Vec<T> = (0..m)
        .map(|i| {
            let i = T::from_usize_lossy(i);
            if full {
                t1 + i * two_pi / T::from_usize_lossy(m)
            } else {
                t1 + i * (t2 - t1) / T::from_usize_lossy(m - 1)
            }
        })
        .collect();

    let count = if f.is_constant() {
        1
    } else {
        opts.phase_samples.max(1)
    };
    let seed = derive_seed(opts.seed, 0x5CA7);
    let samples = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let x: Phase<T> = sample_phase(&mut stream_rng(seed, i), f.dim());
            let cmv = win.cmv(&x)?;
            let values = eigenvalues(&cmv)?;
            Ok(ScanSample { x, cmv, values })
        })
        .collect::<Result<Vec<_>>>()?;

    let root_tol = opts.tol.sqrt();
    let points = thetas
        .par_iter()
        .map(|theta| -> Result<CoveragePoint> {
            let z = cis(*theta);
            let mut cands: Vec<(T, usize, Cx<T>)> = Vec::new();
            for (p, s) in samples.iter().enumerate() {
                for v in &s.values {
                    cands.push((chordal(*v, z), p, *v));
                }
            }
            cands.sort_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.1.cmp(&b.1))
            });
            let best = cands.first().copied();
            let phase_x = |p: &Phase<T>| p.coords().iter().map(|v| f64_of(*v)).collect::<Vec<_>>();
            let mut fallback_edge = T::infinity();
            for (d, p, v) in cands.iter().take(4) {
                if *d > opts.tol {
                    break;
                }
                let pair = inverse_iteration(&samples[*p].cmv, *v, 3)?;
                let e = edge_max(&pair.vector);
                fallback_edge = fallback_edge.min(e);
                if e <= root_tol {
                    return Ok(CoveragePoint {
                        theta: f64_of(*theta),
                        covered: true,
                        best_dist: f64_of(*d),
                        phase_x: phase_x(&samples[*p].x),
                        edge_max: f64_of(e),
                    });
                }
            }
            let Some((bd, bp, bv)) = best else {
                return Err(CmvError::InvalidInput("empty spectrum".into()));
            };
            if opts.refine_steps > 0 && !f.is_constant() {
                let x = &samples[bp].x;
                let phi = &x.coords()[..f.dim() - 1];
                let t0 = x.coords()[f.dim() - 1];
                let track = |xx: &Phase<T>, r: Cx<T>| -> Result<Cx<T>> {
                    Ok(inverse_iteration(&win.cmv(xx)?, r, 3)?.value)
                };
                if let Ok(root) = solve_last_coord(&track, phi, z, t0, bv, opts.refine_steps) {
                    let xr = phase_with_last(phi, root.t);
                    let pair = inverse_iteration(&win.cmv(&xr)?, root.value, 3)?;
                    let d = chordal(pair.value, z);
                    let e = edge_max(&pair.vector);
                    if d <= opts.tol && e <= root_tol {
                        return Ok(CoveragePoint {
                            theta: f64_of(*theta),
                            covered: true,
                            best_dist: f64_of(d.min(bd)),
                            phase_x: phase_x(&xr),
                            edge_max: f64_of(e),
                        });
                    }
                }
            }
            Ok(CoveragePoint {
                theta: f64_of(*theta),
                covered: false,
                best_dist: f64_of(bd),
                phase_x: phase_x(&samples[bp].x),
                edge_max: f64_of(fallback_edge),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let flags: Vec<bool> = points.iter().map(|p| p.covered).collect();
    let th: Vec<f64> = points.iter().map(|p| p.theta).collect();
    Ok(CoverageScan {
        arcs: runs(&flags, &th, true, full),
        gaps: runs(&flags, &th, false, full),
        points,
        full_circle: full,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::creal;

    fn example_params() -> ScheduleParams {
        ScheduleParams {
            nu_prime: 0.9,
            nu: 0.9,
            ratio_factor: 1.0,
            n0: 16,
            s_max: 1,
            ..Default::default()
        }
    }

    #[test]
    fn default_chain_holds() {
        let s = ScaleSchedule::<f64>::from_params(&ScheduleParams::default()).unwrap();
        assert!(s.ordering_chain().iter().all(|l| l.holds));
        let n = s.scales().unwrap();
        assert!(n.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn example_schedule_scales() {
        let s = ScaleSchedule::<f64>::from_params(&example_params()).unwrap();
        assert_eq!(s.scales().unwrap(), vec![16, 30]);
        assert!((s.beta_hat() - 0.81).abs() < 1e-12);
    }

    #[test]
    fn bad_constants_rejected() {
        let p = ScheduleParams {
            c0: 3.0,
            c2: 3.5,
            ..Default::default()
        };
        assert!(ScaleSchedule::<f64>::from_params(&p).is_err());
        let p = ScheduleParams {
            ratio_factor: 10.0,
            ..Default::default()
        };
        assert!(ScaleSchedule::<f64>::from_params(&p).is_err());
    }

    #[test]
    fn dotted_order_basics() {
        let a = cis(0.1f64);
        let b = cis(1.0f64);
        let c = cis(2.0f64);
        assert!(dotted_order(a, b, c));
        assert!(!dotted_order(a, c, b));
        assert!(!dotted_order(a, a, c));
        // wrapping through θ = 0
        assert!(dotted_order(cis(6.0f64), cis(0.05), cis(0.5)));
    }

    #[test]
    fn runs_wrap_on_full_circle() {
        let th: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let flags = [true, true, false, false, true, true, true, true];
        let arcs = runs(&flags, &th, true, true);
        assert_eq!(arcs, vec![(4.0, 1.0 + 2.0 * std::f64::consts::PI)]);
        let gaps = runs(&flags, &th, false, true);
        assert_eq!(gaps, vec![(2.0, 3.0)]);
    }

    #[test]
    fn sqrt_bound_is_strict() {
        assert_eq!(sqrt_bound(16), 3);
        assert_eq!(sqrt_bound(17), 4);
        assert_eq!(sqrt_bound(2), 1);
    }

    #[test]
    fn free_case_covers_everything() {
        let f = SamplingFunction::<f64>::constant(1, creal(0.0)).unwrap();
        let omega = Frequency::new(&[0.618_033_988_749_895]);
        let opts = CoverageOptions::new((0.0, 2.0 * std::f64::consts::PI), 64, 60, 0.1);
        let scan = interval_coverage_scan(&f, &omega, &opts).unwrap();
        assert!(scan.points.iter().all(|p| p.covered));
        assert_eq!(scan.gaps.len(), 0);
    }
}
