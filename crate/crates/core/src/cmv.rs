//! CMV and extended CMV matrices, the Θ-block 𝓛𝓜 factorization and
//! boundary-modified truncations.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{CmvError, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::{cone, creal, czero, Cx, Mat2, Real};
use crate::torus::{rho_of, Frequency, Phase, SamplingFunction};

/// Θ = [[ᾱ, ρ], [ρ, −α]].
pub fn theta_block<T: Real>(alpha: Cx<T>) -> Mat2<T> {
    let r = creal(rho_of(alpha));
    Mat2::new(alpha.conj(), r, r, -alpha)
}

/// Tolerance on | |β| − 1 | for a boundary value to count as unit modulus.
pub const UNIT_TOL: f64 = 1e-12;

fn is_unit<T: Real>(v: Cx<T>) -> bool {
    (v.norm() - T::one()).abs() <= T::c(UNIT_TOL).max(T::epsilon() * T::c(8.0))
}

/// A quasi-periodic coefficient model α_n(x) = α(x + nω), with optional
/// position overrides (absolute indices, unit modulus).
#[derive(Clone, Debug)]
pub struct QuasiPeriodicModel<T: Real> {
    pub f: SamplingFunction<T>,
    pub omega: Frequency<T>,
    pub overrides: BTreeMap<i64, Cx<T>>,
}

impl<T: Real> QuasiPeriodicModel<T> {
    pub fn new(f: SamplingFunction<T>, omega: Frequency<T>) -> Result<Self> {
        if f.dim() != omega.dim() {
            return Err(CmvError::DimensionMismatch {
                expected: f.dim(),
                got: omega.dim(),
            });
        }
        Ok(Self {
            f,
            omega,
            overrides: BTreeMap::new(),
        })
    }

    pub fn with_override(mut self, n: i64, value: Cx<T>) -> Result<Self> {
        if !is_unit(value) {
            return Err(CmvError::NonUnitBoundary {
                modulus: value.norm().to_f64_lossy(),
            });
        }
        self.overrides.insert(n, value);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.f.dim()
    }

    pub fn alpha(&self, x: &Phase<T>, n: i64) -> Result<Cx<T>> {
        if let Some(v) = self.overrides.get(&n) {
            return Ok(*v);
        }
        self.f.eval_alpha(&x.shifted(&self.omega, n))
    }

    /// Coefficients α_lo..=α_hi at base phase x.
    pub fn sequence(&self, x: &Phase<T>, lo: i64, hi: i64) -> Result<VerblunskySequence<T>> {
        if hi < lo {
            return Err(CmvError::InvalidInput(format!(
                "empty coefficient window [{lo}, {hi}]"
            )));
        }
        if x.dim() != self.dim() {
            return Err(CmvError::DimensionMismatch {
                expected: self.dim(),
                got: x.dim(),
            });
        }
        let mut values = Vec::with_capacity((hi - lo + 1) as usize);
        for n in lo..=hi {
            values.push(self.f.eval_alpha(&x.shifted(&self.omega, n))?);
        }
        let overrides = self
            .overrides
            .range(lo..=hi)
            .map(|(k, v)| (*k, *v))
            .collect();
        Ok(VerblunskySequence {
            start: lo,
            values,
            overrides,
        })
    }
}

/// Verblunsky coefficients α_n on a finite index window.
#[derive(Clone, Debug, PartialEq)]
pub struct VerblunskySequence<T: Real> {
    start: i64,
    values: Vec<Cx<T>>,
    overrides: BTreeMap<i64, Cx<T>>,
}

impl<T: Real> VerblunskySequence<T> {
    /// α_start, α_start+1, … from explicit values (all inside the open disk).
    pub fn from_values(start: i64, values: Vec<Cx<T>>) -> Result<Self> {
        if values.is_empty() {
            return Err(CmvError::InvalidInput("empty coefficient sequence".into()));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| v.norm() >= T::one())
        {
            return Err(CmvError::InvalidInput(format!(
                "coefficient at n = {} has modulus {} ≥ 1",
                start + i as i64,
                v.norm()
            )));
        }
        Ok(Self {
            start,
            values,
            overrides: BTreeMap::new(),
        })
    }

    pub fn sample(
        f: &SamplingFunction<T>,
        omega: &Frequency<T>,
        x: &Phase<T>,
        lo: i64,
        hi: i64,
    ) -> Result<Self> {
        QuasiPeriodicModel::new(f.clone(), omega.clone())?.sequence(x, lo, hi)
    }

    pub fn constant(a: Cx<T>, lo: i64, hi: i64) -> Result<Self> {
        if hi < lo {
            return Err(CmvError::InvalidInput(format!(
                "empty coefficient window [{lo}, {hi}]"
            )));
        }
        Self::from_values(lo, vec![a; (hi - lo + 1) as usize])
    }

    /// Replaces α_n by a unit-modulus value.
    pub fn with_override(mut self, n: i64, value: Cx<T>) -> Result<Self> {
        if !self.contains(n) {
            return Err(CmvError::InvalidInput(format!(
                "override position {n} outside the window"
            )));
        }
        if !is_unit(value) {
            return Err(CmvError::NonUnitBoundary {
                modulus: value.norm().to_f64_lossy(),
            });
        }
        self.overrides.insert(n, value);
        Ok(self)
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn end(&self) -> i64 {
        self.start + self.values.len() as i64 - 1
    }

    pub fn contains(&self, n: i64) -> bool {
        n >= self.start && n <= self.end()
    }

    pub fn overrides(&self) -> &BTreeMap<i64, Cx<T>> {
        &self.overrides
    }

    /// α_n including overrides.
    pub fn get(&self, n: i64) -> Option<Cx<T>> {
        if let Some(v) = self.overrides.get(&n) {
            return Some(*v);
        }
        self.original(n)
    }

    /// α_n ignoring overrides.
    pub fn original(&self, n: i64) -> Option<Cx<T>> {
        if self.contains(n) {
            Some(self.values[(n - self.start) as usize])
        } else {
            None
        }
    }

    pub fn at(&self, n: i64) -> Result<Cx<T>> {
        self.get(n).ok_or_else(|| {
            CmvError::InvalidInput(format!(
                "coefficient α_{n} requested outside the window [{}, {}]",
                self.start,
                self.end()
            ))
        })
    }

    pub fn rho(&self, n: i64) -> Result<T> {
        Ok(rho_of(self.at(n)?))
    }

    pub fn sup_modulus(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.norm()))
    }
}

/// Boundary treatment at one end of a truncation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cut<T: Real> {
    /// Keep the sequence's own coefficient at the cut (the "·" boundary).
    Keep,
    /// Replace the coefficient at the cut by this value.
    Set(Cx<T>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Block<T: Real> {
    /// 1×1 block left over where the interval cuts a Θ block.
    Scalar { site: i64, value: Cx<T> },
    /// Θ_n acting on sites (n, n+1).
    Pair { site: i64, theta: Mat2<T> },
}

/// The truncation P_{[a,b]} 𝓔̃ P*_{[a,b]} with α̃_{a−1} and α̃_b set by the cuts.
///
/// 𝓛 collects the even-indexed Θ blocks and 𝓜 the odd-indexed ones. A cut block
/// leaves the scalar −α̃_{a−1} at site a and conj(α̃_b) at site b.
#[derive(Clone, Debug)]
pub struct FiniteCmv<T: Real> {
    a: i64,
    b: i64,
    left: Cx<T>,
    right: Cx<T>,
    l_blocks: Vec<Block<T>>,
    m_blocks: Vec<Block<T>>,
    l_index: Vec<usize>,
    m_index: Vec<usize>,
    // bands[i][d + 2] = 𝓔(a + i, a + i + d)
    bands: Vec<[Cx<T>; 5]>,
}

/// Unitary truncation 𝓔^{β,η}_{[a,b]}.
pub fn build_finite_cmv<T: Real>(
    seq: &VerblunskySequence<T>,
    a: i64,
    b: i64,
    beta: Cx<T>,
    eta: Cx<T>,
) -> Result<FiniteCmv<T>> {
    for v in [beta, eta] {
        if !is_unit(v) {
            return Err(CmvError::NonUnitBoundary {
                modulus: v.norm().to_f64_lossy(),
            });
        }
    }
    build_truncation(seq, a, b, Cut::Set(beta), Cut::Set(eta))
}

/// Truncation with arbitrary cut treatment; unitary only for unit cut values.
pub fn build_truncation<T: Real>(
    seq: &VerblunskySequence<T>,
    a: i64,
    b: i64,
    left: Cut<T>,
    right: Cut<T>,
) -> Result<FiniteCmv<T>> {
    if b < a {
        return Err(CmvError::InvalidInput(format!(
            "interval [{a}, {b}] is empty"
        )));
    }
    let left = match left {
        Cut::Keep => seq.at(a - 1)?,
        Cut::Set(v) => v,
    };
    let right = match right {
        Cut::Keep => seq.at(b)?,
        Cut::Set(v) => v,
    };
    let coeff = |n: i64| -> Result<Cx<T>> {
        if n == a - 1 {
            Ok(left)
        } else if n == b {
            Ok(right)
        } else {
            seq.at(n)
        }
    };
    let mut l_blocks = Vec::new();
    let mut m_blocks = Vec::new();
    for n in (a - 1)..=b {
        let block = if n == a - 1 {
            Block::Scalar {
                site: a,
                value: -coeff(n)?,
            }
        } else if n == b {
            Block::Scalar {
                site: b,
                value: coeff(n)?.conj(),
            }
        } else {
            Block::Pair {
                site: n,
                theta: theta_block(coeff(n)?),
            }
        };
        if n.rem_euclid(2) == 0 {
            l_blocks.push(block);
        } else {
            m_blocks.push(block);
        }
    }
    let len = (b - a + 1) as usize;
    let l_index = block_index(&l_blocks, a, len);
    let m_index = block_index(&m_blocks, a, len);
    let mut m = FiniteCmv {
        a,
        b,
        left,
        right,
        l_blocks,
        m_blocks,
        l_index,
        m_index,
        bands: Vec::new(),
    };
    m.fill_bands();
    Ok(m)
}

// Row entries of a block-diagonal factor: up to two (column, value) pairs.
fn block_row<T: Real>(blocks: &[Block<T>], index: &[usize], a: i64, i: i64) -> [(i64, Cx<T>); 2] {
    match blocks[index[(i - a) as usize]] {
        Block::Scalar { value, .. } => [(i, value), (i, czero())],
        Block::Pair { site, theta } => {
            let r = (i - site) as usize;
            [(site, theta.m[r][0]), (site + 1, theta.m[r][1])]
        }
    }
}

fn block_index<T: Real>(blocks: &[Block<T>], a: i64, len: usize) -> Vec<usize> {
    let mut idx = vec![0usize; len];
    for (bi, blk) in blocks.iter().enumerate() {
        match blk {
            Block::Scalar { site, .. } => idx[(site - a) as usize] = bi,
            Block::Pair { site, .. } => {
                idx[(site - a) as usize] = bi;
                idx[(site + 1 - a) as usize] = bi;
            }
        }
    }
    idx
}

impl<T: Real> FiniteCmv<T> {
    fn fill_bands(&mut self) {
        let n = self.dim();
        let mut bands = vec![[czero(); 5]; n];
        for i in self.a..=self.b {
            for (k, lv) in block_row(&self.l_blocks, &self.l_index, self.a, i) {
                if lv == czero() || k < self.a || k > self.b {
                    continue;
                }
                for (j, mv) in block_row(&self.m_blocks, &self.m_index, self.a, k) {
                    if mv == czero() {
                        continue;
                    }
                    let d = j - i;
                    debug_assert!((-2..=2).contains(&d));
                    bands[(i - self.a) as usize][(d + 2) as usize] += lv * mv;
                }
            }
        }
        self.bands = bands;
    }

    pub fn interval(&self) -> (i64, i64) {
        (self.a, self.b)
    }

    pub fn dim(&self) -> usize {
        (self.b - self.a + 1) as usize
    }

    /// α̃_{a−1} and α̃_b used at the cuts.
    pub fn boundary(&self) -> (Cx<T>, Cx<T>) {
        (self.left, self.right)
    }

    pub fn is_unitary_truncation(&self) -> bool {
        is_unit(self.left) && is_unit(self.right)
    }

    pub fn l_blocks(&self) -> &[Block<T>] {
        &self.l_blocks
    }

    pub fn m_blocks(&self) -> &[Block<T>] {
        &self.m_blocks
    }

    /// 𝓔(i, j) in absolute site indices; zero outside the five diagonals.
    pub fn entry(&self, i: i64, j: i64) -> Cx<T> {
        let d = j - i;
        if i < self.a || i > self.b || j < self.a || j > self.b || !(-2..=2).contains(&d) {
            return czero();
        }
        self.bands[(i - self.a) as usize][(d + 2) as usize]
    }

    pub fn bands(&self) -> &[[Cx<T>; 5]] {
        &self.bands
    }

    /// 𝓔v using the band storage.
    pub fn apply(&self, v: &[Cx<T>]) -> Result<Vec<Cx<T>>> {
        let n = self.dim();
        if v.len() != n {
            return Err(CmvError::DimensionMismatch {
                expected: n,
                got: v.len(),
            });
        }
        let mut out = vec![czero(); n];
        for (i, row) in self.bands.iter().enumerate() {
            let mut s = czero();
            for (d, e) in row.iter().enumerate() {
                let j = i as i64 + d as i64 - 2;
                if j >= 0 && (j as usize) < n {
                    s += *e * v[j as usize];
                }
            }
            out[i] = s;
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let n = self.dim();
        let mut m = DenseMatrix::zeros(n);
        for (i, row) in self.bands.iter().enumerate() {
            for (d, e) in row.iter().enumerate() {
                let j = i as i64 + d as i64 - 2;
                if j >= 0 && (j as usize) < n {
                    m.set(i, j as usize, *e);
                }
            }
        }
        m
    }

    fn factor_dense(&self, blocks: &[Block<T>]) -> DenseMatrix<T> {
        let mut m = DenseMatrix::zeros(self.dim());
        for blk in blocks {
            match *blk {
                Block::Scalar { site, value } => {
                    let i = (site - self.a) as usize;
                    m.set(i, i, value);
                }
                Block::Pair { site, theta } => {
                    let i = (site - self.a) as usize;
                    for r in 0..2 {
                        for c in 0..2 {
                            m.set(i + r, i + c, theta.m[r][c]);
                        }
                    }
                }
            }
        }
        m
    }

    pub fn l_dense(&self) -> DenseMatrix<T> {
        self.factor_dense(&self.l_blocks)
    }

    pub fn m_dense(&self) -> DenseMatrix<T> {
        self.factor_dense(&self.m_blocks)
    }

    /// 𝓛(i, j) in absolute indices.
    pub fn l_entry(&self, i: i64, j: i64) -> Cx<T> {
        factor_entry(&self.l_blocks, &self.l_index, self.a, self.b, i, j)
    }

    /// 𝓜(i, j) in absolute indices.
    pub fn m_entry(&self, i: i64, j: i64) -> Cx<T> {
        factor_entry(&self.m_blocks, &self.m_index, self.a, self.b, i, j)
    }

    /// (z𝓛* − 𝓜)(i, j) in absolute indices; the matrix is tridiagonal.
    pub fn green_operator_entry(&self, z: Cx<T>, i: i64, j: i64) -> Cx<T> {
        z * self.l_entry(j, i).conj() - self.m_entry(i, j)
    }

    /// ‖𝓔*𝓔 − I‖_max computed from the bands.
    pub fn unitarity_defect(&self) -> T {
        let n = self.dim() as i64;
        let mut worst = T::zero();
        for i in 0..n {
            for j in (i - 4).max(0)..=(i + 4).min(n - 1) {
                let mut s = czero();
                for k in (j - 2).max(0)..=(j + 2).min(n - 1) {
                    s += self.entry(self.a + k, self.a + i).conj()
                        * self.entry(self.a + k, self.a + j);
                }
                if i == j {
                    s -= cone();
                }
                worst = worst.max(s.norm());
            }
        }
        worst
    }

    /// "row,col,re,im" triplets of the nonzero pattern (absolute indices).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,re,im\n");
        for i in self.a..=self.b {
            for j in (i - 2).max(self.a)..=(i + 2).min(self.b) {
                let e = self.entry(i, j);
                let _ = writeln!(out, "{},{},{},{}", i, j, e.re, e.im);
            }
        }
        out
    }
}

fn factor_entry<T: Real>(
    blocks: &[Block<T>],
    index: &[usize],
    a: i64,
    b: i64,
    i: i64,
    j: i64,
) -> Cx<T> {
    if i < a || i > b || j < a || j > b {
        return czero();
    }
    match blocks[index[(i - a) as usize]] {
        Block::Scalar { value, .. } => {
            if i == j {
                value
            } else {
                czero()
            }
        }
        Block::Pair { site, theta } => {
            let c = j - site;
            if (0..2).contains(&c) {
                theta.m[(i - site) as usize][c as usize]
            } else {
                czero()
            }
        }
    }
}

/// Rows center−w..center+w of the extended 𝓔, columns center−w−2..center+w+2.
#[derive(Clone, Debug)]
pub struct RowWindow<T: Real> {
    pub row_start: i64,
    pub col_start: i64,
    pub rows: Vec<Vec<Cx<T>>>,
}

impl<T: Real> RowWindow<T> {
    pub fn get(&self, i: i64, j: i64) -> Cx<T> {
        self.rows[(i - self.row_start) as usize][(j - self.col_start) as usize]
    }
}

pub fn cmv_row_window<T: Real>(
    seq: &VerblunskySequence<T>,
    center: i64,
    w: i64,
) -> Result<RowWindow<T>> {
    if w < 2 {
        return Err(CmvError::InvalidInput(format!(
            "half-width must be at least 2, got {w}"
        )));
    }
    let (lo, hi) = (center - w - 2, center + w + 2);
    // Restricting the extended matrix with unchanged cuts reproduces its rows
    // whose five-diagonal support lies inside the window.
    let t = build_truncation(seq, lo, hi, Cut::Keep, Cut::Keep)?;
    let rows = ((center - w)..=(center + w))
        .map(|i| (lo..=hi).map(|j| t.entry(i, j)).collect())
        .collect();
    Ok(RowWindow {
        row_start: center - w,
        col_start: lo,
        rows,
    })
}
