//! Dense complex Schur decomposition and banded LU, generic over the scalar.

use sha2::{Digest, Sha256};

use crate::error::{CmvError, Result};
use crate::scalar::{cone, czero, Cx, Real};

/// Square complex matrix in column-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<T: Real> {
    n: usize,
    data: Vec<Cx<T>>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![czero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, cone());
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Cx<T>) -> Self {
        let mut m = Self::zeros(n);
        for j in 0..n {
            for i in 0..n {
                m.data[j * n + i] = f(i, j);
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Cx<T> {
        self.data[j * self.n + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Cx<T>) {
        self.data[j * self.n + i] = v;
    }

    pub fn column(&self, j: usize) -> &[Cx<T>] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.n, |i, j| self.get(j, i).conj())
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for j in 0..n {
            for k in 0..n {
                let b = other.get(k, j);
                if b == czero() {
                    continue;
                }
                let col = &self.data[k * n..(k + 1) * n];
                let dst = &mut out.data[j * n..(j + 1) * n];
                for (d, a) in dst.iter_mut().zip(col) {
                    *d += *a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[Cx<T>]) -> Vec<Cx<T>> {
        let n = self.n;
        let mut out = vec![czero(); n];
        for (j, vj) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.column(j)) {
                *o += *a * *vj;
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).norm())
            .fold(T::zero(), T::max)
    }

    /// SHA-256 over the f64 bit patterns, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n as u64).to_le_bytes());
        for v in &self.data {
            h.update(v.re.to_f64_lossy().to_bits().to_le_bytes());
            h.update(v.im.to_f64_lossy().to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Determinant by Gaussian elimination with partial pivoting.
    pub fn determinant(&self) -> Cx<T> {
        let n = self.n;
        let mut a = self.clone();
        let mut det = cone::<T>();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&x, &y| a.get(x, k).norm().partial_cmp(&a.get(y, k).norm()).unwrap())
                .unwrap();
            if a.get(p, k) == czero() {
                return czero();
            }
            if p != k {
                for j in 0..n {
                    let t = a.get(k, j);
                    a.set(k, j, a.get(p, j));
                    a.set(p, j, t);
                }
                det = -det;
            }
            let piv = a.get(k, k);
            det *= piv;
            for i in k + 1..n {
                let l = a.get(i, k) / piv;
                for j in k + 1..n {
                    let v = a.get(i, j) - l * a.get(k, j);
                    a.set(i, j, v);
                }
            }
        }
        det
    }
}

#[inline]
fn abs1<T: Real>(z: Cx<T>) -> T {
    z.re.abs() + z.im.abs()
}

/// Householder reduction to upper Hessenberg form, A ← Q* A Q, accumulating Q.
fn hessenberg<T: Real>(a: &mut DenseMatrix<T>, mut q: Option<&mut DenseMatrix<T>>) {
    let n = a.n;
    if n < 3 {
        return;
    }
    let mut v = vec![czero::<T>(); n];
    let mut s = vec![czero::<T>(); n];
    for k in 0..n - 2 {
        let len = n - k - 1;
        let col = &a.data[k * n + k + 1..k * n + n];
        let norm = col.iter().map(|c| c.norm_sqr()).sum::<T>().sqrt();
        if norm == T::zero() {
            continue;
        }
        let x0 = col[0];
        let phase = if x0 == czero() {
            cone()
        } else {
            x0 / x0.norm()
        };
        v[..len].copy_from_slice(col);
        v[0] += phase * norm;
        let vnorm2: T = v[..len].iter().map(|c| c.norm_sqr()).sum();
        if vnorm2 == T::zero() {
            continue;
        }
        let tau = T::c(2.0) / vnorm2;
        // left: rows k+1.., columns k..
        for j in k..n {
            let cj = &mut a.data[j * n + k + 1..j * n + n];
            let mut dot = czero::<T>();
            for (vi, ci) in v[..len].iter().zip(cj.iter()) {
                dot += vi.conj() * *ci;
            }
            let f = dot * tau;
            for (vi, ci) in v[..len].iter().zip(cj.iter_mut()) {
                *ci -= *vi * f;
            }
        }
        // right: all rows, columns k+1..
        apply_householder_right(&mut a.data, n, k + 1, &v[..len], tau, &mut s);
        if let Some(q) = q.as_deref_mut() {
            apply_householder_right(&mut q.data, n, k + 1, &v[..len], tau, &mut s);
        }
        a.data[k * n + k + 1] = -phase * norm;
        for i in k + 2..n {
            a.data[k * n + i] = czero();
        }
    }
}

// M ← M (I − τ v v*) on columns off.., all rows.
fn apply_householder_right<T: Real>(
    data: &mut [Cx<T>],
    n: usize,
    off: usize,
    v: &[Cx<T>],
    tau: T,
    s: &mut [Cx<T>],
) {
    s.iter_mut().for_each(|x| *x = czero());
    for (jj, vj) in v.iter().enumerate() {
        let col = &data[(off + jj) * n..(off + jj + 1) * n];
        for (si, ci) in s.iter_mut().zip(col) {
            *si += *ci * *vj;
        }
    }
    for (jj, vj) in v.iter().enumerate() {
        let f = vj.conj() * tau;
        let col = &mut data[(off + jj) * n..(off + jj + 1) * n];
        for (ci, si) in col.iter_mut().zip(s.iter()) {
            *ci -= *si * f;
        }
    }
}

/// Result of a complex Schur decomposition A = Z T Z*.
#[derive(Clone, Debug)]
pub struct Schur<T: Real> {
    /// Diagonal of T in the order the QR iteration produced.
    pub eigenvalues: Vec<Cx<T>>,
    /// Z, present when vectors were requested.
    pub vectors: Option<DenseMatrix<T>>,
}

/// Eigenvalues (and Schur vectors if `want_vectors`) by Hessenberg reduction
/// followed by single-shift complex QR with Wilkinson shifts.
///
/// For a normal matrix the Schur vectors are eigenvectors.
pub fn complex_schur<T: Real>(a: &DenseMatrix<T>, want_vectors: bool) -> Result<Schur<T>> {
    let n = a.n;
    if n == 0 {
        return Ok(Schur {
            eigenvalues: Vec::new(),
            vectors: want_vectors.then(|| DenseMatrix::zeros(0)),
        });
    }
    let mut h = a.clone();
    let mut z = want_vectors.then(|| DenseMatrix::identity(n));
    hessenberg(&mut h, z.as_mut());

    let eps = T::epsilon();
    let max_iter = 40 * n.max(10);
    let mut total = 0usize;
    let mut hi = n - 1;
    let mut its = 0usize;
    while hi > 0 {
        // locate the active block [lo, hi]
        let mut lo = hi;
        while lo > 0 {
            let sub = h.get(lo, lo - 1);
            let mut scale = abs1(h.get(lo, lo)) + abs1(h.get(lo - 1, lo - 1));
            if scale == T::zero() {
                scale = T::one();
            }
            if abs1(sub) <= eps * scale {
                h.set(lo, lo - 1, czero());
                break;
            }
            lo -= 1;
        }
        if lo == hi {
            hi -= 1;
            its = 0;
            continue;
        }
        its += 1;
        total += 1;
        if total > max_iter {
            return Err(CmvError::NoConvergence {
                iterations: total,
                hash: a.content_hash(),
            });
        }
        let mu = if its.is_multiple_of(10) {
            h.get(hi, hi) + Cx::new(T::c(0.75) * abs1(h.get(hi, hi - 1)), T::zero())
        } else {
            wilkinson_shift(
                h.get(hi - 1, hi - 1),
                h.get(hi - 1, hi),
                h.get(hi, hi - 1),
                h.get(hi, hi),
            )
        };
        qr_sweep(&mut h, z.as_mut(), lo, hi, mu);
    }
    let eigenvalues = (0..n).map(|i| h.get(i, i)).collect();
    Ok(Schur {
        eigenvalues,
        vectors: z,
    })
}

fn wilkinson_shift<T: Real>(a: Cx<T>, b: Cx<T>, c: Cx<T>, d: Cx<T>) -> Cx<T> {
    let half = T::c(0.5);
    let p = (a - d) * half;
    let bc = b * c;
    let disc = (p * p + bc).sqrt();
    let den1 = p + disc;
    let den2 = p - disc;
    let den = if den1.norm() >= den2.norm() {
        den1
    } else {
        den2
    };
    if den == czero() {
        d
    } else {
        d - bc / den
    }
}

// G = [[c, s], [−s̄, c]] with G·[x; y] = [r; 0].
#[inline]
fn givens<T: Real>(x: Cx<T>, y: Cx<T>) -> (T, Cx<T>) {
    let ax = x.norm();
    let ay = y.norm();
    if ay == T::zero() {
        return (T::one(), czero());
    }
    if ax == T::zero() {
        return (T::zero(), y.conj() / ay);
    }
    let r = ax.hypot(ay);
    let c = ax / r;
    let s = (x / ax) * y.conj() / r;
    (c, s)
}

fn qr_sweep<T: Real>(
    h: &mut DenseMatrix<T>,
    mut z: Option<&mut DenseMatrix<T>>,
    lo: usize,
    hi: usize,
    mu: Cx<T>,
) {
    let n = h.n;
    for k in lo..hi {
        let (x, y) = if k == lo {
            (h.get(lo, lo) - mu, h.get(lo + 1, lo))
        } else {
            (h.get(k, k - 1), h.get(k + 1, k - 1))
        };
        let (c, s) = givens(x, y);
        let cc = Cx::new(c, T::zero());
        // rows k, k+1 over the active columns
        let j0 = if k == lo { lo } else { k - 1 };
        for j in j0..=hi {
            let hk = h.data[j * n + k];
            let hk1 = h.data[j * n + k + 1];
            h.data[j * n + k] = cc * hk + s * hk1;
            h.data[j * n + k + 1] = -s.conj() * hk + cc * hk1;
        }
        if k > lo {
            h.data[(k - 1) * n + k + 1] = czero();
        }
        // columns k, k+1 over the active rows
        let i1 = (k + 2).min(hi);
        for i in lo..=i1 {
            let a0 = h.data[k * n + i];
            let a1 = h.data[(k + 1) * n + i];
            h.data[k * n + i] = cc * a0 + s.conj() * a1;
            h.data[(k + 1) * n + i] = -s * a0 + cc * a1;
        }
        if let Some(z) = z.as_deref_mut() {
            for i in 0..n {
                let a0 = z.data[k * n + i];
                let a1 = z.data[(k + 1) * n + i];
                z.data[k * n + i] = cc * a0 + s.conj() * a1;
                z.data[(k + 1) * n + i] = -s * a0 + cc * a1;
            }
        }
    }
}

/// LU factorization with partial pivoting of a banded matrix with `kl`
/// sub-diagonals and `ku` super-diagonals.
#[derive(Clone, Debug)]
pub struct BandLu<T: Real> {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    // row i holds columns i − kl ..= i + ku + kl at offsets 0..width
    rows: Vec<Cx<T>>,
    mult: Vec<Cx<T>>,
    pivots: Vec<usize>,
    log_abs_det: T,
    det_phase: Cx<T>,
    min_pivot: T,
}

impl<T: Real> BandLu<T> {
    /// Factors the matrix whose (i, j) entry is `entry(i, j)` for |i − j| in band.
    pub fn factor(n: usize, kl: usize, ku: usize, entry: impl Fn(usize, usize) -> Cx<T>) -> Self {
        let width = 2 * kl + ku + 1;
        let mut rows = vec![czero(); n * width];
        for i in 0..n {
            let j0 = i.saturating_sub(kl);
            let j1 = (i + ku).min(n.saturating_sub(1));
            for j in j0..=j1 {
                rows[i * width + (j + kl - i)] = entry(i, j);
            }
        }
        let mut lu = Self {
            n,
            kl,
            ku,
            width,
            rows,
            mult: vec![czero(); n * kl.max(1)],
            pivots: vec![0; n],
            log_abs_det: T::zero(),
            det_phase: cone(),
            min_pivot: T::infinity(),
        };
        lu.eliminate();
        lu
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    fn eliminate(&mut self) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + ku + kl).min(n - 1);
            let mut p = k;
            let mut best = self.rows[self.idx(k, k)].norm();
            for i in k + 1..=last_row {
                let v = self.rows[self.idx(i, k)].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            self.pivots[k] = p;
            if p != k {
                for j in k..=last_col {
                    let (ik, ip) = (self.idx(k, j), self.idx(p, j));
                    self.rows.swap(ik, ip);
                }
                self.det_phase = -self.det_phase;
            }
            let piv = self.rows[self.idx(k, k)];
            let pn = piv.norm();
            self.min_pivot = self.min_pivot.min(pn);
            if pn == T::zero() {
                self.log_abs_det = T::neg_infinity();
                continue;
            }
            self.log_abs_det += pn.ln();
            self.det_phase *= piv / pn;
            for i in k + 1..=last_row {
                let l = self.rows[self.idx(i, k)] / piv;
                self.mult[k * kl.max(1) + (i - k - 1)] = l;
                let ik = self.idx(i, k);
                self.rows[ik] = czero();
                if l == czero() {
                    continue;
                }
                for j in k + 1..=last_col {
                    let kj = self.rows[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.rows[ij] -= l * kj;
                }
            }
        }
    }

    pub fn log_abs_det(&self) -> T {
        self.log_abs_det
    }

    /// det / |det|.
    pub fn det_phase(&self) -> Cx<T> {
        self.det_phase
    }

    pub fn min_pivot(&self) -> T {
        self.min_pivot
    }

    pub fn solve(&self, b: &[Cx<T>]) -> Result<Vec<Cx<T>>> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        if b.len() != n {
            return Err(CmvError::DimensionMismatch {
                expected: n,
                got: b.len(),
            });
        }
        if self.min_pivot == T::zero() {
            return Err(CmvError::Singular("zero pivot in banded LU".into()));
        }
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let last_row = (k + kl).min(n - 1);
            for i in k + 1..=last_row {
                let l = self.mult[k * kl.max(1) + (i - k - 1)];
                let xk = x[k];
                x[i] -= l * xk;
            }
        }
        for k in (0..n).rev() {
            let last_col = (k + ku + kl).min(n - 1);
            let mut s = x[k];
            for j in k + 1..=last_col {
                s -= self.rows[self.idx(k, j)] * x[j];
            }
            x[k] = s / self.rows[self.idx(k, k)];
        }
        Ok(x)
    }
}
