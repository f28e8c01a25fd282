//! Row-major band storage and LU with partial pivoting.

use crate::error::{Error, Result};
use crate::C64;
use nalgebra::DMatrix;
use num_complex::ComplexFloat;

/// Square band matrix with `kl` sub- and `ku` super-diagonals.
#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<C64>,
}

impl Band {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Band { n, kl, ku, data: vec![C64::new(0.0, 0.0); n * (kl + ku + 1)] }
    }

    pub fn from_diagonal(d: &[C64]) -> Self {
        Band { n: d.len(), kl: 0, ku: 0, data: d.to_vec() }
    }

    /// Tridiagonal band from diagonal and the two off-diagonals (`lower[i]` sits at (i+1, i)).
    pub fn tridiagonal(lower: &[C64], diag: &[C64], upper: &[C64]) -> Self {
        let n = diag.len();
        assert!(lower.len() + 1 == n && upper.len() + 1 == n, "tridiagonal lengths");
        let mut b = Band::zeros(n, 1, 1);
        for i in 0..n {
            b.set(i, i, diag[i]);
            if i + 1 < n {
                b.set(i + 1, i, lower[i]);
                b.set(i, i + 1, upper[i]);
            }
        }
        b
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn kl(&self) -> usize {
        self.kl
    }
    pub fn ku(&self) -> usize {
        self.ku
    }

    #[inline]
    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    #[inline]
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        if self.in_band(i, j) {
            self.data[i * self.width() + j + self.kl - i]
        } else {
            C64::new(0.0, 0.0)
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        assert!(self.in_band(i, j), "entry ({i},{j}) outside band");
        let w = self.width();
        self.data[i * w + j + self.kl - i] = v;
    }

    /// Re-store with at least the requested bandwidths.
    pub fn widened(&self, kl: usize, ku: usize) -> Band {
        let kl = kl.max(self.kl);
        let ku = ku.max(self.ku);
        if kl == self.kl && ku == self.ku {
            return self.clone();
        }
        let mut out = Band::zeros(self.n, kl, ku);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            for j in lo..=hi {
                out.set(i, j, self.get(i, j));
            }
        }
        out
    }

    pub fn add(&self, other: &Band) -> Band {
        assert_eq!(self.n, other.n);
        let mut out = self.widened(other.kl, other.ku);
        for i in 0..self.n {
            let lo = i.saturating_sub(other.kl);
            let hi = (i + other.ku).min(self.n - 1);
            for j in lo..=hi {
                let v = out.get(i, j) + other.get(i, j);
                out.set(i, j, v);
            }
        }
        out
    }

    pub fn scale(&self, c: C64) -> Band {
        Band { n: self.n, kl: self.kl, ku: self.ku, data: self.data.iter().map(|x| x * c).collect() }
    }

    pub fn add_diagonal(&mut self, c: C64) {
        for i in 0..self.n {
            let v = self.get(i, i) + c;
            self.set(i, i, v);
        }
    }

    pub fn adjoint(&self) -> Band {
        let mut out = Band::zeros(self.n, self.ku, self.kl);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            for j in lo..=hi {
                out.set(j, i, self.get(i, j).conj());
            }
        }
        out
    }

    pub fn mul_vec_into(&self, x: &[C64], y: &mut [C64]) {
        let w = self.width();
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            let row = &self.data[i * w..(i + 1) * w];
            let mut acc = C64::new(0.0, 0.0);
            for j in lo..=hi {
                acc += row[j + self.kl - i] * x[j];
            }
            y[i] = acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.abs()).fold(0.0, f64::max)
    }

    /// LU factorization with row partial pivoting.
    pub fn lu(&self) -> Result<BandLu> {
        let n = self.n;
        let kl = self.kl;
        let uu = self.kl + self.ku;
        let mut a = self.widened(kl, uu);
        let w = a.width();
        let mut piv = vec![0usize; n];
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = a.get(k, k).abs();
            for i in k + 1..=last {
                let v = a.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= scale * 1e-14 {
                return Err(Error::Singular(format!("zero pivot in band LU at row {k}")));
            }
            piv[k] = p;
            let jmax = (k + uu).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let ik = k * w + j + kl - k;
                    let ip = p * w + j + kl - p;
                    a.data.swap(ik, ip);
                }
            }
            let pivot = a.data[k * w + kl];
            for i in k + 1..=last {
                let idx = i * w + k + kl - i;
                let l = a.data[idx] / pivot;
                a.data[idx] = l;
                if l == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in k + 1..=jmax {
                    let akj = a.data[k * w + j + kl - k];
                    a.data[i * w + j + kl - i] -= l * akj;
                }
            }
        }
        let inv_diag = (0..n).map(|k| a.data[k * w + kl].inv()).collect();
        Ok(BandLu { a, piv, inv_diag })
    }
}

/// Factors produced by [`Band::lu`].
#[derive(Clone, Debug)]
pub struct BandLu {
    a: Band,
    piv: Vec<usize>,
    /// Reciprocal pivots; complex division dominates the back substitution otherwise.
    inv_diag: Vec<C64>,
}

impl BandLu {
    pub fn solve_in_place(&self, b: &mut [C64]) {
        let n = self.a.n;
        let kl = self.a.kl;
        let uu = self.a.ku;
        let w = self.a.width();
        let d = &self.a.data;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk == C64::new(0.0, 0.0) {
                continue;
            }
            let last = (k + kl).min(n - 1);
            for i in k + 1..=last {
                b[i] -= d[i * w + k + kl - i] * bk;
            }
        }
        for i in (0..n).rev() {
            let hi = (i + uu).min(n - 1);
            let mut acc = b[i];
            for j in i + 1..=hi {
                acc -= d[i * w + j + kl - i] * b[j];
            }
            b[i] = acc * self.inv_diag[i];
        }
    }

    /// Row-oriented sweep over all right-hand sides at once.
    pub fn solve_mat(&self, b: &DMatrix<C64>) -> DMatrix<C64> {
        let m = b.ncols();
        if m == 1 {
            let mut x = b.clone();
            self.solve_in_place(x.as_mut_slice());
            return x;
        }
        let n = self.a.n;
        let kl = self.a.kl;
        let uu = self.a.ku;
        let w = self.a.width();
        let d = &self.a.data;
        // Column k of `t` is row k of the system.
        let mut t = b.transpose();
        let xs = t.as_mut_slice();
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                let (head, tail) = xs.split_at_mut(p * m);
                head[k * m..(k + 1) * m].swap_with_slice(&mut tail[..m]);
            }
            let last = (k + kl).min(n - 1);
            let (head, tail) = xs.split_at_mut((k + 1) * m);
            let row_k = &head[k * m..];
            for i in k + 1..=last {
                let l = d[i * w + k + kl - i];
                if l == C64::new(0.0, 0.0) {
                    continue;
                }
                let row_i = &mut tail[(i - k - 1) * m..(i - k) * m];
                for (y, &x) in row_i.iter_mut().zip(row_k) {
                    *y -= l * x;
                }
            }
        }
        for i in (0..n).rev() {
            let hi = (i + uu).min(n - 1);
            let (head, tail) = xs.split_at_mut((i + 1) * m);
            let row_i = &mut head[i * m..];
            for j in i + 1..=hi {
                let c = d[i * w + j + kl - i];
                let row_j = &tail[(j - i - 1) * m..(j - i) * m];
                for (y, &x) in row_i.iter_mut().zip(row_j) {
                    *y -= c * x;
                }
            }
            let inv = self.inv_diag[i];
            for y in row_i.iter_mut() {
                *y *= inv;
            }
        }
        t.transpose()
    }
}
