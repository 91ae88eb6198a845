//! Small dense complex helpers. Row-major, no external BLAS.

use num_complex::Complex64;

pub type C64 = Complex64;

#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `A x`
    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.rows];
        self.mul_vec_into(x, &mut out);
        out
    }

    pub fn mul_vec_into(&self, x: &[C64], out: &mut [C64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (r, o) in out.iter_mut().enumerate() {
            let row = self.row(r);
            let (mut re, mut im) = (0.0, 0.0);
            for (a, b) in row.iter().zip(x) {
                re += a.re * b.re - a.im * b.im;
                im += a.re * b.im + a.im * b.re;
            }
            *o = C64::new(re, im);
        }
    }

    /// `Aᴴ x`
    pub fn mul_vec_h(&self, x: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.cols];
        self.mul_vec_h_into(x, &mut out);
        out
    }

    pub fn mul_vec_h_into(&self, x: &[C64], out: &mut [C64]) {
        debug_assert_eq!(x.len(), self.rows);
        out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
        for (r, xr) in x.iter().enumerate() {
            let row = self.row(r);
            for (o, a) in out.iter_mut().zip(row) {
                // conj(a) * xr
                o.re += a.re * xr.re + a.im * xr.im;
                o.im += a.re * xr.im - a.im * xr.re;
            }
        }
    }

    /// Keeps the listed columns, in order.
    pub fn select_cols(&self, cols: &[usize]) -> CMatrix {
        let mut out = CMatrix::zeros(self.rows, cols.len());
        for r in 0..self.rows {
            for (j, &c) in cols.iter().enumerate() {
                out.data[r * cols.len() + j] = self.get(r, c);
            }
        }
        out
    }

    /// Keeps the first `rows` rows.
    pub fn top_rows(&self, rows: usize) -> CMatrix {
        CMatrix::from_rows(rows, self.cols, self.data[..rows * self.cols].to_vec())
    }
}

pub fn norm_sqr(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum()
}

pub fn norm(x: &[C64]) -> f64 {
    norm_sqr(x).sqrt()
}

/// Solves the Hermitian positive definite system `M x = b` in place via
/// Cholesky. Returns `None` when a pivot is not strictly positive.
pub fn cholesky_solve(m: &[C64], n: usize, b: &[C64]) -> Option<Vec<C64>> {
    let mut l = vec![C64::new(0.0, 0.0); n * n];
    for j in 0..n {
        let mut d = m[j * n + j].re;
        for k in 0..j {
            d -= l[j * n + k].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[j * n + j] = C64::new(d, 0.0);
        for i in (j + 1)..n {
            let mut s = m[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k].conj();
            }
            l[i * n + j] = s / d;
        }
    }
    // L w = b
    let mut w = b.to_vec();
    for i in 0..n {
        let mut s = w[i];
        for k in 0..i {
            s -= l[i * n + k] * w[k];
        }
        w[i] = s / l[i * n + i].re;
    }
    // Lᴴ x = w
    for i in (0..n).rev() {
        let mut s = w[i];
        for k in (i + 1)..n {
            s -= l[k * n + i].conj() * w[k];
        }
        w[i] = s / l[i * n + i].re;
    }
    Some(w)
}

/// Gram matrix `Aᴴ A` (cols × cols).
pub fn gram(a: &CMatrix) -> Vec<C64> {
    let n = a.cols;
    let mut g = vec![C64::new(0.0, 0.0); n * n];
    for r in 0..a.rows {
        let row = a.row(r);
        for i in 0..n {
            let ai = row[i].conj();
            for j in i..n {
                g[i * n + j] += ai * row[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            g[i * n + j] = g[j * n + i].conj();
        }
    }
    g
}
