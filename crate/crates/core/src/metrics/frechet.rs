//! Layout descriptors, Gaussian statistics, a Jacobi eigensolver and the
//! Fréchet distance between Gaussians.

use super::{MetricsError, NormBox};
use crate::doc::Document;

/// Dense square matrix in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut m = Matrix::zeros(n);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), n, "matrix must be square");
            m.data[i * n..(i + 1) * n].copy_from_slice(r);
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Matrix::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.data[i * d.len() + i] = v;
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn matmul(&self, b: &Matrix) -> Matrix {
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * b.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in i + 1..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn symmetrize(&mut self) {
        for i in 0..self.n {
            for j in i + 1..self.n {
                let m = 0.5 * (self.get(i, j) + self.get(j, i));
                self.set(i, j, m);
                self.set(j, i, m);
            }
        }
    }
}

/// Eigendecomposition `A = Q diag(w) Q^T` of a symmetric matrix by cyclic
/// Jacobi rotations. Columns of `Q` are the eigenvectors.
pub fn jacobi_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.n;
    let mut m = a.clone();
    let mut q = Matrix::diag(&vec![1.0; n]);
    let norm: f64 = m.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m.get(i, j) * m.get(i, j);
            }
        }
        if off.sqrt() <= 1e-15 * norm || off == 0.0 {
            break;
        }
        for p in 0..n {
            for r in p + 1..n {
                let apr = m.get(p, r);
                if apr == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let arr = m.get(r, r);
                let theta = (arr - app) / (2.0 * apr);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkr = m.get(k, r);
                    m.set(k, p, c * mkp - s * mkr);
                    m.set(k, r, s * mkp + c * mkr);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mrk = m.get(r, k);
                    m.set(p, k, c * mpk - s * mrk);
                    m.set(r, k, s * mpk + c * mrk);
                }
                m.set(p, r, 0.0);
                m.set(r, p, 0.0);
                for k in 0..n {
                    let qkp = q.get(k, p);
                    let qkr = q.get(k, r);
                    q.set(k, p, c * qkp - s * qkr);
                    q.set(k, r, s * qkp + c * qkr);
                }
            }
        }
    }
    ((0..n).map(|i| m.get(i, i)).collect(), q)
}

/// Square root of a symmetric PSD matrix; negative eigenvalues clamp to 0.
pub fn psd_sqrt(a: &Matrix) -> Matrix {
    let (w, q) = jacobi_eigen(a);
    let n = a.n;
    let mut out = Matrix::zeros(n);
    for k in 0..n {
        let s = w[k].max(0.0).sqrt();
        if s == 0.0 {
            continue;
        }
        for i in 0..n {
            let qi = q.get(i, k) * s;
            for j in 0..n {
                out.data[i * n + j] += qi * q.get(j, k);
            }
        }
    }
    out.symmetrize();
    out
}

/// Fréchet distance between `N(mu1, s1)` and `N(mu2, s2)`, clamped at 0.
pub fn frechet(mu1: &[f64], s1: &Matrix, mu2: &[f64], s2: &Matrix) -> Result<f64, MetricsError> {
    let n = mu1.len();
    if mu2.len() != n || s1.n != n || s2.n != n {
        return Err(MetricsError::InvalidInput(format!(
            "dimension mismatch: means {} and {}, covariances {} and {}",
            n,
            mu2.len(),
            s1.n,
            s2.n
        )));
    }
    for (name, s) in [("first", s1), ("second", s2)] {
        if s.data.iter().any(|v| !v.is_finite()) {
            return Err(MetricsError::InvalidInput(format!("{name} covariance is not finite")));
        }
        let asym = s.asymmetry();
        if asym > 1e-8 {
            return Err(MetricsError::InvalidInput(format!(
                "{name} covariance is not symmetric (max asymmetry {asym:e})"
            )));
        }
    }
    let mean_term: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b) * (a - b)).sum();
    let r1 = psd_sqrt(s1);
    let mut inner = r1.matmul(s2).matmul(&r1);
    inner.symmetrize();
    let (w, _) = jacobi_eigen(&inner);
    let cross: f64 = w.iter().map(|v| v.max(0.0).sqrt()).sum();
    let d = mean_term + s1.trace() + s2.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// Sample mean and unbiased covariance (symmetrized) of row vectors.
pub fn gaussian_stats(rows: &[Vec<f64>]) -> Result<(Vec<f64>, Matrix), MetricsError> {
    if rows.len() < 2 {
        return Err(MetricsError::InsufficientData {
            needed: 2,
            got: rows.len(),
        });
    }
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(MetricsError::InvalidInput("descriptors differ in length".into()));
    }
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = Matrix::zeros(dim);
    let mut centered = vec![0.0; dim];
    for r in rows {
        for ((c, v), m) in centered.iter_mut().zip(r).zip(&mean) {
            *c = v - m;
        }
        for i in 0..dim {
            if centered[i] == 0.0 {
                continue;
            }
            for j in i..dim {
                cov.data[i * dim + j] += centered[i] * centered[j];
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov.get(i, j) / (n - 1.0);
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    Ok((mean, cov))
}

/// Fixed-order descriptor of length `4 * num_categories + 2`: per category
/// (count fraction, mean center x, mean center y, mean area), then
/// (element count / `max_elements`, mean aspect ratio w/h in canvas units).
pub fn layout_features(doc: &Document, num_categories: usize, max_elements: usize) -> Vec<f64> {
    let mut f = vec![0.0; 4 * num_categories + 2];
    let total = doc.elements.len();
    let mut counts = vec![0usize; num_categories];
    let mut aspect = 0.0;
    for e in &doc.elements {
        let b = NormBox::from_bbox(&e.bbox, doc.canvas_w, doc.canvas_h);
        if e.category < num_categories {
            let s = &mut f[4 * e.category..4 * e.category + 4];
            counts[e.category] += 1;
            s[1] += b.x + b.w / 2.0;
            s[2] += b.y + b.h / 2.0;
            s[3] += b.w * b.h;
        }
        if e.bbox.h > 0.0 {
            aspect += e.bbox.w / e.bbox.h;
        }
    }
    for (c, &k) in counts.iter().enumerate() {
        if k > 0 {
            let s = &mut f[4 * c..4 * c + 4];
            s[0] = k as f64 / total as f64;
            s[1] /= k as f64;
            s[2] /= k as f64;
            s[3] /= k as f64;
        }
    }
    let g = 4 * num_categories;
    f[g] = total as f64 / max_elements.max(1) as f64;
    f[g + 1] = if total > 0 { aspect / total as f64 } else { 0.0 };
    f
}
