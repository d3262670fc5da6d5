//! Dense row-major matrices and a symmetric eigensolver.
//!
//! Everything the spatial-filter construction needs: the matrices involved
//! are covariance-sized (tens of rows), so a cyclic Jacobi eigensolver is
//! both simple and accurate to machine precision.

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Build from a row-major buffer. The buffer length must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "buffer length {} does not match {}x{}",
            data.len(),
            rows,
            cols
        );
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `self * other`, with a shape check surfaced as an [`Error::Shape`].
    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                (self.rows, self.cols),
                (other.rows, other.cols),
            ));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let lhs = self.row(i);
            let dst = out.row_mut(i);
            for (k, &a) in lhs.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let rhs = &other.data[k * other.cols..(k + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(rhs) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn add(&self, other: &Mat) -> Result<Mat> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape(
                "add",
                (self.rows, self.cols),
                (other.rows, other.cols),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, c: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest |a_ij - a_ji|.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// Stack matrices vertically; all must share the column count.
    pub fn vstack(parts: &[&Mat]) -> Result<Mat> {
        let cols = parts.first().map(|m| m.cols).unwrap_or(0);
        let rows = parts.iter().map(|m| m.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for m in parts {
            if m.cols != cols {
                return Err(Error::shape("vstack", (m.rows, m.cols), ("*", cols)));
            }
            data.extend_from_slice(&m.data);
        }
        Ok(Mat { rows, cols, data })
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Eigendecomposition of a symmetric matrix: `a = V diag(values) V^T`.
///
/// Cyclic Jacobi sweeps; eigenvectors come back as the columns of `vectors`,
/// orthonormal to machine precision. Order is unspecified — use
/// [`sort_eigenpairs`] to pick a direction.
pub fn sym_eig(a: &Mat) -> Result<(Vec<f64>, Mat)> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::shape("sym_eig", (a.rows(), a.cols()), "square"));
    }
    let scale = a.max_abs().max(1e-300);
    if a.asymmetry() > 1e-9 * scale {
        return Err(Error::Numeric(format!(
            "sym_eig: input is not symmetric (max asymmetry {:.3e})",
            a.asymmetry()
        )));
    }

    let mut m = a.clone();
    // Enforce exact symmetry so the sweep arithmetic stays consistent.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    let mut v = Mat::identity(n);

    let off = |m: &Mat| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += m[(i, j)] * m[(i, j)];
            }
        }
        s
    };

    let tol = 1e-30 * scale * scale * (n * n) as f64;
    for _sweep in 0..100 {
        if off(&m) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                // Smaller-angle root keeps the iteration stable.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let values = (0..n).map(|i| m[(i, i)]).collect();
    Ok((values, v))
}

/// Sort direction for [`sort_eigenpairs`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigOrder {
    Descending,
    Ascending,
}

/// Reorder eigenpairs and fix eigenvector signs so the decomposition is
/// deterministic: each column's first component of magnitude above 1e-12
/// is made positive. Repeated eigenvalues keep their sweep order (stable sort).
pub fn sort_eigenpairs(values: Vec<f64>, vectors: Mat, order: EigOrder) -> (Vec<f64>, Mat) {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    match order {
        EigOrder::Descending => idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap()),
        EigOrder::Ascending => idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap()),
    }
    let sorted_values: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
    let mut sorted_vectors = Mat::zeros(n, n);
    for (new_col, &old_col) in idx.iter().enumerate() {
        let mut sign = 1.0;
        for k in 0..n {
            let x = vectors[(k, old_col)];
            if x.abs() > 1e-12 {
                sign = x.signum();
                break;
            }
        }
        for k in 0..n {
            sorted_vectors[(k, new_col)] = sign * vectors[(k, old_col)];
        }
    }
    (sorted_values, sorted_vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = rng.gen_range(-1.0..1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    #[test]
    fn matmul_identity() {
        let m = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let i = Mat::identity(2);
        assert_eq!(i.matmul(&m).unwrap(), m);
        assert_eq!(m.matmul(&i).unwrap(), m);
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let a = Mat::zeros(2, 3);
        let b = Mat::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
    }

    #[test]
    fn eig_reconstructs_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [2usize, 5, 13, 22] {
            let a = random_symmetric(n, &mut rng);
            let (vals, vecs) = sym_eig(&a).unwrap();
            // V diag(vals) V^T == A
            let mut lam = Mat::zeros(n, n);
            for i in 0..n {
                lam[(i, i)] = vals[i];
            }
            let rec = vecs.matmul(&lam).unwrap().matmul(&vecs.transpose()).unwrap();
            for i in 0..n {
                for j in 0..n {
                    assert!((rec[(i, j)] - a[(i, j)]).abs() < 1e-10, "n={n} ({i},{j})");
                }
            }
            // Orthonormal columns.
            let vtv = vecs.transpose().matmul(&vecs).unwrap();
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((vtv[(i, j)] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn eig_rejects_asymmetric() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![0.5, 1.0]]);
        assert!(sym_eig(&a).is_err());
    }

    #[test]
    fn eigenpair_sorting_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_symmetric(6, &mut rng);
        let (vals, vecs) = sym_eig(&a).unwrap();
        let (v1, m1) = sort_eigenpairs(vals.clone(), vecs.clone(), EigOrder::Descending);
        let (v2, m2) = sort_eigenpairs(vals, vecs, EigOrder::Descending);
        assert_eq!(v1, v2);
        assert_eq!(m1, m2);
        for w in v1.windows(2) {
            assert!(w[0] >= w[1]);
        }
        // Sign convention: first non-negligible component of each column positive.
        for c in 0..6 {
            let first = (0..6).map(|r| m1[(r, c)]).find(|x| x.abs() > 1e-12).unwrap();
            assert!(first > 0.0);
        }
    }
}
