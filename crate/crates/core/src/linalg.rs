//! Small dense linear-algebra helpers shared by the IRLS solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{RatemakingError, Result};

/// Relative pivot threshold below which a column is declared collinear.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Cholesky factor `A = L L'` of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    lower: DMatrix<f64>,
}

impl SpdFactor {
    /// Factorizes `a`; a pivot below `PIVOT_TOLERANCE * max pivot` is a rank error
    /// naming the offending column(s) from `names`.
    pub fn new(a: &DMatrix<f64>, names: &[String]) -> Result<Self> {
        let n = a.nrows();
        debug_assert_eq!(n, a.ncols());
        let mut lower = DMatrix::<f64>::zeros(n, n);
        let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0_f64, f64::max);
        let threshold = PIVOT_TOLERANCE * max_diag.max(f64::MIN_POSITIVE);
        let mut bad = Vec::new();
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= lower[(j, k)] * lower[(j, k)];
            }
            if !(d > threshold) {
                bad.push(j);
                continue;
            }
            let ljj = d.sqrt();
            lower[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= lower[(i, k)] * lower[(j, k)];
                }
                lower[(i, j)] = s / ljj;
            }
        }
        if !bad.is_empty() {
            let columns = bad
                .into_iter()
                .map(|j| names.get(j).cloned().unwrap_or_else(|| format!("#{j}")))
                .collect();
            return Err(RatemakingError::Rank { columns });
        }
        Ok(Self { lower })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut y = b.clone();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.lower[(i, k)] * y[k];
            }
            y[i] = s / self.lower[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.lower[(k, i)] * y[k];
            }
            y[i] = s / self.lower[(i, i)];
        }
        y
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::<f64>::zeros(n);
            e[j] = 1.0;
            inv.set_column(j, &self.solve(&e));
        }
        symmetrize(&mut inv);
        inv
    }
}

/// `X' diag(w) X`.
pub fn weighted_gram(x: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let k = x.ncols();
    let mut g = DMatrix::<f64>::zeros(k, k);
    let mut wa = vec![0.0; x.nrows()];
    for a in 0..k {
        let ca = x.column(a);
        for (dst, (xi, w)) in wa.iter_mut().zip(ca.iter().zip(weights)) {
            *dst = xi * w;
        }
        for b in a..k {
            let v: f64 = wa.iter().zip(x.column(b).iter()).map(|(p, q)| p * q).sum();
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    g
}

/// `X' diag(w) y`.
pub fn weighted_xty(x: &DMatrix<f64>, weights: &[f64], y: &[f64]) -> DVector<f64> {
    let wy = DVector::from_iterator(y.len(), weights.iter().zip(y).map(|(w, v)| w * v));
    x.tr_mul(&wy)
}

/// Weighted least squares `argmin Σ wᵢ (yᵢ − xᵢ'b)²`.
pub fn weighted_least_squares(
    x: &DMatrix<f64>,
    weights: &[f64],
    y: &[f64],
    names: &[String],
) -> Result<DVector<f64>> {
    let gram = weighted_gram(x, weights);
    let factor = SpdFactor::new(&gram, names)?;
    Ok(factor.solve(&weighted_xty(x, weights, y)))
}

pub fn ordinary_least_squares(
    x: &DMatrix<f64>,
    y: &[f64],
    names: &[String],
) -> Result<DVector<f64>> {
    let ones = vec![1.0; y.len()];
    weighted_least_squares(x, &ones, y, names)
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Row-major flattening used for serialized covariance matrices.
pub fn to_row_major(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn from_row_major(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, k, |i, j| rows[i][j])
}
