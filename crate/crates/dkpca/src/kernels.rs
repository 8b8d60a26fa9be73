//! Kernel evaluation, Gram matrices, kernel gradients, and the inter-level
//! coupling matrices built from kernel-gradient contractions.
//!
//! Matrix assembly is data-parallel over rows (entries are independent, so
//! results are deterministic); the `parallel` feature toggles rayon.

use nalgebra::{DMatrix, DVector, RowDVector};
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Kernel function of one level.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub enum Kernel {
    Linear,
    /// Gaussian kernel exp(-||x-y||^2 / (2 sigma2)).
    Rbf { sigma2: f64 },
}

impl Kernel {
    pub fn validate(&self) -> Result<()> {
        match self {
            Kernel::Linear => Ok(()),
            Kernel::Rbf { sigma2 } if *sigma2 > 0.0 => Ok(()),
            Kernel::Rbf { sigma2 } => Err(Error::invalid(format!(
                "RBF bandwidth must be positive, got {sigma2}"
            ))),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Kernel::Linear)
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("dimension mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// k(x, y).
pub fn kernel_eval(kernel: Kernel, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    check_dims(x.len(), y.len())?;
    kernel.validate()?;
    Ok(eval_unchecked(kernel, x.as_slice(), y.as_slice()))
}

fn eval_unchecked(kernel: Kernel, x: &[f64], y: &[f64]) -> f64 {
    match kernel {
        Kernel::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
        Kernel::Rbf { sigma2 } => {
            let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            (-d2 / (2.0 * sigma2)).exp()
        }
    }
}

/// Gradient of k(z, y) with respect to its first argument z.
pub fn kernel_grad(kernel: Kernel, z: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    check_dims(z.len(), y.len())?;
    kernel.validate()?;
    Ok(match kernel {
        Kernel::Linear => y.clone(),
        Kernel::Rbf { sigma2 } => {
            let k = eval_unchecked(kernel, z.as_slice(), y.as_slice());
            (y - z) * (k / sigma2)
        }
    })
}

/// Gram matrix K[i, j] = k(a_i, b_j) for the rows of A and B.
pub fn kernel_matrix(kernel: Kernel, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dims(a.ncols(), b.ncols())?;
    kernel.validate()?;
    #[cfg(feature = "parallel")]
    {
        let rows: Vec<RowDVector<f64>> = (0..a.nrows())
            .into_par_iter()
            .map(|i| gram_row(kernel, a, b, i))
            .collect();
        Ok(DMatrix::from_rows(&rows))
    }
    #[cfg(not(feature = "parallel"))]
    {
        kernel_matrix_seq(kernel, a, b)
    }
}

/// Sequential Gram assembly; same contract and bit-identical output as
/// [`kernel_matrix`]. Kept public so benchmarks can compare the two paths.
pub fn kernel_matrix_seq(
    kernel: Kernel,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_dims(a.ncols(), b.ncols())?;
    kernel.validate()?;
    let rows: Vec<RowDVector<f64>> = (0..a.nrows()).map(|i| gram_row(kernel, a, b, i)).collect();
    Ok(DMatrix::from_rows(&rows))
}

fn gram_row(kernel: Kernel, a: &DMatrix<f64>, b: &DMatrix<f64>, i: usize) -> RowDVector<f64> {
    let ai: Vec<f64> = a.row(i).iter().copied().collect();
    RowDVector::from_fn(b.nrows(), |_, j| {
        let bj: Vec<f64> = b.row(j).iter().copied().collect();
        eval_unchecked(kernel, &ai, &bj)
    })
}

/// Kernel-gradient contraction: given points p_1..p_N (rows of `points`) and
/// an N x N weight matrix W, returns the N x s matrix whose row i is
/// sum_n W[i, n] * grad_1 k(p_i, p_n).
///
/// With W = H_next H_next^T this is exactly the coupling matrix of a level;
/// the same contraction also appears in the objective gradient.
pub fn kernel_grad_contraction(
    kernel: Kernel,
    points: &DMatrix<f64>,
    weights: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = points.nrows();
    if weights.nrows() != n || weights.ncols() != n {
        return Err(Error::invalid("weight matrix must be N x N"));
    }
    kernel.validate()?;
    match kernel {
        Kernel::Linear => Ok(weights * points),
        Kernel::Rbf { sigma2 } => {
            let k = kernel_matrix(kernel, points, points)?;
            let row = |i: usize| -> RowDVector<f64> {
                let mut acc = RowDVector::zeros(points.ncols());
                let pi = points.row(i);
                for p in 0..n {
                    let c = weights[(i, p)] * k[(i, p)] / sigma2;
                    if c != 0.0 {
                        acc += (points.row(p) - pi) * c;
                    }
                }
                acc
            };
            #[cfg(feature = "parallel")]
            let rows: Vec<RowDVector<f64>> = (0..n).into_par_iter().map(row).collect();
            #[cfg(not(feature = "parallel"))]
            let rows: Vec<RowDVector<f64>> = (0..n).map(row).collect();
            Ok(DMatrix::from_rows(&rows))
        }
    }
}

/// Sequential counterpart of [`kernel_grad_contraction`]; same contract and
/// bit-identical output. Kept public so benchmarks can compare the two paths.
pub fn kernel_grad_contraction_seq(
    kernel: Kernel,
    points: &DMatrix<f64>,
    weights: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = points.nrows();
    if weights.nrows() != n || weights.ncols() != n {
        return Err(Error::invalid("weight matrix must be N x N"));
    }
    kernel.validate()?;
    match kernel {
        Kernel::Linear => Ok(weights * points),
        Kernel::Rbf { sigma2 } => {
            let k = kernel_matrix_seq(kernel, points, points)?;
            let rows: Vec<RowDVector<f64>> = (0..n)
                .map(|i| {
                    let mut acc = RowDVector::zeros(points.ncols());
                    let pi = points.row(i);
                    for p in 0..n {
                        let c = weights[(i, p)] * k[(i, p)] / sigma2;
                        if c != 0.0 {
                            acc += (points.row(p) - pi) * c;
                        }
                    }
                    acc
                })
                .collect();
            Ok(DMatrix::from_rows(&rows))
        }
    }
}

/// Coupling matrix G_j(H_j, H_{j+1}): row i is
/// sum_n grad k_{j+1}(h_i, h_n) * (h_n^{(j+1)} . h_i^{(j+1)}).
pub fn coupling_matrix(
    kernel_next: Kernel,
    h_j: &DMatrix<f64>,
    h_next: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if h_j.nrows() != h_next.nrows() {
        return Err(Error::invalid(format!(
            "row-count mismatch: {} vs {}",
            h_j.nrows(),
            h_next.nrows()
        )));
    }
    let c = h_next * h_next.transpose();
    kernel_grad_contraction(kernel_next, h_j, &c)
}

/// Sequential counterpart of [`coupling_matrix`]; same contract and
/// bit-identical output.
pub fn coupling_matrix_seq(
    kernel_next: Kernel,
    h_j: &DMatrix<f64>,
    h_next: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if h_j.nrows() != h_next.nrows() {
        return Err(Error::invalid(format!(
            "row-count mismatch: {} vs {}",
            h_j.nrows(),
            h_next.nrows()
        )));
    }
    let c = h_next * h_next.transpose();
    kernel_grad_contraction_seq(kernel_next, h_j, &c)
}

/// Khatri-Rao/block reference form of the coupling matrix:
/// (I_N (x) (H_{j+1} H_{j+1}^T))^T J_K(H_j), evaluated block by block with
/// explicit per-pair kernel gradients. Slow; used to cross-check
/// [`coupling_matrix`].
pub fn coupling_matrix_block(
    kernel_next: Kernel,
    h_j: &DMatrix<f64>,
    h_next: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if h_j.nrows() != h_next.nrows() {
        return Err(Error::invalid("row-count mismatch"));
    }
    let n = h_j.nrows();
    let s = h_j.ncols();
    let c = h_next * h_next.transpose();
    let mut g = DMatrix::zeros(n, s);
    for i in 0..n {
        // Jacobian stack block J_{kappa,i}: row p is grad k(h_i, h_p)^T.
        let hi = h_j.row(i).transpose();
        let mut block = DMatrix::zeros(n, s);
        for p in 0..n {
            let hp = h_j.row(p).transpose();
            let grad = kernel_grad(kernel_next, &hi, &hp)?;
            block.row_mut(p).copy_from(&grad.transpose());
        }
        // Column i of I (x) C is e_i (x) c_i, so the product row is c_i^T block.
        let ci = c.column(i).transpose();
        g.row_mut(i).copy_from(&(ci * block));
    }
    Ok(g)
}

/// T[i, p] = r_i . grad_1 k(p_i, p_p), with r_i the rows of `coeffs`.
/// Appears in the objective gradient through the coupling coefficients.
pub fn kernel_grad_inner(
    kernel: Kernel,
    points: &DMatrix<f64>,
    coeffs: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = points.nrows();
    if coeffs.nrows() != n || coeffs.ncols() != points.ncols() {
        return Err(Error::invalid("coefficient matrix must match points shape"));
    }
    kernel.validate()?;
    match kernel {
        Kernel::Linear => Ok(coeffs * points.transpose()),
        Kernel::Rbf { sigma2 } => {
            let k = kernel_matrix(kernel, points, points)?;
            let mut t = DMatrix::zeros(n, n);
            for i in 0..n {
                let ri = coeffs.row(i);
                let pi = points.row(i);
                for p in 0..n {
                    let rdotu = ri.dot(&(pi - points.row(p)));
                    t[(i, p)] = -k[(i, p)] / sigma2 * rdotu;
                }
            }
            Ok(t)
        }
    }
}

/// Gradient of <R, G(P)> with respect to the points P, where
/// G(P)[i, :] = sum_p C[i, p] grad_1 k(p_i, p_p) and C is held fixed.
pub fn coupling_self_grad(
    kernel: Kernel,
    points: &DMatrix<f64>,
    c: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = points.nrows();
    let s = points.ncols();
    if c.nrows() != n || c.ncols() != n || r.nrows() != n || r.ncols() != s {
        return Err(Error::invalid("shape mismatch in coupling_self_grad"));
    }
    kernel.validate()?;
    match kernel {
        // grad k(p_i, p_p) = p_p, so d<R,G>/dp_q = sum_i C[i, q] r_i.
        Kernel::Linear => Ok(c.transpose() * r),
        Kernel::Rbf { sigma2 } => {
            let k = kernel_matrix(kernel, points, points)?;
            let gamma = 1.0 / sigma2;
            // v_ip = -gamma k_ip C_ip (r_i - gamma (r_i.u_ip) u_ip), u = p_i - p_p;
            // grad row q = sum_p v_qp - sum_i v_iq.
            let mut out = DMatrix::zeros(n, s);
            for i in 0..n {
                let ri = r.row(i);
                let pi = points.row(i);
                for p in 0..n {
                    let coef = -gamma * k[(i, p)] * c[(i, p)];
                    if coef == 0.0 {
                        continue;
                    }
                    let u = pi - points.row(p);
                    let v = (ri - &u * (gamma * ri.dot(&u))) * coef;
                    {
                        let mut row_i = out.row_mut(i);
                        row_i += v.clone();
                    }
                    let mut row_p = out.row_mut(p);
                    row_p -= v;
                }
            }
            Ok(out)
        }
    }
}
