//! Dense symmetric eigendecomposition, Stiefel projection, and subspace
//! comparison utilities with a deterministic ordering/sign convention.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative threshold below which singular values count as zero.
pub const RANK_TOL: f64 = 1e-12;
/// Allowed asymmetry before [`sym_eig_desc`] rejects its input.
pub const SYMMETRY_TOL: f64 = 1e-8;
/// Orthonormality tolerance for inputs of [`principal_angles`].
pub const ORTHONORMALITY_TOL: f64 = 1e-8;
/// Relative tolerance for clustering equal eigenvalues.
pub const EIG_CLUSTER_TOL: f64 = 1e-12;

/// Eigenvalues sorted descending with orthonormal eigenvectors aligned to
/// them. Sign convention: in each column the entry of largest absolute value
/// is positive (ties resolved at the lowest row index).
#[derive(Debug, Clone)]
pub struct EigPairs {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// Flips each column so its largest-magnitude entry is positive.
pub fn normalize_signs(vectors: &mut DMatrix<f64>) {
    for j in 0..vectors.ncols() {
        let mut best = 0usize;
        let mut best_abs = f64::NEG_INFINITY;
        for i in 0..vectors.nrows() {
            let a = vectors[(i, j)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if vectors[(best, j)] < 0.0 {
            let mut col = vectors.column_mut(j);
            col.neg_mut();
        }
    }
}

/// Full symmetric eigendecomposition, descending, sign-normalized.
/// The input is symmetrized as (S + S^T)/2 after a max-norm symmetry check.
pub fn sym_eig_desc(s: &DMatrix<f64>) -> Result<EigPairs> {
    if s.nrows() != s.ncols() {
        return Err(Error::invalid("matrix must be square"));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix contains non-finite entries"));
    }
    let asym = (s - s.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return Err(Error::invalid(format!(
            "matrix is not symmetric (max asymmetry {asym:.3e})"
        )));
    }
    let sym = (s + s.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let m = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let values = DVector::from_fn(m, |i, _| eig.eigenvalues[order[i]]);
    let mut vectors = DMatrix::zeros(m, m);
    for (j, &src) in order.iter().enumerate() {
        vectors.set_column(j, &eig.eigenvectors.column(src));
    }
    normalize_signs(&mut vectors);
    sort_degenerate_clusters(&values, &mut vectors);
    Ok(EigPairs { values, vectors })
}

/// Within clusters of (numerically) equal eigenvalues, orders the
/// sign-normalized eigenvectors lexicographically. Stable but not canonical.
fn sort_degenerate_clusters(values: &DVector<f64>, vectors: &mut DMatrix<f64>) {
    let m = values.len();
    if m == 0 {
        return;
    }
    let scale = values.amax().max(1e-300);
    let mut start = 0;
    while start < m {
        let mut end = start + 1;
        while end < m && (values[end - 1] - values[end]).abs() <= EIG_CLUSTER_TOL * scale {
            end += 1;
        }
        if end - start > 1 {
            let mut cols: Vec<DVector<f64>> =
                (start..end).map(|j| vectors.column(j).into_owned()).collect();
            cols.sort_by(|a, b| {
                for i in 0..a.len() {
                    match a[i].partial_cmp(&b[i]).unwrap() {
                        std::cmp::Ordering::Equal => continue,
                        other => return other.reverse(),
                    }
                }
                std::cmp::Ordering::Equal
            });
            for (off, col) in cols.iter().enumerate() {
                vectors.set_column(start + off, col);
            }
        }
        start = end;
    }
}

/// Euclidean projection onto the Stiefel manifold St(s, N): U V^T from the
/// compact SVD of A. Rejects rank-deficient inputs.
pub fn stiefel_project(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() < a.ncols() {
        return Err(Error::invalid("need at least as many rows as columns"));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax <= 0.0 || smin <= RANK_TOL * smax {
        return Err(Error::DegenerateInput(format!(
            "rank-deficient matrix: sigma_min/sigma_max = {:.3e}",
            if smax > 0.0 { smin / smax } else { 0.0 }
        )));
    }
    let u = svd.u.as_ref().expect("svd requested u");
    let vt = svd.v_t.as_ref().expect("svd requested v_t");
    Ok(u * vt)
}

/// Principal angles between the column spans of two orthonormal matrices,
/// ascending, in [0, pi/2].
pub fn principal_angles(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DVector<f64>> {
    if u.nrows() != v.nrows() || u.ncols() != v.ncols() {
        return Err(Error::invalid("subspace bases must have matching shapes"));
    }
    for (name, m) in [("U", u), ("V", v)] {
        let gram = m.transpose() * m;
        let err = (gram - DMatrix::identity(m.ncols(), m.ncols())).amax();
        if err > ORTHONORMALITY_TOL {
            return Err(Error::invalid(format!(
                "{name} is not orthonormal (max deviation {err:.3e})"
            )));
        }
    }
    let svd = (u.transpose() * v).svd(false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(DVector::from_fn(sv.len(), |i, _| sv[i].clamp(0.0, 1.0).acos()))
}

/// Max-norm deviation of H^T H from the identity.
pub fn orthonormality_error(h: &DMatrix<f64>) -> f64 {
    (h.transpose() * h - DMatrix::identity(h.ncols(), h.ncols())).amax()
}
