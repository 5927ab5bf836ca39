//! Principal component analysis via Jacobi eigendecomposition of the
//! covariance matrix. Feature counts here are small (a few dozen), so the
//! O(d^3) sweep cost is irrelevant and the result is deterministic.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PcaModel {
    /// (d_reduced, d_raw); rows are orthonormal principal directions sorted
    /// by explained variance, sign-fixed so the largest-magnitude loading is
    /// positive.
    pub components: Array2<f64>,
    /// Per-feature means of the fitted data.
    pub mean: Array1<f64>,
    /// Explained variance per kept component.
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn d_reduced(&self) -> usize {
        self.components.nrows()
    }

    pub fn d_raw(&self) -> usize {
        self.components.ncols()
    }
}

/// Fits the top `d_reduced` principal directions of mean-centered `rows`.
pub fn fit_pca(rows: &Array2<f64>, d_reduced: usize) -> Result<PcaModel> {
    let (n, d) = rows.dim();
    if n < 2 {
        return Err(Error::config(format!("pca needs at least 2 rows, got {n}")));
    }
    if d_reduced == 0 {
        return Err(Error::config("pca target dimension must be >= 1"));
    }
    if d_reduced > d {
        return Err(Error::dimension(format!(
            "pca target dimension {d_reduced} exceeds raw dimension {d}"
        )));
    }

    let mean = rows.mean_axis(ndarray::Axis(0)).expect("n >= 2");
    let centered = rows - &mean.view().insert_axis(ndarray::Axis(0));
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);

    let (eigvals, eigvecs) = jacobi_eigen(&cov);
    // Order components by descending eigenvalue; ties keep index order.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eigvals[b]
            .partial_cmp(&eigvals[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut components = Array2::zeros((d_reduced, d));
    let mut eigenvalues = Vec::with_capacity(d_reduced);
    for (row, &idx) in order.iter().take(d_reduced).enumerate() {
        let col = eigvecs.column(idx);
        // Sign convention: the entry with the largest magnitude is positive.
        let mut lead = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[lead].abs() + 1e-15 {
                lead = i;
            }
        }
        let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        for (j, v) in col.iter().enumerate() {
            components[[row, j]] = sign * v;
        }
        eigenvalues.push(eigvals[idx].max(0.0));
    }

    Ok(PcaModel {
        components,
        mean,
        eigenvalues,
    })
}

/// Projects rows into the reduced space: `(rows - mean) · components^T`.
pub fn apply_pca(m: &PcaModel, rows: &Array2<f64>) -> Result<Array2<f64>> {
    if rows.ncols() != m.d_raw() {
        return Err(Error::dimension(format!(
            "pca expects {} features, got {}",
            m.d_raw(),
            rows.ncols()
        )));
    }
    let centered = rows - &m.mean.view().insert_axis(ndarray::Axis(0));
    Ok(centered.dot(&m.components.t()))
}

/// Maps reduced rows back to the raw space (used by tests to measure
/// reconstruction error).
pub fn reconstruct_pca(m: &PcaModel, reduced: &Array2<f64>) -> Result<Array2<f64>> {
    if reduced.ncols() != m.d_reduced() {
        return Err(Error::dimension(format!(
            "pca reconstruction expects {} components, got {}",
            m.d_reduced(),
            reduced.ncols()
        )));
    }
    Ok(reduced.dot(&m.components) + m.mean.view().insert_axis(ndarray::Axis(0)))
}

/// Cyclic Jacobi sweeps on a symmetric matrix. Returns eigenvalues and the
/// matrix of eigenvectors as columns.
fn jacobi_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let d = a.nrows();
    let mut m = a.clone();
    let mut v: Array2<f64> = Array2::eye(d);
    let tol = 1e-14 * off_diag_norm(&m).max(1.0);

    for _sweep in 0..128 {
        if off_diag_norm(&m) <= tol {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[[p, q]];
                if apq.abs() <= tol / (d as f64 * d as f64).max(1.0) {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..d {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..d {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let eig = (0..d).map(|i| m[[i, i]]).collect();
    (eig, v)
}

fn off_diag_norm(m: &Array2<f64>) -> f64 {
    let d = m.nrows();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                acc += m[[i, j]] * m[[i, j]];
            }
        }
    }
    acc.sqrt()
}
