//! Smoothness constraints between neighbouring simplices and the orthogonal
//! projector onto their null space.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SVD};

use crate::error::{Error, Result};
use crate::spline::{bernstein, enumerate_multi_indices, MultiIndex, SplineSpace};

/// Which facet condition a row of `H` encodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    /// Simplex whose single coefficient appears with weight +1.
    pub simplex: usize,
    /// Neighbour whose coefficients are combined with Bernstein weights.
    pub neighbour: usize,
    /// Derivative order across the facet.
    pub order: usize,
    /// Exponents on the shared facet vertices, in facet order.
    pub facet_index: Vec<usize>,
}

/// Linear constraints `H c = 0` encoding C^r continuity.
#[derive(Debug, Clone)]
pub struct SmoothnessMatrix {
    pub h: DMatrix<f64>,
    pub rows: Vec<ConstraintRow>,
}

impl SmoothnessMatrix {
    pub fn num_constraints(&self) -> usize {
        self.h.nrows()
    }
}

/// For every interior facet `(t_i, t_j)` with `i < j` and every order
/// `m = 0..=r`, emits one row per facet multi-index `k'` with `|k'| = d - m`:
///
/// `c^{t_i}_{(k', m)} - sum_{|g| = m} c^{t_j}_{(k', 0) + g} B^m_g(w) = 0`
///
/// where both simplices are re-indexed with the shared facet vertices first
/// (same order) and the opposite vertex last, and `w` is the barycentric
/// coordinate of `t_i`'s opposite vertex relative to `t_j`.
pub fn build_smoothness_matrix(space: &SplineSpace) -> Result<SmoothnessMatrix> {
    let tri = space.triangulation();
    let d = space.degree();
    let r = space.continuity();
    let n = space.dim();
    let dh = space.dhat();

    let mut entries: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut meta = Vec::new();

    for facet in tri.facets() {
        let (ti, tj) = facet.simplices;
        let (oi, oj) = facet.opposite;
        // Position of each reordered vertex in the simplex's native order.
        let native = |simplex: usize, opposite: usize| -> Result<Vec<usize>> {
            let ids = tri.simplex(simplex).vertex_ids();
            facet
                .vertex_ids
                .iter()
                .chain(std::iter::once(&opposite))
                .map(|v| {
                    ids.iter().position(|x| x == v).ok_or_else(|| {
                        Error::InvalidTriangulation(format!("vertex {v} missing from simplex {simplex}"))
                    })
                })
                .collect()
        };
        let perm_i = native(ti, oi)?;
        let perm_j = native(tj, oj)?;

        let w_native = tri.simplex(tj).cartesian_to_barycentric(&tri.vertices()[oi]);
        let w: Vec<f64> = perm_j.iter().map(|&p| w_native[p]).collect();

        // Reordered multi-index -> global coefficient index.
        let global = |simplex: usize, perm: &[usize], reordered: &[usize]| -> usize {
            let mut kappa = vec![0; n + 1];
            for (&k, &p) in reordered.iter().zip(perm) {
                kappa[p] = k;
            }
            simplex * dh + space.local_index(&MultiIndex(kappa)).expect("valid multi-index")
        };

        for m in 0..=r {
            let gammas = enumerate_multi_indices(m, n);
            for facet_index in enumerate_multi_indices(d - m, n - 1) {
                let mut row = Vec::with_capacity(1 + gammas.len());
                let mut lhs = facet_index.0.clone();
                lhs.push(m);
                row.push((global(ti, &perm_i, &lhs), 1.0));
                for gamma in &gammas {
                    let mut rhs = facet_index.0.clone();
                    rhs.push(0);
                    for (a, g) in rhs.iter_mut().zip(&gamma.0) {
                        *a += g;
                    }
                    row.push((global(tj, &perm_j, &rhs), -bernstein(gamma, &w)));
                }
                entries.push(row);
                meta.push(ConstraintRow { simplex: ti, neighbour: tj, order: m, facet_index: facet_index.0 });
            }
        }
    }

    let mut h = DMatrix::zeros(entries.len(), space.ahat());
    for (i, row) in entries.iter().enumerate() {
        for &(col, val) in row {
            h[(i, col)] += val;
        }
    }
    Ok(SmoothnessMatrix { h, rows: meta })
}

/// `Z = I - H^+ H` together with an orthonormal basis of its range.
#[derive(Debug, Clone)]
pub struct NullSpaceProjector {
    pub z: DMatrix<f64>,
    /// Columns form an orthonormal basis of the null space of `H`.
    pub basis: DMatrix<f64>,
    pub rank_h: usize,
    pub svd_tolerance: f64,
}

impl NullSpaceProjector {
    pub fn dim(&self) -> usize {
        self.z.nrows()
    }

    /// Number of free parameters, `ahat - rank(H)`.
    pub fn free_parameters(&self) -> usize {
        self.basis.ncols()
    }

    pub fn identity(ahat: usize) -> Self {
        NullSpaceProjector {
            z: DMatrix::identity(ahat, ahat),
            basis: DMatrix::identity(ahat, ahat),
            rank_h: 0,
            svd_tolerance: 0.0,
        }
    }
}

/// Projector onto the null space of `h` via a singular value decomposition.
/// Singular values at or below `max(rows, cols) * eps * sigma_max` count as zero.
pub fn null_space_projector(h: &DMatrix<f64>) -> Result<NullSpaceProjector> {
    let (rows, cols) = h.shape();
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("smoothness matrix has non-finite entries".into()));
    }
    if rows == 0 || h.iter().all(|&v| v == 0.0) {
        return Ok(NullSpaceProjector::identity(cols));
    }

    // Pad to at least square so the decomposition returns a full right basis.
    let padded;
    let a = if rows < cols {
        padded = {
            let mut p = DMatrix::zeros(cols, cols);
            p.rows_mut(0, rows).copy_from(h);
            p
        };
        &padded
    } else {
        h
    };

    let svd = SVD::try_new(a.clone(), false, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("SVD of the smoothness matrix did not converge".into()))?;
    let v_t = svd.v_t.as_ref().expect("requested right singular vectors");
    let sigma = &svd.singular_values;
    let sigma_max = sigma.iter().cloned().fold(0.0, f64::max);
    let tol = rows.max(cols) as f64 * f64::EPSILON * sigma_max;

    let null: Vec<usize> = (0..sigma.len()).filter(|&k| sigma[k] <= tol).collect();
    let rank_h = cols - null.len();
    let mut basis = DMatrix::zeros(cols, null.len());
    for (c, &k) in null.iter().enumerate() {
        basis.set_column(c, &v_t.row(k).transpose());
    }
    let mut z = &basis * basis.transpose();
    z = (&z + z.transpose()) * 0.5;
    Ok(NullSpaceProjector { z, basis, rank_h, svd_tolerance: tol })
}

/// Writes a dense matrix as comma separated rows.
pub fn write_matrix_csv(m: &DMatrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::with_capacity(m.nrows() * m.ncols() * 8);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{:.16e}", m[(i, j)]);
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
