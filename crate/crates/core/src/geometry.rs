//! Simplices, barycentric coordinates and triangulations of the state domain.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute slack on barycentric coordinates when testing membership.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

const DEGENERACY_TOL: f64 = 1e-12;
const ROUND_TRIP_TOL: f64 = 1e-10;

/// A non-degenerate n-simplex with its Cartesian to barycentric map cached.
#[derive(Debug, Clone)]
pub struct Simplex {
    vertex_ids: Vec<usize>,
    vertices: Vec<Vec<f64>>,
    // Inverse of the (n+1)x(n+1) matrix whose columns are [v_i; 1].
    to_bary: DMatrix<f64>,
    volume: f64,
}

impl Simplex {
    /// Builds a simplex from `n + 1` points in `R^n`.
    ///
    /// `scale` is the length scale of the surrounding domain; the simplex is
    /// rejected when the determinant of its edge matrix is below
    /// `1e-12 * scale^n`.
    pub fn new(vertex_ids: Vec<usize>, vertices: Vec<Vec<f64>>, scale: f64) -> Result<Self> {
        let n = vertices.first().map(Vec::len).unwrap_or(0);
        if n == 0 || vertices.len() != n + 1 || vertex_ids.len() != n + 1 {
            return Err(Error::InvalidTriangulation(format!(
                "a simplex in R^{n} needs {} vertices, got {}",
                n + 1,
                vertices.len()
            )));
        }
        if vertices.iter().any(|v| v.len() != n || v.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidTriangulation(
                "simplex vertices must be finite and share one dimension".into(),
            ));
        }

        let edges = DMatrix::from_fn(n, n, |r, c| vertices[c + 1][r] - vertices[0][r]);
        let det = edges.determinant();
        if det.abs() <= DEGENERACY_TOL * scale.powi(n as i32) {
            return Err(Error::InvalidTriangulation(format!(
                "degenerate simplex {vertex_ids:?} (edge determinant {det:e})"
            )));
        }

        let homogeneous =
            DMatrix::from_fn(n + 1, n + 1, |r, c| if r < n { vertices[c][r] } else { 1.0 });
        let to_bary = homogeneous.try_inverse().ok_or_else(|| {
            Error::InvalidTriangulation(format!("singular simplex {vertex_ids:?}"))
        })?;

        let factorial: f64 = (1..=n).map(|k| k as f64).product();
        let simplex = Simplex { vertex_ids, vertices, to_bary, volume: det.abs() / factorial };

        for (i, v) in simplex.vertices.iter().enumerate() {
            let b = simplex.cartesian_to_barycentric(v);
            let off = b
                .iter()
                .enumerate()
                .map(|(k, bk)| (bk - if k == i { 1.0 } else { 0.0 }).abs())
                .fold(0.0, f64::max);
            if off > ROUND_TRIP_TOL {
                return Err(Error::InvalidTriangulation(format!(
                    "barycentric transform of simplex {:?} is ill-conditioned",
                    simplex.vertex_ids
                )));
            }
        }
        Ok(simplex)
    }

    pub fn dim(&self) -> usize {
        self.vertices.len() - 1
    }

    pub fn vertex_ids(&self) -> &[usize] {
        &self.vertex_ids
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn centroid(&self) -> Vec<f64> {
        let w = 1.0 / self.vertices.len() as f64;
        (0..self.dim())
            .map(|k| self.vertices.iter().map(|v| v[k]).sum::<f64>() * w)
            .collect()
    }

    pub fn cartesian_to_barycentric(&self, x: &[f64]) -> Vec<f64> {
        self.apply(x, 1.0)
    }

    /// Barycentric coordinates of a direction vector; they sum to zero.
    pub fn direction_to_barycentric(&self, u: &[f64]) -> Vec<f64> {
        self.apply(u, 0.0)
    }

    pub fn barycentric_to_cartesian(&self, b: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|k| self.vertices.iter().zip(b).map(|(v, bi)| v[k] * bi).sum())
            .collect()
    }

    fn apply(&self, x: &[f64], last: f64) -> Vec<f64> {
        let n = self.dim();
        debug_assert_eq!(x.len(), n);
        (0..=n)
            .map(|r| {
                let mut acc = self.to_bary[(r, n)] * last;
                for (k, xk) in x.iter().enumerate() {
                    acc += self.to_bary[(r, k)] * xk;
                }
                acc
            })
            .collect()
    }
}

/// Axis-aligned bounding box of the triangulated domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.lower.len()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(xi, (lo, hi))| *xi >= lo - tol && *xi <= hi + tol)
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(lo, hi)| hi - lo).product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(lo, hi)| 0.5 * (lo + hi)).collect()
    }

    /// Largest side length of the box.
    pub fn scale(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(lo, hi)| hi - lo).fold(0.0, f64::max)
    }
}

/// An interior facet shared by two simplices.
#[derive(Debug, Clone, PartialEq)]
pub struct Facet {
    /// Sorted global ids of the facet's vertices.
    pub vertex_ids: Vec<usize>,
    /// The two simplices sharing the facet, lower index first.
    pub simplices: (usize, usize),
    /// The vertex of each simplex that is not on the facet.
    pub opposite: (usize, usize),
}

/// A conforming partition of an axis-aligned box into simplices.
///
/// Immutable after construction.
#[derive(Debug, Clone)]
pub struct Triangulation {
    vertices: Vec<Vec<f64>>,
    simplices: Vec<Simplex>,
    facets: Vec<Facet>,
    bounds: Bounds,
}

/// On-disk form of a triangulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangulationFile {
    pub vertices: Vec<Vec<f64>>,
    pub simplices: Vec<Vec<usize>>,
}

/// Result of point location.
#[derive(Debug, Clone, PartialEq)]
pub struct Location {
    pub simplex: usize,
    pub barycentric: Vec<f64>,
}

impl Triangulation {
    /// Validates and assembles a triangulation from raw vertices and simplex
    /// index tuples (0-based).
    pub fn new(vertices: Vec<Vec<f64>>, simplices: Vec<Vec<usize>>) -> Result<Self> {
        let n = match vertices.first() {
            Some(v) if !v.is_empty() => v.len(),
            _ => return Err(Error::InvalidTriangulation("no vertices".into())),
        };
        if simplices.is_empty() {
            return Err(Error::InvalidTriangulation("no simplices".into()));
        }
        if vertices.iter().any(|v| v.len() != n || v.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidTriangulation("vertices must be finite points of equal dimension".into()));
        }

        let lower: Vec<f64> =
            (0..n).map(|k| vertices.iter().map(|v| v[k]).fold(f64::INFINITY, f64::min)).collect();
        let upper: Vec<f64> =
            (0..n).map(|k| vertices.iter().map(|v| v[k]).fold(f64::NEG_INFINITY, f64::max)).collect();
        let bounds = Bounds { lower, upper };
        let scale = bounds.scale();

        let mut built = Vec::with_capacity(simplices.len());
        for ids in &simplices {
            if ids.len() != n + 1 {
                return Err(Error::InvalidTriangulation(format!(
                    "simplex {ids:?} must list {} vertices",
                    n + 1
                )));
            }
            if let Some(bad) = ids.iter().find(|&&i| i >= vertices.len()) {
                return Err(Error::InvalidTriangulation(format!("vertex index {bad} out of range")));
            }
            let pts = ids.iter().map(|&i| vertices[i].clone()).collect();
            built.push(Simplex::new(ids.clone(), pts, scale)?);
        }

        let facets = Self::facet_adjacency(&built, &vertices)?;

        Ok(Triangulation { vertices, simplices: built, facets, bounds })
    }

    fn facet_adjacency(simplices: &[Simplex], vertices: &[Vec<f64>]) -> Result<Vec<Facet>> {
        let mut owners: BTreeMap<Vec<usize>, Vec<(usize, usize)>> = BTreeMap::new();
        for (s, simplex) in simplices.iter().enumerate() {
            let ids = simplex.vertex_ids();
            for (skip, &out) in ids.iter().enumerate() {
                let mut key: Vec<usize> =
                    ids.iter().enumerate().filter(|(k, _)| *k != skip).map(|(_, &v)| v).collect();
                key.sort_unstable();
                owners.entry(key).or_default().push((s, out));
            }
        }

        let mut facets = Vec::new();
        for (key, own) in owners {
            match own.as_slice() {
                [(a, oa), (b, ob)] => {
                    // The two opposite vertices must lie on different sides of the facet.
                    let wa = simplices[*b].cartesian_to_barycentric(&vertices[*oa]);
                    let pos = simplices[*b].vertex_ids().iter().position(|v| v == ob).unwrap();
                    if wa[pos] >= 0.0 {
                        return Err(Error::InvalidTriangulation(format!(
                            "simplices {a} and {b} overlap across facet {key:?}"
                        )));
                    }
                    facets.push(Facet { vertex_ids: key, simplices: (*a, *b), opposite: (*oa, *ob) });
                }
                // Unshared facets form the domain boundary.
                [_] => {}
                _ => {
                    return Err(Error::InvalidTriangulation(format!(
                        "facet {key:?} is shared by {} simplices",
                        own.len()
                    )))
                }
            }
        }
        facets.sort_by_key(|f| (f.simplices, f.vertex_ids.clone()));
        Ok(facets)
    }

    /// Splits each cell of a rectangular grid into two triangles.
    ///
    /// Diagonals follow a Union-Jack pattern anchored at the central grid
    /// vertex: in every cell the diagonal joins the two corners whose grid
    /// index offsets from the anchor have an even sum. For grids with an even
    /// number of cells along both axes the result is mirror symmetric about
    /// both center lines, hence point symmetric about the domain center.
    pub fn grid(theta_breaks: &[f64], thetadot_breaks: &[f64]) -> Result<Self> {
        for (name, breaks) in [("theta", theta_breaks), ("thetadot", thetadot_breaks)] {
            if breaks.len() < 2 {
                return Err(Error::InvalidGrid(format!("{name} needs at least 2 breaks")));
            }
            if breaks.iter().any(|b| !b.is_finite()) {
                return Err(Error::InvalidGrid(format!("{name} breaks must be finite")));
            }
            if breaks.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidGrid(format!("{name} breaks must be strictly increasing")));
            }
        }

        let nx = theta_breaks.len();
        let ny = thetadot_breaks.len();
        let id = |i: usize, j: usize| j * nx + i;

        let mut vertices = Vec::with_capacity(nx * ny);
        for &td in thetadot_breaks {
            for &th in theta_breaks {
                vertices.push(vec![th, td]);
            }
        }

        let (anchor_x, anchor_y) = ((nx - 1) / 2, (ny - 1) / 2);
        let mut simplices = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let (p00, p10, p01, p11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
                let parity = (i + j + anchor_x + anchor_y) % 2;
                if parity == 0 {
                    simplices.push(vec![p00, p10, p11]);
                    simplices.push(vec![p00, p11, p01]);
                } else {
                    simplices.push(vec![p00, p10, p01]);
                    simplices.push(vec![p10, p11, p01]);
                }
            }
        }
        Self::new(vertices, simplices)
    }

    pub fn from_file_data(file: TriangulationFile) -> Result<Self> {
        Self::new(file.vertices, file.simplices)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: TriangulationFile = serde_json::from_str(&text)?;
        Self::from_file_data(file)
    }

    pub fn to_file_data(&self) -> TriangulationFile {
        TriangulationFile {
            vertices: self.vertices.clone(),
            simplices: self.simplices.iter().map(|s| s.vertex_ids().to_vec()).collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file_data())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.bounds.lower.len()
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn simplices(&self) -> &[Simplex] {
        &self.simplices
    }

    pub fn simplex(&self, index: usize) -> &Simplex {
        &self.simplices[index]
    }

    pub fn len(&self) -> usize {
        self.simplices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.simplices.is_empty()
    }

    /// Interior facets, sorted by simplex pair.
    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    /// Finds the simplex containing `x`. On shared facets the simplex with
    /// the smallest index wins.
    pub fn locate(&self, x: &[f64]) -> Result<Location> {
        if x.len() != self.dim() || !self.bounds.contains(x, MEMBERSHIP_TOL) {
            return Err(Error::OutOfDomain(x.to_vec()));
        }
        for (index, simplex) in self.simplices.iter().enumerate() {
            let b = simplex.cartesian_to_barycentric(x);
            if b.iter().all(|&bi| bi >= -MEMBERSHIP_TOL) {
                return Ok(Location { simplex: index, barycentric: b });
            }
        }
        Err(Error::OutOfDomain(x.to_vec()))
    }
}
