//! Bernstein basis polynomials and piecewise B-form evaluation.
//!
//! Coefficients are stored globally, simplex-major, and within a simplex in
//! descending lexicographic multi-index order: `(d,0,0), (d-1,1,0), ...,
//! (0,0,d)`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{Simplex, Triangulation};

/// Exponent tuple indexing a Bernstein polynomial or B-coefficient.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    pub fn degree(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `d! / (k_0! k_1! ... k_n!)`
    pub fn multinomial(&self) -> f64 {
        factorial(self.degree()) / self.0.iter().map(|&k| factorial(k)).product::<f64>()
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Number of Bernstein polynomials of degree `d` on an `n`-simplex.
pub fn dhat(d: usize, n: usize) -> usize {
    // (d + n)! / (n! d!) computed without overflow.
    (1..=n).fold(1usize, |acc, k| acc * (d + k) / k)
}

/// All multi-indices with `n + 1` entries summing to `d`, in descending
/// lexicographic order.
pub fn enumerate_multi_indices(d: usize, n: usize) -> Vec<MultiIndex> {
    fn fill(remaining: usize, slots: usize, prefix: &mut Vec<usize>, out: &mut Vec<MultiIndex>) {
        if slots == 1 {
            prefix.push(remaining);
            out.push(MultiIndex(prefix.clone()));
            prefix.pop();
            return;
        }
        for k in (0..=remaining).rev() {
            prefix.push(k);
            fill(remaining - k, slots - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::with_capacity(dhat(d, n));
    fill(d, n + 1, &mut Vec::with_capacity(n + 1), &mut out);
    out
}

/// Bernstein basis polynomial `B_kappa(b) = |kappa|!/kappa! * b^kappa`.
pub fn bernstein(kappa: &MultiIndex, b: &[f64]) -> f64 {
    debug_assert_eq!(kappa.len(), b.len());
    kappa.multinomial() * kappa.0.iter().zip(b).map(|(&k, &bi)| bi.powi(k as i32)).product::<f64>()
}

/// Multi-indices of one degree with their multinomial weights and a reverse
/// lookup.
#[derive(Debug, Clone)]
struct BasisLayout {
    degree: usize,
    indices: Vec<MultiIndex>,
    weights: Vec<f64>,
    position: HashMap<MultiIndex, usize>,
}

impl BasisLayout {
    fn new(degree: usize, n: usize) -> Self {
        let indices = enumerate_multi_indices(degree, n);
        let weights = indices.iter().map(MultiIndex::multinomial).collect();
        let position = indices.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
        BasisLayout { degree, indices, weights, position }
    }

    fn eval_into(&self, b: &[f64], out: &mut [f64]) {
        // powers[i][k] = b_i^k
        let powers: Vec<Vec<f64>> = b
            .iter()
            .map(|&bi| {
                let mut p = Vec::with_capacity(self.degree + 1);
                let mut acc = 1.0;
                for _ in 0..=self.degree {
                    p.push(acc);
                    acc *= bi;
                }
                p
            })
            .collect();
        for ((kappa, w), o) in self.indices.iter().zip(&self.weights).zip(out.iter_mut()) {
            *o = kappa.0.iter().zip(&powers).fold(*w, |acc, (&k, p)| acc * p[k]);
        }
    }
}

/// The spline space `S_d^r` over a triangulation.
#[derive(Debug, Clone)]
pub struct SplineSpace {
    degree: usize,
    continuity: usize,
    triangulation: Arc<Triangulation>,
    layout: BasisLayout,
    lower: BasisLayout,
    // raise[k][i]: position of lower.indices[k] + e_i in the degree-d layout.
    raise: Vec<Vec<usize>>,
}

/// One row of the global regression matrix, stored as the dense block of the
/// simplex containing the query point.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisRow {
    pub simplex: usize,
    pub offset: usize,
    pub values: Vec<f64>,
}

impl BasisRow {
    pub fn to_dense(&self, ahat: usize) -> DVector<f64> {
        let mut v = DVector::zeros(ahat);
        v.rows_mut(self.offset, self.values.len()).copy_from_slice(&self.values);
        v
    }

    pub fn dot(&self, c: &[f64]) -> f64 {
        self.values.iter().zip(&c[self.offset..]).map(|(a, b)| a * b).sum()
    }
}

impl SplineSpace {
    pub fn new(triangulation: Arc<Triangulation>, degree: usize, continuity: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidParam("spline degree must be at least 1".into()));
        }
        if continuity >= degree {
            return Err(Error::InvalidParam(format!(
                "continuity order {continuity} must be below the degree {degree}"
            )));
        }
        let n = triangulation.dim();
        let layout = BasisLayout::new(degree, n);
        let lower = BasisLayout::new(degree - 1, n);
        let raise = lower
            .indices
            .iter()
            .map(|kappa| {
                (0..=n)
                    .map(|i| {
                        let mut up = kappa.clone();
                        up.0[i] += 1;
                        layout.position[&up]
                    })
                    .collect()
            })
            .collect();
        Ok(SplineSpace { degree, continuity, triangulation, layout, lower, raise })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn continuity(&self) -> usize {
        self.continuity
    }

    pub fn dim(&self) -> usize {
        self.triangulation.dim()
    }

    pub fn triangulation(&self) -> &Triangulation {
        &self.triangulation
    }

    pub fn triangulation_arc(&self) -> &Arc<Triangulation> {
        &self.triangulation
    }

    /// Coefficients per simplex.
    pub fn dhat(&self) -> usize {
        self.layout.indices.len()
    }

    /// Total coefficients over the triangulation.
    pub fn ahat(&self) -> usize {
        self.dhat() * self.triangulation.len()
    }

    pub fn multi_indices(&self) -> &[MultiIndex] {
        &self.layout.indices
    }

    /// Local position of `kappa` within a simplex block.
    pub fn local_index(&self, kappa: &MultiIndex) -> Option<usize> {
        self.layout.position.get(kappa).copied()
    }

    pub fn global_index(&self, simplex: usize, kappa: &MultiIndex) -> Option<usize> {
        self.local_index(kappa).map(|k| simplex * self.dhat() + k)
    }

    /// Basis values at barycentric coordinates `b` (one simplex block).
    pub fn bernstein_block(&self, b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dhat()];
        self.layout.eval_into(b, &mut out);
        out
    }

    pub fn basis_row(&self, x: &[f64]) -> Result<BasisRow> {
        let loc = self.triangulation.locate(x)?;
        Ok(BasisRow {
            simplex: loc.simplex,
            offset: loc.simplex * self.dhat(),
            values: self.bernstein_block(&loc.barycentric),
        })
    }

    /// Derivative of the B-form on one simplex along a direction given in
    /// barycentric direction coordinates `a`.
    pub fn derivative_in_block(&self, b: &[f64], a: &[f64], block: &[f64]) -> f64 {
        let lower = &self.lower;
        let mut basis = vec![0.0; lower.indices.len()];
        lower.eval_into(b, &mut basis);
        let sum: f64 = basis
            .iter()
            .zip(&self.raise)
            .map(|(bk, up)| bk * up.iter().zip(a).map(|(&j, ai)| ai * block[j]).sum::<f64>())
            .sum();
        self.degree as f64 * sum
    }

    /// Spatial position of every B-coefficient of a simplex.
    pub fn bnet_points(&self, simplex: &Simplex) -> Vec<(MultiIndex, Vec<f64>)> {
        bnet_points(simplex, self.degree)
    }

    /// Stable fingerprint of degree, continuity and mesh, used to match
    /// checkpoints to spaces.
    pub fn fingerprint(&self) -> String {
        let mut text = format!("d={};r={};", self.degree, self.continuity);
        for v in self.triangulation.vertices() {
            for c in v {
                let _ = write!(text, "{:016x},", c.to_bits());
            }
        }
        for s in self.triangulation.simplices() {
            let _ = write!(text, "{:?};", s.vertex_ids());
        }
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// B-net points `sum_i (kappa_i / d) v_i` of a simplex.
pub fn bnet_points(simplex: &Simplex, degree: usize) -> Vec<(MultiIndex, Vec<f64>)> {
    let d = degree as f64;
    enumerate_multi_indices(degree, simplex.dim())
        .into_iter()
        .map(|kappa| {
            let b: Vec<f64> = kappa.0.iter().map(|&k| k as f64 / d).collect();
            let p = simplex.barycentric_to_cartesian(&b);
            (kappa, p)
        })
        .collect()
}

/// A borrowed spline: a space together with a coefficient slice.
#[derive(Debug, Clone, Copy)]
pub struct SplineView<'a> {
    pub space: &'a SplineSpace,
    pub coefficients: &'a [f64],
}

impl<'a> SplineView<'a> {
    pub fn new(space: &'a SplineSpace, coefficients: &'a [f64]) -> Self {
        debug_assert_eq!(coefficients.len(), space.ahat());
        SplineView { space, coefficients }
    }

    fn block(&self, simplex: usize) -> &'a [f64] {
        let dh = self.space.dhat();
        &self.coefficients[simplex * dh..(simplex + 1) * dh]
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        Ok(self.space.basis_row(x)?.dot(self.coefficients))
    }

    pub fn directional_derivative(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        let loc = self.space.triangulation().locate(x)?;
        let simplex = self.space.triangulation().simplex(loc.simplex);
        let a = simplex.direction_to_barycentric(u);
        Ok(self.space.derivative_in_block(&loc.barycentric, &a, self.block(loc.simplex)))
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let loc = self.space.triangulation().locate(x)?;
        let simplex = self.space.triangulation().simplex(loc.simplex);
        let block = self.block(loc.simplex);
        let n = self.space.dim();
        Ok((0..n)
            .map(|k| {
                let mut e = vec![0.0; n];
                e[k] = 1.0;
                let a = simplex.direction_to_barycentric(&e);
                self.space.derivative_in_block(&loc.barycentric, &a, block)
            })
            .collect())
    }

    /// Value and gradient at `x` from a single point location.
    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let loc = self.space.triangulation().locate(x)?;
        let simplex = self.space.triangulation().simplex(loc.simplex);
        let block = self.block(loc.simplex);
        let value = self.space.bernstein_block(&loc.barycentric).iter().zip(block).map(|(a, b)| a * b).sum();
        let n = self.space.dim();
        let grad = (0..n)
            .map(|k| {
                let mut e = vec![0.0; n];
                e[k] = 1.0;
                let a = simplex.direction_to_barycentric(&e);
                self.space.derivative_in_block(&loc.barycentric, &a, block)
            })
            .collect();
        Ok((value, grad))
    }
}

/// A spline space together with its global coefficient vector.
#[derive(Debug, Clone)]
pub struct SplineFunction {
    space: Arc<SplineSpace>,
    coefficients: DVector<f64>,
}

impl SplineFunction {
    pub fn new(space: Arc<SplineSpace>, coefficients: DVector<f64>) -> Result<Self> {
        if coefficients.len() != space.ahat() {
            return Err(Error::InvalidParam(format!(
                "expected {} coefficients, got {}",
                space.ahat(),
                coefficients.len()
            )));
        }
        Ok(SplineFunction { space, coefficients })
    }

    pub fn zeros(space: Arc<SplineSpace>) -> Self {
        let n = space.ahat();
        SplineFunction { space, coefficients: DVector::zeros(n) }
    }

    /// Coefficients set to the B-net ordinates of `f`, which reproduces any
    /// affine `f` exactly.
    pub fn from_bnet_ordinates(space: Arc<SplineSpace>, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut c = Vec::with_capacity(space.ahat());
        for s in space.triangulation().simplices() {
            c.extend(space.bnet_points(s).iter().map(|(_, p)| f(p)));
        }
        SplineFunction { coefficients: DVector::from_vec(c), space }
    }

    pub fn space(&self) -> &Arc<SplineSpace> {
        &self.space
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn set_coefficients(&mut self, c: DVector<f64>) -> Result<()> {
        if c.len() != self.space.ahat() {
            return Err(Error::InvalidParam("coefficient vector has the wrong length".into()));
        }
        self.coefficients = c;
        Ok(())
    }

    pub fn view(&self) -> SplineView<'_> {
        SplineView::new(&self.space, self.coefficients.as_slice())
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.view().evaluate(x)
    }

    pub fn directional_derivative(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        self.view().directional_derivative(x, u)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.view().gradient(x)
    }

    /// Writes `simplex,kappa0,..,kappan,x1,..,xn,coefficient` rows.
    pub fn write_bnet_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.bnet_csv())?;
        Ok(())
    }

    pub fn bnet_csv(&self) -> String {
        let n = self.space.dim();
        let mut out = String::from("simplex");
        for i in 0..=n {
            let _ = write!(out, ",kappa{i}");
        }
        for i in 1..=n {
            let _ = write!(out, ",x{i}");
        }
        out.push_str(",coefficient\n");
        let dh = self.space.dhat();
        for (j, s) in self.space.triangulation().simplices().iter().enumerate() {
            for (k, (kappa, p)) in self.space.bnet_points(s).into_iter().enumerate() {
                let _ = write!(out, "{j}");
                for e in &kappa.0 {
                    let _ = write!(out, ",{e}");
                }
                for c in &p {
                    let _ = write!(out, ",{c:.16e}");
                }
                let _ = writeln!(out, ",{:.16e}", self.coefficients[j * dh + k]);
            }
        }
        out
    }
}
