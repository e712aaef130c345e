#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use splinedp::config::LearningSetup;
use splinedp::{SplineSpace, Triangulation};

pub fn pendulum_breaks() -> (Vec<f64>, Vec<f64>) {
    (
        vec![-PI, -PI / 2.0, 0.0, PI / 2.0, PI],
        vec![-2.0 * PI, -PI, 0.0, PI, 2.0 * PI],
    )
}

pub fn pendulum_grid() -> Triangulation {
    let (th, td) = pendulum_breaks();
    Triangulation::grid(&th, &td).unwrap()
}

pub fn space(tri: Triangulation, d: usize, r: usize) -> Arc<SplineSpace> {
    Arc::new(SplineSpace::new(Arc::new(tri), d, r).unwrap())
}

pub fn setup(tri: Triangulation, d: usize, r: usize) -> LearningSetup {
    LearningSetup::new(space(tri, d, r)).unwrap()
}

/// The 32 triangles of the reference mesh figure, in degrees and deg/s.
pub const FIGURE_TRIANGLES: [[(i32, i32); 3]; 32] = [
    [(-180, -360), (-90, -360), (-90, -180)],
    [(-180, -360), (-180, -180), (-90, -180)],
    [(-180, -180), (-180, 0), (-90, -180)],
    [(-180, 0), (-90, -180), (-90, 0)],
    [(-90, -360), (-90, -180), (0, -360)],
    [(-90, -180), (0, -360), (0, -180)],
    [(-90, -180), (0, -180), (0, 0)],
    [(-90, -180), (-90, 0), (0, 0)],
    [(0, -360), (90, -360), (90, -180)],
    [(0, -360), (0, -180), (90, -180)],
    [(0, -180), (0, 0), (90, -180)],
    [(0, 0), (90, -180), (90, 0)],
    [(90, -360), (90, -180), (180, -360)],
    [(90, -180), (180, -360), (180, -180)],
    [(90, -180), (180, -180), (180, 0)],
    [(90, -180), (90, 0), (180, 0)],
    [(-180, 0), (-90, 0), (-90, 180)],
    [(-180, 0), (-180, 180), (-90, 180)],
    [(-180, 180), (-180, 360), (-90, 180)],
    [(-180, 360), (-90, 180), (-90, 360)],
    [(-90, 0), (0, 0), (-90, 180)],
    [(0, 0), (-90, 180), (0, 180)],
    [(-90, 180), (0, 180), (0, 360)],
    [(-90, 180), (-90, 360), (0, 360)],
    [(0, 0), (90, 0), (90, 180)],
    [(0, 0), (0, 180), (90, 180)],
    [(0, 180), (0, 360), (90, 180)],
    [(0, 360), (90, 180), (90, 360)],
    [(90, 0), (180, 0), (90, 180)],
    [(180, 0), (90, 180), (180, 180)],
    [(90, 180), (180, 180), (180, 360)],
    [(90, 180), (90, 360), (180, 360)],
];

/// Triangles as sorted vertex lists in integer degrees, for set comparison.
pub fn triangles_in_degrees(tri: &Triangulation) -> Vec<Vec<(i32, i32)>> {
    let mut out: Vec<Vec<(i32, i32)>> = tri
        .simplices()
        .iter()
        .map(|s| {
            let mut v: Vec<(i32, i32)> = s
                .vertices()
                .iter()
                .map(|p| ((p[0].to_degrees()).round() as i32, (p[1].to_degrees()).round() as i32))
                .collect();
            v.sort();
            v
        })
        .collect();
    out.sort();
    out
}

pub fn figure_triangles() -> Vec<Vec<(i32, i32)>> {
    let mut out: Vec<Vec<(i32, i32)>> = FIGURE_TRIANGLES
        .iter()
        .map(|t| {
            let mut v = t.to_vec();
            v.sort();
            v
        })
        .collect();
    out.sort();
    out
}

/// Uniform point in a simplex via sorted uniforms (Dirichlet(1, ..., 1)).
pub fn random_barycentric(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut cuts: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    cuts.push(0.0);
    cuts.push(1.0);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.windows(2).map(|w| w[1] - w[0]).collect()
}

pub fn random_point_in_bounds(rng: &mut impl Rng, tri: &Triangulation) -> Vec<f64> {
    let b = tri.bounds();
    b.lower.iter().zip(&b.upper).map(|(lo, hi)| rng.random_range(*lo..*hi)).collect()
}

/// Independent Bernstein evaluation: `d!/prod(k_i!) prod(b_i^k_i)`.
pub fn bernstein_oracle(kappa: &[usize], b: &[f64]) -> f64 {
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    let d: usize = kappa.iter().sum();
    let mut value = fact(d);
    for (&k, &bi) in kappa.iter().zip(b) {
        value *= bi.powi(k as i32) / fact(k);
    }
    value
}

/// Equality-constrained least squares `min |X c - y|  s.t.  H c = 0` through
/// the pseudo-inverse of the KKT system.
pub fn constrained_ls_oracle(x: &DMatrix<f64>, y: &DVector<f64>, h: &DMatrix<f64>) -> DVector<f64> {
    let a = x.ncols();
    let m = h.nrows();
    let mut kkt = DMatrix::zeros(a + m, a + m);
    kkt.view_mut((0, 0), (a, a)).copy_from(&(x.transpose() * x));
    kkt.view_mut((0, a), (a, m)).copy_from(&h.transpose());
    kkt.view_mut((a, 0), (m, a)).copy_from(h);
    let mut rhs = DVector::zeros(a + m);
    rhs.rows_mut(0, a).copy_from(&(x.transpose() * y));
    let sol = kkt.pseudo_inverse(1e-10).unwrap() * rhs;
    sol.rows(0, a).into_owned()
}

/// Relative difference `|a - b| / max(|a|, |b|, floor)`.
pub fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
