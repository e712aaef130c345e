mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splinedp::continuity::{build_smoothness_matrix, null_space_projector};
use splinedp::Triangulation;

use common::*;

#[test]
fn pendulum_space_dimensions() {
    let s = setup(pendulum_grid(), 4, 1);
    assert_eq!(s.space.dhat(), 15);
    assert_eq!(s.space.ahat(), 480);
    assert_eq!(s.projector.rank_h, 329);
    assert_eq!(s.projector.free_parameters(), 151);
}

#[test]
fn projector_laws() {
    let s = setup(pendulum_grid(), 4, 1);
    let z = &s.projector.z;
    let h = &s.smoothness.h;
    assert!((z * z - z).amax() < 1e-8);
    assert!((z - z.transpose()).amax() < 1e-9);
    assert!((h * z).norm() <= 1e-8 * h.norm());
    assert!((z.trace() - 151.0).abs() < 1e-6);
}

#[test]
fn small_spaces_have_expected_dimension() {
    // Single cell split in two: C^0 linear = 4 vertices.
    let two = Triangulation::grid(&[0.0, 1.0], &[0.0, 1.0]).unwrap();
    let p = null_space_projector(&build_smoothness_matrix(&space(two.clone(), 1, 0)).unwrap().h).unwrap();
    assert_eq!(p.free_parameters(), 4);
    // One shared edge: each order m removes d - m + 1 degrees of freedom.
    for (d, r) in [(2, 1), (3, 1), (4, 1), (4, 2)] {
        let sp = space(two.clone(), d, r);
        let p = null_space_projector(&build_smoothness_matrix(&sp).unwrap().h).unwrap();
        let cond: usize = (0..=r).map(|m| d - m + 1).sum();
        assert_eq!(p.free_parameters(), 2 * sp.dhat() - cond, "d={d} r={r}");
    }
    // C^0 linear on any grid: one parameter per vertex.
    let tri = pendulum_grid();
    let p = null_space_projector(&build_smoothness_matrix(&space(tri.clone(), 1, 0)).unwrap().h).unwrap();
    assert_eq!(p.free_parameters(), tri.vertices().len());
}

#[test]
fn projected_coefficients_are_c1_across_facets() {
    let s = setup(pendulum_grid(), 4, 1);
    let sp = &s.space;
    let tri = sp.triangulation();
    let dh = sp.dhat();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let raw = DVector::from_fn(sp.ahat(), |_, _| rng.random_range(-1.0..1.0));
        let c = &s.projector.z * raw;
        let scale = c.amax();
        let block = |t: usize| &c.as_slice()[t * dh..(t + 1) * dh];
        for f in tri.facets() {
            let (ti, tj) = f.simplices;
            let a = &tri.vertices()[f.vertex_ids[0]];
            let b = &tri.vertices()[f.vertex_ids[1]];
            for _ in 0..10 {
                let t: f64 = rng.random();
                let x = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                let dir = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let mut vals = [0.0; 2];
                let mut ders = [0.0; 2];
                for (k, &sid) in [ti, tj].iter().enumerate() {
                    let simplex = tri.simplex(sid);
                    let bary = simplex.cartesian_to_barycentric(&x);
                    vals[k] = sp
                        .multi_indices()
                        .iter()
                        .enumerate()
                        .map(|(j, kappa)| block(sid)[j] * bernstein_oracle(&kappa.0, &bary))
                        .sum();
                    ders[k] = sp.derivative_in_block(&bary, &simplex.direction_to_barycentric(&dir), block(sid));
                }
                worst = worst.max(rel(vals[0], vals[1], scale)).max(rel(ders[0], ders[1], scale));
            }
        }
    }
    assert!(worst < 1e-7, "worst relative jump {worst}");
}

#[test]
fn unprojected_coefficients_jump() {
    // Guard against a vacuous continuity test: raw random c is discontinuous.
    let s = setup(pendulum_grid(), 4, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let raw = DVector::from_fn(s.space.ahat(), |_, _| rng.random_range(-1.0..1.0));
    assert!((&s.smoothness.h * &raw).amax() > 1e-2);
    assert!((&s.smoothness.h * (&s.projector.z * raw)).amax() < 1e-10);
}

#[test]
fn projector_of_random_matrix_matches_pseudo_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = DMatrix::from_fn(4, 9, |_, _| rng.random_range(-1.0..1.0));
    let p = null_space_projector(&h).unwrap();
    let oracle = DMatrix::identity(9, 9) - h.clone().pseudo_inverse(1e-12).unwrap() * &h;
    assert!((p.z - oracle).amax() < 1e-12);
    assert_eq!(p.rank_h, 4);
}
