use std::path::Path;

use proptest::prelude::*;
use wplap::config::ExperimentConfig;
use wplap::functional::{Params, Problem};
use wplap::grid::{negative_part, positive_part, read_field_csv, write_field_csv, Field, Grid};
use wplap::quasimetric::QuasiMetricSpace;
use wplap::weights::{balance_constant, weight_integral, BallFamily, Refinement, Weight};

fn square(count: usize) -> Grid {
    Grid::cube(1, 1, 0.0, 1.0, count).unwrap()
}

fn params(p: f64, q: f64, gamma: f64, mu: f64) -> Params {
    Params { p, q, gamma, mu, n: 1, m: 1 }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parts_split_the_field(vals in prop::collection::vec(-5.0f64..5.0, 1..64)) {
        let u = Field::new(vals);
        let (up, um) = (positive_part(&u), negative_part(&u));
        for i in 0..u.len() {
            prop_assert!(up.values[i] >= 0.0 && um.values[i] >= 0.0);
            prop_assert_eq!(up.values[i] * um.values[i], 0.0);
            prop_assert_eq!(up.values[i] - um.values[i], u.values[i]);
        }
    }

    #[test]
    fn energy_terms_are_homogeneous(
        p in 1.3f64..1.9,
        t in 0.2f64..4.0,
        seed in prop::collection::vec(-1.0f64..1.0, 49),
    ) {
        let pr = Problem::new(square(9), Weight::power(0.3), Weight::power(0.2), params(p, 3.0, 1.2, 0.05)).unwrap();
        let u = Field::new(seed);
        let e1 = pr.energy(&u);
        let et = pr.energy(&u.scale(t));
        prop_assert!(close(et.i1, t.powf(p) * e1.i1, 1e-10));
        prop_assert!(close(et.i2, t.powf(3.0) * e1.i2, 1e-10));
        prop_assert!(close(et.i3, t.powf(1.2) * e1.i3, 1e-10));
        prop_assert!(close(pr.e_norm(&u.scale(t)), t * pr.e_norm(&u), 1e-10));
    }

    #[test]
    fn derivative_is_linear_in_the_direction(
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        vals in prop::collection::vec(0.1f64..1.0, 49),
        phi in prop::collection::vec(-1.0f64..1.0, 49),
        psi in prop::collection::vec(-1.0f64..1.0, 49),
    ) {
        let pr = Problem::new(square(9), Weight::constant(1.0), Weight::constant(1.0), params(1.5, 3.0, 1.3, 0.05)).unwrap();
        let g = pr.residual(&Field::new(vals)).unwrap();
        let (phi, psi) = (Field::new(phi), Field::new(psi));
        let lhs = g.dot(&phi.scale(a).axpy(b, &psi));
        let rhs = a * g.dot(&phi) + b * g.dot(&psi);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn field_csv_round_trip(vals in prop::collection::vec(-1e3f64..1e3, 25)) {
        let grid = Grid::cube(1, 1, -1.0, 1.0, 7).unwrap();
        let u = Field::new(vals);
        let mut buf = Vec::new();
        write_field_csv(&grid, &u, &mut buf).unwrap();
        let back = read_field_csv(&grid, buf.as_slice()).unwrap();
        prop_assert_eq!(back, u);
    }

    #[test]
    fn h_inverse_round_trip(alpha in 0.0f64..0.95, x in -1.0f64..1.0, t in 1e-3f64..2.0) {
        let qm = QuasiMetricSpace::new(Weight::power(alpha), 2.0, 1, 1, 2.0).unwrap();
        let h = qm.h(&[x], t).unwrap();
        let back = qm.h_inv(&[x], h).unwrap();
        prop_assert!(close(back, t, 1e-8), "t = {t}, back = {back}");
    }

    #[test]
    fn rho_is_symmetric_and_vanishes_on_the_diagonal(
        alpha in 0.0f64..1.0,
        z1 in prop::collection::vec(-1.0f64..1.0, 2),
        z2 in prop::collection::vec(-1.0f64..1.0, 2),
    ) {
        let qm = QuasiMetricSpace::new(Weight::power(alpha), 2.0, 1, 1, 3.0).unwrap();
        prop_assert_eq!(qm.rho(&z1, &z1).unwrap(), 0.0);
        let (a, b) = (qm.rho(&z1, &z2).unwrap(), qm.rho(&z2, &z1).unwrap());
        prop_assert!(close(a, b, 1e-8));
    }

    #[test]
    fn doubling_is_radius_free_for_centered_powers(alpha in 0.0f64..2.0, r in 1e-3f64..1.0) {
        let w = Weight::power(alpha);
        let ratio = weight_integral(&w, &[0.0], 2.0 * r, 8).unwrap() / weight_integral(&w, &[0.0], r, 8).unwrap();
        prop_assert!(close(ratio, 2f64.powf(1.0 + alpha), 1e-10));
    }

    #[test]
    fn config_round_trip(
        seed in any::<u64>(),
        p in 1.1f64..1.9,
        dq in 0.1f64..2.0,
        mu in 0.0f64..1.0,
        count in 5usize..40,
    ) {
        let q = p + dq;
        let text = format!(
            "seed = {seed}\n[problem]\np = {p}\nq = {q}\ngamma = 1.05\nmu = {mu}\nn = 1\nm = 1\n\
             [domain]\nlo = -1 -1\nhi = 1 1\ncounts = {count}\n"
        );
        let cfg = ExperimentConfig::from_str_at(&text, Path::new(".")).unwrap();
        prop_assert_eq!(cfg.seed, seed);
        let prm = cfg.problem.params;
        prop_assert_eq!((prm.p, prm.q, prm.mu), (p, q, mu));
        prop_assert_eq!(cfg.domain.counts.clone(), vec![count, count]);
        prop_assert_eq!(cfg.grid().unwrap().num_interior(), (count - 2) * (count - 2));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn self_balance_is_at_most_one(alpha in 0.0f64..1.0, p in 1.2f64..1.9) {
        let w = Weight::power(alpha);
        let fam = BallFamily::lattice(&[0.0], 1.0, 5, 6, 2.0).unwrap();
        let est = balance_constant(&w, &w, p, p, 1, 1, &fam, &Refinement::single(16)).unwrap();
        prop_assert!(est.value <= 1.0 + 1e-12, "balance {}", est.value);
    }
}
