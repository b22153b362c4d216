use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wplap::cli::geometry_identities;
use wplap::config::ExperimentConfig;
use wplap::functional::{geometry_constants, geometry_inputs, Problem};
use wplap::grid::Field;
use wplap::quasimetric::QuasiMetricSpace;
use wplap::solver::{local_min_from, positivity_certificate, seed_bump, SolverConfig};
use wplap::verify::{fibering_direction, fibering_scan, log_grid};
use wplap::weights::{ap_constant, BallFamily, Refinement, Weight};

const UNIT_SQUARE: &str = "seed = 0
[problem]
p = 1.5
q = 3
gamma = 1.3
mu = 0.05
n = 1
m = 1
[domain]
lo = 0 0
hi = 1 1
counts = 17
";

/// `int_a^b |s|^e ds` from the antiderivative, split at the origin.
fn power_mass(a: f64, b: f64, e: f64) -> f64 {
    let f = |s: f64| s.abs().powf(e + 1.0) / (e + 1.0);
    if a >= 0.0 {
        f(b) - f(a)
    } else if b <= 0.0 {
        f(a) - f(b)
    } else {
        f(a) + f(b)
    }
}

/// A_p of `|x|^alpha` over all intervals of `[-1, 1]` with endpoints on a
/// uniform lattice; `None` once a dual mass diverges.
fn ap_intervals(alpha: f64, p: f64, nodes: usize) -> Option<f64> {
    let dual = -alpha / (p - 1.0);
    if alpha <= -1.0 || dual <= -1.0 {
        return None;
    }
    let xs: Vec<f64> = (0..nodes).map(|k| -1.0 + 2.0 * k as f64 / (nodes - 1) as f64).collect();
    let mut best = 0.0f64;
    for (i, &a) in xs.iter().enumerate() {
        for &b in &xs[i + 1..] {
            let len = b - a;
            let w = power_mass(a, b, alpha) / len;
            let s = power_mass(a, b, dual) / len;
            best = best.max(w * s.powf(p - 1.0));
        }
    }
    Some(best)
}

#[test]
fn dyadic_ap_matches_interval_search() {
    let family = BallFamily::dyadic(&[0.0], 1.0, 33, 5).unwrap();
    for alpha in [-0.5, 0.0, 0.3, 0.5, 0.9] {
        let est = ap_constant(&Weight::power(alpha), 2.0, &family, &Refinement::default()).unwrap();
        let brute = ap_intervals(alpha, 2.0, 201).unwrap();
        assert!(!est.diverged, "alpha = {alpha}");
        assert!((est.value - brute).abs() <= 0.05 * brute, "alpha = {alpha}: {} vs {brute}", est.value);
    }
}

#[test]
fn non_integrable_powers_diverge() {
    let family = BallFamily::dyadic(&[0.0], 1.0, 33, 5).unwrap();
    for alpha in [-1.0, 1.5] {
        let est = ap_constant(&Weight::power(alpha), 2.0, &family, &Refinement::default()).unwrap();
        assert!(est.diverged, "alpha = {alpha}");
        assert!(ap_intervals(alpha, 2.0, 21).is_none());
    }
}

#[test]
fn symmetric_interval_value() {
    // on [-r, r] the A_2 ratio of |x|^alpha is 1 / (1 - alpha^2)
    for alpha in [0.2f64, 0.5, 0.8] {
        let w = power_mass(-1.0, 1.0, alpha) / 2.0;
        let s = power_mass(-1.0, 1.0, -alpha) / 2.0;
        assert!((w * s - 1.0 / (1.0 - alpha * alpha)).abs() < 1e-12);
    }
}

#[test]
fn unit_weight_is_a_metric() {
    let qm = QuasiMetricSpace::new(Weight::constant(1.0), 2.0, 1, 1, 2.0).unwrap();
    let r = qm.quasi_triangle_constant(10_000, &[0.0, 0.0], &[1.0, 1.0], 3).unwrap();
    assert!((r.k0_estimate - 1.0).abs() <= 1e-9, "K0 = {}", r.k0_estimate);
}

const SMALL_CUBE: &str = "seed = 0
[problem]
p = 2
q = 4
gamma = 1.3
mu = 0.01
n = 2
m = 1
[domain]
lo = 0 0 0
hi = 1 1 1
counts = 9
";

fn load(text: &str) -> (ExperimentConfig, Problem) {
    let cfg = ExperimentConfig::from_str_at(text, Path::new(".")).unwrap();
    let pr = Problem::new(cfg.grid().unwrap(), cfg.weights.omega.clone(), cfg.v_weight(), cfg.problem.params).unwrap();
    (cfg, pr)
}

#[test]
fn radius_and_sphere_identities() {
    let (cfg, pr) = load(UNIT_SQUARE);
    let (radius, x0) = cfg.enclosing_ball(&pr.grid);
    for c0 in [0.1, 1.0, 7.5] {
        let gi = geometry_inputs(&pr, c0, radius, &x0, 64).unwrap();
        let id = geometry_identities(&gi).unwrap();
        assert!(id.radius_balance_error <= 1e-10 && id.sphere_bound_error <= 1e-10, "{id:?}");
    }
}

#[test]
fn scan_matches_the_polynomial() {
    let (_, pr) = load(UNIT_SQUARE);
    let dir = fibering_direction(&pr, &seed_bump(&pr, 1.0)).unwrap();
    let scan = fibering_scan(&pr, &dir, &log_grid(1e-3, 1e3, 200), 1.0).unwrap();
    let f = pr.fibering_integrals(&dir);
    for s in &scan.points {
        let direct = pr.energy(&dir.scale(s.t)).i;
        let poly = f.energy(&pr.params, s.t);
        assert!((direct - poly).abs() <= 1e-12 * (1.0 + poly.abs()), "t = {}", s.t);
    }
}

#[test]
fn local_minimizer_does_not_depend_on_the_start() {
    let (cfg, pr) = load(SMALL_CUBE);
    let (radius, x0) = cfg.enclosing_ball(&pr.grid);
    let geom = geometry_constants(&geometry_inputs(&pr, 1.0, radius, &x0, 64).unwrap()).unwrap();
    let rho = geom.mp_radius;
    let solver = SolverConfig::default();
    let mut mins: Vec<Field> = Vec::new();
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = Field::new((0..pr.num_unknowns()).map(|_| rng.gen_range(0.0..1.0)).collect());
        let start = start.scale(0.1 * rho / pr.e_norm(&start));
        let m = local_min_from(&pr, start, rho, &solver).unwrap();
        assert!(m.energy.i < 0.0 && m.norm <= rho);
        let cert = positivity_certificate(&pr, &m.u);
        assert!(cert.min_value >= -1e-10, "seed {seed}: min {}", cert.min_value);
        mins.push(m.u);
    }
    let scale = pr.e_norm(&mins[0]);
    for (k, u) in mins.iter().enumerate().skip(1) {
        let gap = pr.e_norm(&u.sub(&mins[0]));
        assert!(gap <= 1e-6 * scale, "start {k}: gap {gap:e}, scale {scale:e}");
    }
}
