//! The two positive critical points: a local minimizer inside the ball
//! `B(0, rho)` of E, and a mountain-pass point found by deforming a discrete
//! path from 0 to a far point of negative energy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{EnergyBreakdown, GeometryConstants, Problem};
use crate::grid::{negative_part, Field};
use crate::linalg;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Target for the dual norm `(g . K^{-1} g)^{1/2}` of the gradient.
    pub tolerance: f64,
    /// Gradient descent hands over to the Newton polish below this.
    pub descent_tolerance: f64,
    /// Armijo slope fraction.
    pub armijo: f64,
    /// Armijo backtracking factor.
    pub backtrack: f64,
    /// Number of path segments `P`.
    pub path_nodes: usize,
    /// Initial step of the descent and path deformation.
    pub path_step: f64,
    /// Path deformation stops once the max node's gradient is below this.
    pub mp_tolerance: f64,
    pub mp_max_iterations: usize,
    pub max_restarts: usize,
    /// Newton iterations after the first-order phases.
    pub polish_iterations: usize,
    pub sphere_slack: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 5000,
            tolerance: 1e-10,
            descent_tolerance: 1e-6,
            armijo: 1e-4,
            backtrack: 0.5,
            path_nodes: 16,
            path_step: 1.0,
            mp_tolerance: 5e-2,
            mp_max_iterations: 3000,
            max_restarts: 3,
            polish_iterations: 50,
            sphere_slack: 0.9,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parameter(m.into()));
        if !(self.tolerance > 0.0) || !(self.descent_tolerance > 0.0) || !(self.mp_tolerance > 0.0) {
            return bad("solver tolerances must be positive");
        }
        if self.path_nodes < 8 {
            return bad("path needs at least 8 segments");
        }
        if !(self.armijo > 0.0 && self.armijo <= 0.5) {
            return bad("Armijo fraction must lie in (0, 0.5]");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtracking factor must lie in (0, 1)");
        }
        if !(self.path_step > 0.0) {
            return bad("initial step must be positive");
        }
        if !(0.0..1.0).contains(&self.sphere_slack) {
            return bad("sphere slack must lie in [0, 1)");
        }
        Ok(())
    }
}

/// One accepted iteration of a descent or polish phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iteration: usize,
    pub energy: f64,
    pub gradient: f64,
    pub step: f64,
}

/// One iteration of the path deformation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub iteration: usize,
    pub nodes: usize,
    pub max_index: usize,
    pub max_energy: f64,
    pub gradient: f64,
    pub step: f64,
}

struct Grad {
    g: Field,
    s: Field,
    norm: f64,
}

const MAX_BACKTRACKS: usize = 60;
const INNER_TOL: f64 = 1e-12;
const STALL_WINDOW: usize = 100;

fn sobolev(pr: &Problem, u: &Field) -> Result<Grad> {
    let g = pr.residual(u)?;
    let s = pr.dirichlet_solve(&g, INNER_TOL);
    let norm = g.dot(&s).max(0.0).sqrt();
    Ok(Grad { g, s, norm })
}

/// Dual norm of the gradient, `(g . K^{-1} g)^{1/2}`.
pub fn gradient_norm(pr: &Problem, u: &Field) -> Result<f64> {
    Ok(sobolev(pr, u)?.norm)
}

/// Radial projection onto the closed ball of radius `rho` in E.
pub fn project_to_ball(pr: &Problem, u: &Field, rho: f64) -> Field {
    let e = pr.e_norm(u);
    if e <= rho {
        u.clone()
    } else {
        u.scale(rho / e)
    }
}

/// Positive sine-product bump over the box, scaled to `|u|_E = rho`.
pub fn seed_bump(pr: &Problem, rho: f64) -> Field {
    let g = &pr.grid;
    let u = g.field_from(|z| {
        (0..g.dim())
            .map(|a| (std::f64::consts::PI * (z[a] - g.lo[a]) / (g.hi[a] - g.lo[a])).sin())
            .product()
    });
    u.scale(rho / pr.e_norm(&u))
}

/// Armijo-backtracked Sobolev-gradient descent, optionally projected onto
/// `B(0, ball)`. Stops at `target` or when no Armijo step exists close to it.
fn descend(
    pr: &Problem,
    mut u: Field,
    ball: Option<f64>,
    cfg: &SolverConfig,
    target: f64,
    log: &mut Vec<IterRecord>,
) -> Result<Field> {
    let mut energy = pr.energy(&u).i;
    let mut step = cfg.path_step;
    for it in 0..cfg.max_iterations {
        let gr = sobolev(pr, &u)?;
        if gr.norm <= target {
            return Ok(u);
        }
        let mut a = (2.0 * step).min(1e3);
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial = u.axpy(-a, &gr.s);
            if let Some(r) = ball {
                trial = project_to_ball(pr, &trial, r);
            }
            let e = pr.energy(&trial).i;
            let slope = gr.g.dot(&trial.sub(&u));
            if e <= energy + cfg.armijo * slope && e < energy {
                accepted = Some((trial, e));
                break;
            }
            a *= cfg.backtrack;
        }
        match accepted {
            Some((trial, e)) => {
                assert!(e < energy, "accepted step raised the energy");
                log.push(IterRecord { iteration: it, energy: e, gradient: gr.norm, step: a });
                u = trial;
                energy = e;
                step = a;
            }
            None if gr.norm <= 1e3 * target => return Ok(u),
            None => {
                return Err(Error::Stall { iterations: it, energy, gradient: gr.norm });
            }
        }
    }
    Ok(u)
}

/// Newton iterations on the gradient (K-preconditioned MINRES for the
/// Hessian system, backtracking on the gradient dual norm).
fn newton_polish(
    pr: &Problem,
    mut u: Field,
    ball: Option<f64>,
    cfg: &SolverConfig,
    log: &mut Vec<IterRecord>,
) -> Result<(Field, f64)> {
    let mut gr = sobolev(pr, &u)?;
    let start = log.last().map_or(0, |r| r.iteration + 1);
    for k in 0..cfg.polish_iterations {
        if gr.norm <= cfg.tolerance {
            break;
        }
        let base = u.clone();
        let hv = |x: &Field| pr.hessian_apply(&base, x).expect("p checked by residual");
        let kinv = |x: &Field| pr.dirichlet_solve(x, INNER_TOL);
        let delta = linalg::pminres(hv, kinv, &gr.g.scale(-1.0), 1e-8, 4 * pr.num_unknowns().max(100)).x;
        let mut lambda = 1.0;
        let mut next = None;
        while lambda > 1e-6 {
            let mut cand = u.axpy(lambda, &delta);
            if let Some(r) = ball {
                cand = project_to_ball(pr, &cand, r);
            }
            let cg = sobolev(pr, &cand)?;
            if cg.norm < (1.0 - 1e-4 * lambda) * gr.norm {
                next = Some((cand, cg));
                break;
            }
            lambda *= 0.5;
        }
        match next {
            Some((cand, cg)) => {
                u = cand;
                gr = cg;
                log.push(IterRecord { iteration: start + k, energy: pr.energy(&u).i, gradient: gr.norm, step: lambda });
            }
            None => break,
        }
    }
    Ok((u, gr.norm))
}

/// A local minimizer of `I` in `B(0, rho)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalMin {
    pub u: Field,
    pub energy: EnergyBreakdown,
    pub gradient: f64,
    pub norm: f64,
    /// Scaling of the seed used as starting point.
    pub start_scale: f64,
    /// Projected descent; energies strictly decrease.
    pub log: Vec<IterRecord>,
    pub polish_log: Vec<IterRecord>,
}

/// Start at `t * seed`, `t = min(t*/2, rho/|seed|_E)`, and minimize in
/// `B(0, rho)`.
pub fn find_local_min(pr: &Problem, seed: &Field, geom: &GeometryConstants, cfg: &SolverConfig) -> Result<LocalMin> {
    cfg.validate()?;
    let rho = geom.mp_radius;
    let t_star = pr.fibering_threshold(seed)?;
    let t = (0.5 * t_star).min(rho / pr.e_norm(seed));
    let mut out = local_min_from(pr, seed.scale(t), rho, cfg)?;
    out.start_scale = t;
    Ok(out)
}

/// Minimize in `B(0, rho)` starting exactly at `start`.
pub fn local_min_from(pr: &Problem, start: Field, rho: f64, cfg: &SolverConfig) -> Result<LocalMin> {
    let mut log = Vec::new();
    let start = project_to_ball(pr, &start, rho);
    let u = descend(pr, start, Some(rho), cfg, cfg.descent_tolerance.max(cfg.tolerance), &mut log)?;
    let mut polish_log = Vec::new();
    let (u, gradient) = newton_polish(pr, u, Some(rho), cfg, &mut polish_log)?;
    let energy = pr.energy(&u);
    if energy.i >= 0.0 {
        return Err(Error::NoNegativeMinimum { energy: energy.i });
    }
    Ok(LocalMin { norm: pr.e_norm(&u), u, energy, gradient, start_scale: 1.0, log, polish_log })
}

/// `t * dir` for the first doubling `t = 1, 2, 4, ...` with negative
/// energy and `t |dir|_E > 2 rho`.
pub fn find_far_point(pr: &Problem, dir: &Field, rho: f64) -> Result<Field> {
    let f = pr.fibering_integrals(dir);
    if !(f.vq > 0.0) {
        return Err(Error::DegenerateSeed("direction has no positive part".into()));
    }
    let norm = pr.e_norm(dir);
    let mut t = 1.0f64;
    while t <= 2f64.powi(60) {
        let u = dir.scale(t);
        if pr.energy(&u).i < 0.0 && t * norm > 2.0 * rho {
            return Ok(u);
        }
        t *= 2.0;
    }
    Err(Error::DegenerateSeed("no negative energy along the ray below t = 2^60".into()))
}

/// The mountain-pass critical point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MountainPassPoint {
    pub u: Field,
    pub energy: EnergyBreakdown,
    pub gradient: f64,
    pub norm: f64,
    pub restarts: usize,
    /// Path segments of the successful attempt.
    pub nodes: usize,
    pub path_log: Vec<PathRecord>,
    pub polish_log: Vec<IterRecord>,
    /// `I(u0) >= (1 - slack) * sphere_bound`.
    pub above_sphere_bound: bool,
}

enum PathOutcome {
    Converged(Field),
    Collapsed,
}

/// Path `0 = b_0, ..., b_P = u_far` in equal E-norm spacing.
fn path_length(pr: &Problem, path: &[Field]) -> f64 {
    let d: Vec<f64> = path.windows(2).map(|w| pr.e_norm(&w[1].sub(&w[0]))).collect();
    crate::sum::pairwise_sum(&d)
}

fn reparametrize(pr: &Problem, path: &[Field]) -> Vec<Field> {
    let p = path.len() - 1;
    let mut cum = vec![0.0];
    for w in path.windows(2) {
        let d = pr.e_norm(&w[1].sub(&w[0]));
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    if !(total > 0.0) {
        return path.to_vec();
    }
    let mut out = vec![path[0].clone()];
    let mut seg = 0;
    for j in 1..p {
        let target = total * j as f64 / p as f64;
        while seg + 1 < p && cum[seg + 1] < target {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let theta = if len > 0.0 { ((target - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        out.push(path[seg].axpy(theta, &path[seg + 1].sub(&path[seg])));
    }
    out.push(path[p].clone());
    out
}

fn argmax_interior(e: &[f64]) -> usize {
    let mut k = 1;
    for i in 1..e.len() - 1 {
        if e[i] > e[k] {
            k = i;
        }
    }
    k
}

fn deform_path(
    pr: &Problem,
    u_far: &Field,
    segments: usize,
    sphere_bound: f64,
    cfg: &SolverConfig,
    log: &mut Vec<PathRecord>,
) -> Result<PathOutcome> {
    let mut path: Vec<Field> = (0..=segments).map(|k| u_far.scale(k as f64 / segments as f64)).collect();
    let mut energies: Vec<f64> = path.iter().map(|b| pr.energy(b).i).collect();
    let mut step = cfg.path_step;
    let mut last_grad = f64::INFINITY;
    let mut history: Vec<f64> = Vec::new();
    for it in 0..cfg.mp_max_iterations {
        let k = argmax_interior(&energies);
        let gr = sobolev(pr, &path[k])?;
        last_grad = gr.norm;
        // Reparametrization jitter keeps the max node off the exact ridge; a
        // stalled path maximum goes to the polish.
        let stalled = it >= STALL_WINDOW
            && (history[it - STALL_WINDOW] - energies[k]).abs() <= 1e-9 * energies[k].abs().max(1.0);
        history.push(energies[k]);
        if gr.norm <= cfg.mp_tolerance || stalled {
            log.push(PathRecord { iteration: it, nodes: segments, max_index: k, max_energy: energies[k], gradient: gr.norm, step: 0.0 });
            return Ok(PathOutcome::Converged(path[k].clone()));
        }
        if energies[k] < 0.1 * sphere_bound {
            return Ok(PathOutcome::Collapsed);
        }
        // The max node moves at most one mean segment length.
        let spacing = path_length(pr, &path) / segments as f64;
        let s_norm = pr.e_norm(&gr.s);
        let mut a = (2.0 * step).min(1e3);
        if s_norm > 0.0 {
            a = a.min(spacing / s_norm);
        }
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = path[k].axpy(-a, &gr.s);
            let e = pr.energy(&trial).i;
            if e <= energies[k] - cfg.armijo * a * gr.norm * gr.norm && e < energies[k] {
                accepted = Some((trial, e));
                break;
            }
            a *= cfg.backtrack;
        }
        let Some((trial, e)) = accepted else {
            return Err(Error::MountainPass(format!(
                "no Armijo step at path node {k} (gradient {})",
                gr.norm
            )));
        };
        log.push(PathRecord { iteration: it, nodes: segments, max_index: k, max_energy: e, gradient: gr.norm, step: a });
        path[k] = trial;
        energies[k] = e;
        step = a;
        path = reparametrize(pr, &path);
        energies = path.iter().map(|b| pr.energy(b).i).collect();
    }
    Err(Error::MountainPass(format!(
        "path deformation did not reach gradient {} in {} iterations (last {last_grad})",
        cfg.mp_tolerance, cfg.mp_max_iterations
    )))
}

/// Discrete mountain pass between 0 and `u_far`, then Newton polish.
pub fn mountain_pass(pr: &Problem, u_far: &Field, geom: &GeometryConstants, cfg: &SolverConfig) -> Result<MountainPassPoint> {
    cfg.validate()?;
    if !(pr.energy(u_far).i < 0.0) {
        return Err(Error::MountainPass("far endpoint must have negative energy".into()));
    }
    let mut path_log = Vec::new();
    for attempt in 0..=cfg.max_restarts {
        let segments = cfg.path_nodes << attempt;
        match deform_path(pr, u_far, segments, geom.sphere_bound, cfg, &mut path_log)? {
            PathOutcome::Collapsed => continue,
            PathOutcome::Converged(u) => {
                let mut polish_log = Vec::new();
                let (u, gradient) = newton_polish(pr, u, None, cfg, &mut polish_log)?;
                let energy = pr.energy(&u);
                if !(energy.i > 0.0) {
                    return Err(Error::MountainPass(format!("critical point has energy {} <= 0", energy.i)));
                }
                return Ok(MountainPassPoint {
                    norm: pr.e_norm(&u),
                    above_sphere_bound: energy.i >= (1.0 - cfg.sphere_slack) * geom.sphere_bound,
                    u,
                    energy,
                    gradient,
                    restarts: attempt,
                    nodes: segments,
                    path_log,
                    polish_log,
                });
            }
        }
    }
    Err(Error::MountainPass(format!("path collapsed after {} restarts", cfg.max_restarts)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositivityCertificate {
    pub min_value: f64,
    /// `int v u_-^q`.
    pub negative_integral: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Discrete analogue of testing the equation with `u_-`.
pub fn positivity_certificate(pr: &Problem, u: &Field) -> PositivityCertificate {
    let q = pr.params.q;
    let neg = negative_part(u);
    let terms: Vec<f64> = neg.values.iter().zip(pr.v_at_nodes()).map(|(x, v)| v * x.powf(q)).collect();
    let integral = pr.cell_volume() * crate::sum::pairwise_sum(&terms);
    let min_value = u.min().min(0.0);
    let tolerance = 1e-10 * u.sup_norm().max(1.0);
    PositivityCertificate {
        min_value,
        negative_integral: integral,
        tolerance,
        passed: min_value >= -tolerance && integral <= tolerance,
    }
}

/// Test fields for [`weakform_check`]: explicit fields, optionally
/// followed by every coordinate hat.
#[derive(Clone, Debug, PartialEq)]
pub struct TestSet {
    pub fields: Vec<Field>,
    pub hats: bool,
}

/// `max |<I'(u), phi>| / |phi|_E` over the test set.
pub fn weakform_check(pr: &Problem, u: &Field, tests: &TestSet) -> Result<f64> {
    let g = pr.residual(u)?;
    let mut worst: f64 = 0.0;
    for phi in &tests.fields {
        let e = pr.e_norm(phi);
        if !(e > 0.0) {
            return Err(Error::Parameter("weak-form test field is zero".into()));
        }
        worst = worst.max(g.dot(phi).abs() / e);
    }
    if tests.hats {
        for (j, gj) in g.values.iter().enumerate() {
            worst = worst.max(gj.abs() / pr.hat_e_norm(j));
        }
    }
    Ok(worst)
}

/// `count` random fields with i.i.d. uniform nodal values, plus every
/// coordinate hat.
pub fn default_test_set(pr: &Problem, count: usize, seed: u64) -> TestSet {
    let n = pr.num_unknowns();
    let fields = (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            Field::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        })
        .collect();
    TestSet { fields, hats: true }
}

/// Everything the two-solution run produces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub geometry: GeometryConstants,
    /// `mu >= Lambda`; reported, not fatal.
    pub mu_warning: bool,
    pub seed_field: Field,
    pub u1: Option<LocalMin>,
    pub u1_error: Option<String>,
    /// The local minimization ended at `I >= 0`.
    pub u1_no_negative_minimum: bool,
    pub u0: Option<MountainPassPoint>,
    pub u0_error: Option<String>,
    pub residual_u1: Option<f64>,
    pub residual_u0: Option<f64>,
    pub positivity_u1: Option<PositivityCertificate>,
    pub positivity_u0: Option<PositivityCertificate>,
    /// `|u0 - u1|_E`.
    pub distinctness: Option<f64>,
}

/// Contract thresholds checked on a [`SolveResult`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contracts {
    pub residual: f64,
    pub positivity: f64,
    pub distinct_fraction: f64,
}

impl Default for Contracts {
    fn default() -> Self {
        Contracts { residual: 1e-6, positivity: 1e-10, distinct_fraction: 1e-3 }
    }
}

/// Pass/fail of each two-solution contract.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractReport {
    pub u1_negative_energy: bool,
    pub u1_inside_ball: bool,
    pub u0_positive_energy: bool,
    pub residual_u1: bool,
    pub residual_u0: bool,
    pub positivity_u1: bool,
    pub positivity_u0: bool,
    pub distinct: bool,
}

impl ContractReport {
    pub fn all(&self) -> bool {
        self.u1_negative_energy
            && self.u1_inside_ball
            && self.u0_positive_energy
            && self.residual_u1
            && self.residual_u0
            && self.positivity_u1
            && self.positivity_u0
            && self.distinct
    }

    pub fn failures(&self) -> Vec<&'static str> {
        let mut f = Vec::new();
        let checks = [
            (self.u1_negative_energy, "u1_negative_energy"),
            (self.u1_inside_ball, "u1_inside_ball"),
            (self.u0_positive_energy, "u0_positive_energy"),
            (self.residual_u1, "residual_u1"),
            (self.residual_u0, "residual_u0"),
            (self.positivity_u1, "positivity_u1"),
            (self.positivity_u0, "positivity_u0"),
            (self.distinct, "distinct"),
        ];
        for (ok, name) in checks {
            if !ok {
                f.push(name);
            }
        }
        f
    }
}

fn cert_ok(c: &Option<PositivityCertificate>, tol: f64) -> bool {
    c.is_some_and(|c| c.min_value >= -tol && c.negative_integral <= tol)
}

impl SolveResult {
    pub fn contracts(&self, t: &Contracts) -> ContractReport {
        let rho = self.geometry.mp_radius;
        let n1 = self.u1.as_ref().map_or(0.0, |s| s.norm);
        let n0 = self.u0.as_ref().map_or(0.0, |s| s.norm);
        ContractReport {
            u1_negative_energy: self.u1.as_ref().is_some_and(|s| s.energy.i < 0.0),
            u1_inside_ball: self.u1.as_ref().is_some_and(|s| s.norm <= rho * (1.0 + 1e-12)),
            u0_positive_energy: self.u0.as_ref().is_some_and(|s| s.energy.i > 0.0),
            residual_u1: self.residual_u1.is_some_and(|r| r <= t.residual),
            residual_u0: self.residual_u0.is_some_and(|r| r <= t.residual),
            positivity_u1: cert_ok(&self.positivity_u1, t.positivity),
            positivity_u0: cert_ok(&self.positivity_u0, t.positivity),
            distinct: self.distinctness.is_some_and(|d| d > t.distinct_fraction * n0.max(n1)),
        }
    }
}

/// Both branches; a failure of one branch is recorded and the other still runs.
pub fn solve(pr: &Problem, geom: &GeometryConstants, cfg: &SolverConfig) -> Result<SolveResult> {
    cfg.validate()?;
    let seed = seed_bump(pr, geom.mp_radius);
    let tests = default_test_set(pr, 50, cfg.seed);
    let (u1, u1_error, u1_no_negative_minimum) = match find_local_min(pr, &seed, geom, cfg) {
        Ok(s) => (Some(s), None, false),
        Err(e) => (None, Some(e.to_string()), matches!(e, Error::NoNegativeMinimum { .. })),
    };
    let (u0, u0_error) = match find_far_point(pr, &seed, geom.mp_radius).and_then(|far| mountain_pass(pr, &far, geom, cfg)) {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let residual_u1 = u1.as_ref().map(|s| weakform_check(pr, &s.u, &tests)).transpose()?;
    let residual_u0 = u0.as_ref().map(|s| weakform_check(pr, &s.u, &tests)).transpose()?;
    let distinctness = match (&u0, &u1) {
        (Some(a), Some(b)) => Some(pr.e_norm(&a.u.sub(&b.u))),
        _ => None,
    };
    Ok(SolveResult {
        geometry: *geom,
        mu_warning: pr.params.mu >= geom.lambda,
        seed_field: seed,
        positivity_u1: u1.as_ref().map(|s| positivity_certificate(pr, &s.u)),
        positivity_u0: u0.as_ref().map(|s| positivity_certificate(pr, &s.u)),
        u1,
        u1_error,
        u1_no_negative_minimum,
        u0,
        u0_error,
        residual_u1,
        residual_u0,
        distinctness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::{geometry_constants, geometry_inputs, Params};
    use crate::grid::{positive_part, Grid};
    use crate::weights::Weight;

    fn demo(mu: f64) -> (Problem, GeometryConstants) {
        let grid = Grid::cube(1, 1, 0.0, 1.0, 9).unwrap();
        let pr = Problem::new(
            grid.clone(),
            Weight::constant(1.0),
            Weight::constant(1.0),
            Params { p: 1.5, q: 3.0, gamma: 1.3, mu, n: 1, m: 1 },
        )
        .unwrap();
        let gi = geometry_inputs(&pr, 1.0, grid.circumradius(), &grid.x_center(), 64).unwrap();
        (pr, geometry_constants(&gi).unwrap())
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig { path_nodes: 4, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { backtrack: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { tolerance: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn seed_and_projection() {
        let (pr, geom) = demo(0.05);
        let rho = geom.mp_radius;
        let s = seed_bump(&pr, rho);
        assert!((pr.e_norm(&s) - rho).abs() < 1e-12 * rho);
        assert!(s.min() > 0.0);
        let big = s.scale(5.0);
        let proj = project_to_ball(&pr, &big, rho);
        assert!((pr.e_norm(&proj) - rho).abs() < 1e-12);
        assert_eq!(project_to_ball(&pr, &proj.scale(0.5), rho), proj.scale(0.5));
    }

    #[test]
    fn far_point_postconditions() {
        let (pr, geom) = demo(0.05);
        let rho = geom.mp_radius;
        let hat = pr.grid.field_from(|z| (1.0 - (2.0 * z[0] - 1.0).abs()).min(1.0 - (2.0 * z[1] - 1.0).abs()));
        let far = find_far_point(&pr, &hat, rho).unwrap();
        assert!(pr.energy(&far).i < 0.0);
        assert!(pr.e_norm(&far) > 2.0 * rho);
        let neg = hat.scale(-1.0);
        assert!(matches!(find_far_point(&pr, &neg, rho), Err(Error::DegenerateSeed(_))));
    }

    #[test]
    fn local_min_contracts_and_fixed_point() {
        let (pr, geom) = demo(0.05);
        let cfg = SolverConfig::default();
        let seed = seed_bump(&pr, geom.mp_radius);
        let m = find_local_min(&pr, &seed, &geom, &cfg).unwrap();
        assert!(m.energy.i < 0.0);
        assert!(m.norm <= geom.mp_radius);
        assert!(m.gradient <= cfg.tolerance);
        for w in m.log.windows(2) {
            assert!(w[1].energy < w[0].energy);
        }
        assert!(positivity_certificate(&pr, &m.u).passed);
        let again = local_min_from(&pr, m.u.clone(), geom.mp_radius, &cfg).unwrap();
        assert!((again.energy.i - m.energy.i).abs() < 1e-12);
        let r = weakform_check(&pr, &m.u, &default_test_set(&pr, 10, 1)).unwrap();
        assert!(r <= 10.0 * cfg.tolerance, "{r}");
    }

    #[test]
    fn no_concave_term_means_no_negative_minimum() {
        let (pr, geom) = demo(0.0);
        let cfg = SolverConfig::default();
        let seed = seed_bump(&pr, geom.mp_radius);
        let start = seed.scale(0.1);
        match local_min_from(&pr, start, geom.mp_radius, &cfg) {
            Err(Error::NoNegativeMinimum { energy }) => assert!(energy >= 0.0),
            other => panic!("expected no-negative-minimum, got {other:?}"),
        }
    }

    #[test]
    fn reparametrization_keeps_endpoints_and_equalizes() {
        let (pr, _) = demo(0.05);
        let end = seed_bump(&pr, 3.0);
        let ts = [0.0, 0.05, 0.1, 0.7, 0.75, 0.8, 0.9, 0.95, 1.0];
        let path: Vec<Field> = ts.iter().map(|t| end.scale(*t)).collect();
        let out = reparametrize(&pr, &path);
        assert_eq!(out[0], path[0]);
        assert_eq!(out[8], path[8]);
        for w in out.windows(2) {
            let d = pr.e_norm(&w[1].sub(&w[0]));
            assert!((d - 3.0 / 8.0).abs() < 1e-9, "{d}");
        }
    }

    #[test]
    fn mountain_pass_point_is_critical_and_positive() {
        let (pr, geom) = demo(0.05);
        let cfg = SolverConfig::default();
        let seed = seed_bump(&pr, geom.mp_radius);
        let far = find_far_point(&pr, &seed, geom.mp_radius).unwrap();
        let mp = mountain_pass(&pr, &far, &geom, &cfg).unwrap();
        assert!(mp.energy.i > 0.0);
        assert!(mp.gradient <= cfg.tolerance);
        assert!(positivity_certificate(&pr, &mp.u).passed);
        assert!(mp.above_sphere_bound);
        let e_far = pr.energy(&far).i;
        assert!(e_far < 0.0);
        assert!(matches!(
            mountain_pass(&pr, &pr.grid.zeros(), &geom, &cfg),
            Err(Error::MountainPass(_))
        ));
    }

    #[test]
    fn positivity_certificate_cases() {
        let (pr, _) = demo(0.05);
        let u = pr.grid.field_from(|z| z[0] * (1.0 - z[0]) * z[1]);
        assert!(positivity_certificate(&pr, &u).passed);
        let mut one = pr.grid.zeros();
        one.values[5] = -1.0;
        let c = positivity_certificate(&pr, &one);
        assert_eq!(c.min_value, -1.0);
        assert!((c.negative_integral - pr.v_at_nodes()[5] * pr.cell_volume()).abs() < 1e-15);
        assert!(!c.passed);
        let wavy = pr.grid.field_from(|z| (7.0 * z[0]).sin() * (5.0 * z[1]).cos());
        assert!(positivity_certificate(&pr, &positive_part(&wavy)).passed);
    }

    #[test]
    fn weakform_check_basic_properties() {
        let (pr, _) = demo(0.05);
        let tests = default_test_set(&pr, 5, 9);
        assert_eq!(weakform_check(&pr, &pr.grid.zeros(), &tests).unwrap(), 0.0);
        let u = pr.grid.field_from(|z| z[0] * (1.0 - z[0]) * z[1] * (1.0 - z[1]));
        let doubled = TestSet { fields: tests.fields.iter().map(|f| f.scale(2.0)).collect(), hats: false };
        let single = TestSet { fields: tests.fields.clone(), hats: false };
        let a = weakform_check(&pr, &u, &single).unwrap();
        let b = weakform_check(&pr, &u, &doubled).unwrap();
        assert!((a - b).abs() < 1e-14 * a);
        let zero = TestSet { fields: vec![pr.grid.zeros()], hats: false };
        assert!(weakform_check(&pr, &u, &zero).is_err());
    }

    #[test]
    fn solve_is_deterministic() {
        let (pr, geom) = demo(0.05);
        let cfg = SolverConfig::default();
        let a = solve(&pr, &geom, &cfg).unwrap();
        let b = solve(&pr, &geom, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.contracts(&Contracts::default()).all(), "{:?}", a.contracts(&Contracts::default()).failures());
    }
}
