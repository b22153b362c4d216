//! Empirical checks of the inequalities behind the construction: the
//! weighted Sobolev-Poincare embedding, the fibering sign structure, the
//! lower bound on the sphere, and estimator-vs-oracle agreement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{
    embedding_constant, geometry_inputs, mp_radius, sphere_bound, GeometryInputs, Params, Problem,
};
use crate::grid::{Field, Grid};
use crate::quasimetric::QuasiMetricSpace;
use crate::sum::pairwise_sum;
use crate::weights::{
    abs_power_integral, ap_constant, balance_constant, conjugate, relative_change, BallFamily, Refinement, Weight,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendEntry {
    /// Nodes per axis.
    pub resolution: usize,
    pub max_ratio: f64,
}

/// Result of sampling one inequality `LHS <= RHS` as the ratio `LHS / RHS`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub id: String,
    pub samples: usize,
    pub max_ratio: f64,
    /// Sample attaining `max_ratio` when it exceeds 1.
    pub violating_sample: Option<usize>,
    /// Max ratio per resolution, coarsest first.
    pub trend: Vec<TrendEntry>,
    /// Relative change of the max ratio over the last refinement is below
    /// the stability threshold.
    pub stable: Option<bool>,
}

impl InequalityReport {
    fn from_ratios(id: &str, ratios: &[f64]) -> Result<Self> {
        if ratios.is_empty() {
            return Err(Error::EmptySample);
        }
        let (arg, max) = argmax(ratios);
        Ok(InequalityReport {
            id: id.into(),
            samples: ratios.len(),
            max_ratio: max,
            violating_sample: (max > 1.0).then_some(arg),
            trend: Vec::new(),
            stable: None,
        })
    }
}

/// First index of the maximum; NaN counts as +inf.
fn argmax(v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in v.iter().enumerate() {
        let x = if x.is_nan() { f64::INFINITY } else { *x };
        if x > best.1 {
            best = (i, x);
        }
    }
    best
}

/// A test function on the box, independent of the grid it is sampled on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SampleFunction {
    /// Multilinear interpolant of values on a coarse lattice with `nodes`
    /// points per axis, zero on the boundary.
    Multilinear { nodes: usize, values: Vec<f64> },
    /// One of [`SHAPE_COUNT`] fixed bumps and ramps.
    Shape(usize),
}

pub const SHAPE_COUNT: usize = 10;

impl SampleFunction {
    /// Random multilinear function with i.i.d. uniform(-1, 1) interior values.
    pub fn random(dim: usize, nodes: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let count = (nodes - 2).pow(dim as u32);
        SampleFunction::Multilinear { nodes, values: (0..count).map(|_| rng.gen_range(-1.0..1.0)).collect() }
    }

    /// Value at unit-box coordinates `s in [0, 1]^N`.
    pub fn eval_unit(&self, s: &[f64]) -> f64 {
        match self {
            SampleFunction::Multilinear { nodes, values } => multilinear(*nodes, values, s),
            SampleFunction::Shape(k) => shape(*k, s),
        }
    }

    pub fn on_grid(&self, grid: &Grid) -> Field {
        let d = grid.dim();
        grid.field_from(|z| {
            let s: Vec<f64> = (0..d).map(|a| (z[a] - grid.lo[a]) / (grid.hi[a] - grid.lo[a])).collect();
            self.eval_unit(&s)
        })
    }
}

fn multilinear(nodes: usize, values: &[f64], s: &[f64]) -> f64 {
    let d = s.len();
    let inner = nodes - 2;
    let cells = (nodes - 1) as f64;
    let mut base = vec![0usize; d];
    let mut frac = vec![0.0; d];
    for a in 0..d {
        let x = (s[a] * cells).clamp(0.0, cells);
        let i = (x.floor() as usize).min(nodes - 2);
        base[a] = i;
        frac[a] = x - i as f64;
    }
    let mut total = 0.0;
    for mask in 0..1usize << d {
        let mut w = 1.0;
        let mut idx = 0;
        let mut boundary = false;
        for a in 0..d {
            let up = (mask >> a) & 1;
            let node = base[a] + up;
            w *= if up == 1 { frac[a] } else { 1.0 - frac[a] };
            if node == 0 || node == nodes - 1 {
                boundary = true;
            } else {
                idx = idx * inner + (node - 1);
            }
        }
        if !boundary && w != 0.0 {
            total += w * values[idx];
        }
    }
    total
}

fn shape(k: usize, s: &[f64]) -> f64 {
    use std::f64::consts::PI;
    let prod = |f: &dyn Fn(f64) -> f64| s.iter().map(|x| f(*x)).product::<f64>();
    let bump = |c: f64, w: f64| prod(&|x: f64| (1.0 - ((x - c) / w).powi(2)).max(0.0));
    match k {
        0 => prod(&|x| (PI * x).sin()),
        1 => prod(&|x| (2.0 * PI * x).sin()),
        2 => prod(&|x| (PI * x).sin().powi(3)),
        3 => prod(&|x| 1.0 - (2.0 * x - 1.0).abs()),
        4 => (1.0 + 3.0 * s[0]) * prod(&|x| x * (1.0 - x)),
        5 => bump(0.3, 0.25),
        6 => bump(0.5, 0.1),
        7 => prod(&|x| (3.0 * PI * x).sin()),
        8 => prod(&|x| (x / 0.2).min((1.0 - x) / 0.8)),
        _ => (2.0 * PI * s[0]).sin() * s[1..].iter().map(|x| (PI * x).sin()).product::<f64>(),
    }
}

/// The sample set: `random` multilinear functions followed by the fixed shapes.
pub fn sample_functions(dim: usize, random: usize, nodes: usize, seed: u64) -> Vec<SampleFunction> {
    (0..random as u64)
        .map(|i| SampleFunction::random(dim, nodes, seed, i))
        .chain((0..SHAPE_COUNT).map(SampleFunction::Shape))
        .collect()
}

pub struct PoincareSetup<'a> {
    pub omega: &'a Weight,
    pub v: &'a Weight,
    pub params: Params,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub radius: f64,
    pub x0: Vec<f64>,
    /// Random multilinear samples (the fixed shapes come on top).
    pub samples: usize,
    /// Nodes per axis of the coarsest grid.
    pub resolution: usize,
    /// Number of grids; each doubles the cell count per axis.
    pub levels: usize,
    /// Nodes per axis of the random coarse lattice.
    pub lattice: usize,
    pub quadrature: usize,
    pub stability: f64,
    pub seed: u64,
}

impl<'a> PoincareSetup<'a> {
    pub fn new(omega: &'a Weight, v: &'a Weight, params: Params, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        let radius = 0.5 * lo.iter().zip(&hi).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
        let x0 = lo[..params.n].iter().zip(&hi[..params.n]).map(|(a, b)| 0.5 * (a + b)).collect();
        PoincareSetup {
            omega,
            v,
            params,
            lo,
            hi,
            radius,
            x0,
            samples: 100,
            resolution: 17,
            levels: 2,
            lattice: 6,
            quadrature: 64,
            stability: 0.2,
            seed: 0,
        }
    }
}

/// `|f - mean_v f|_{q,v}` with nodal quadrature on interior nodes.
fn centered_lqv(pr: &Problem, f: &Field, q: f64) -> f64 {
    let v = pr.v_at_nodes();
    let vf: Vec<f64> = f.values.iter().zip(v).map(|(x, w)| x * w).collect();
    let mean = pairwise_sum(&vf) / pairwise_sum(v);
    let t: Vec<f64> = f.values.iter().zip(v).map(|(x, w)| w * (x - mean).abs().powf(q)).collect();
    (pr.cell_volume() * pairwise_sum(&t)).powf(1.0 / q)
}

/// Empirical embedding constant: max over samples of
/// `|f - mean_v f|_{q,v} / (A |f|_E)` with `A` at `C0 = 1`.
pub fn poincare_check(s: &PoincareSetup) -> Result<InequalityReport> {
    let n = s.params.n;
    let m = s.params.m;
    let functions = sample_functions(n + m, s.samples, s.lattice, s.seed);
    let mut report: Option<InequalityReport> = None;
    let mut trend = Vec::new();
    for level in 0..s.levels.max(1) {
        let nodes = ((s.resolution - 1) << level) + 1;
        let grid = Grid::new(n, m, s.lo.clone(), s.hi.clone(), vec![nodes; n + m])?;
        let pr = Problem::new(grid, s.omega.clone(), s.v.clone(), s.params)?;
        let a = embedding_constant(&geometry_inputs(&pr, 1.0, s.radius, &s.x0, s.quadrature)?);
        let ratios: Vec<f64> = functions
            .par_iter()
            .map(|f| {
                let u = f.on_grid(&pr.grid);
                let lhs = centered_lqv(&pr, &u, s.params.q);
                if lhs == 0.0 {
                    0.0
                } else {
                    lhs / (a * pr.e_norm(&u))
                }
            })
            .collect();
        let r = InequalityReport::from_ratios("poincare", &ratios)?;
        trend.push(TrendEntry { resolution: nodes, max_ratio: r.max_ratio });
        report = Some(r);
    }
    let mut report = report.expect("at least one level");
    if trend.len() >= 2 {
        let k = trend.len();
        report.stable = Some(relative_change(trend[k - 2].max_ratio, trend[k - 1].max_ratio) < s.stability);
    }
    report.trend = trend;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub t: f64,
    pub energy: f64,
    pub closed_form: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignBand {
    pub positive: bool,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberingProfile {
    pub points: Vec<ScanPoint>,
    pub bands: Vec<SignBand>,
    /// `max |I(t u) - poly(t)| / scale(t)`, `scale(t)` the sum of the
    /// magnitudes of the three terms (at least 1).
    pub identity_error: f64,
    /// `t` at which `|t u|_E = rho`.
    pub sphere_t: f64,
    pub negative_at_start: bool,
    pub negative_at_end: bool,
    /// The band containing `sphere_t` is positive.
    pub sphere_in_positive_band: bool,
    /// Negative, positive, negative.
    pub three_bands: bool,
}

/// `count` log-spaced points from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| if count == 1 { lo } else { (a + (b - a) * k as f64 / (count - 1) as f64).exp() })
        .collect()
}

/// `u` rescaled so that the sign changes of `t -> I(t u)` sit symmetrically
/// around `t = 1` on a log scale: the small root of the `p`/`gamma` pair
/// and the large root of the `p`/`q` pair are estimated separately and `u`
/// is multiplied by their geometric mean.
pub fn fibering_direction(pr: &Problem, u: &Field) -> Result<Field> {
    let Params { p, q, gamma, mu, .. } = pr.params;
    let f = pr.fibering_integrals(u);
    if !(f.vq > 0.0 && f.g > 0.0 && f.e_p > 0.0) {
        return Err(Error::DegenerateSeed("direction has no positive part".into()));
    }
    if !(mu > 0.0) {
        return Ok(u.clone());
    }
    let pp = f.e_p / p;
    let small = (mu * f.g / gamma / pp).powf(1.0 / (p - gamma));
    let large = (pp / (f.vq / q)).powf(1.0 / (q - p));
    Ok(u.scale((small * large).sqrt()))
}

/// `t -> I(t u)` on `ts`, next to the closed-form polynomial in `t`.
pub fn fibering_scan(pr: &Problem, u: &Field, ts: &[f64], rho: f64) -> Result<FiberingProfile> {
    if ts.is_empty() {
        return Err(Error::EmptySample);
    }
    let Params { p, q, gamma, mu, .. } = pr.params;
    let f = pr.fibering_integrals(u);
    let points: Vec<ScanPoint> = ts
        .par_iter()
        .map(|&t| ScanPoint { t, energy: pr.energy(&u.scale(t)).i, closed_form: f.energy(&pr.params, t) })
        .collect();
    let identity_error = points
        .iter()
        .map(|s| {
            let t = s.t;
            let scale = (t.powf(p) / p * f.e_p + t.powf(q) / q * f.vq + mu * t.powf(gamma) / gamma * f.g).max(1.0);
            (s.energy - s.closed_form).abs() / scale
        })
        .fold(0.0, f64::max);
    let mut bands: Vec<SignBand> = Vec::new();
    for s in points.iter().filter(|s| s.energy != 0.0) {
        let pos = s.energy > 0.0;
        match bands.last_mut() {
            Some(b) if b.positive == pos => b.t_end = s.t,
            _ => bands.push(SignBand { positive: pos, t_start: s.t, t_end: s.t }),
        }
    }
    let sphere_t = rho / pr.e_norm(u);
    let sphere_in_positive_band = bands.iter().any(|b| b.positive && b.t_start <= sphere_t && sphere_t <= b.t_end);
    let signs: Vec<bool> = bands.iter().map(|b| b.positive).collect();
    Ok(FiberingProfile {
        negative_at_start: points[0].energy < 0.0,
        negative_at_end: points[points.len() - 1].energy < 0.0,
        three_bands: signs == [false, true, false],
        sphere_in_positive_band,
        sphere_t,
        bands,
        identity_error,
        points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereReport {
    /// Ratios `bound / I(u)` (+inf when `I(u) <= 0`).
    pub report: InequalityReport,
    pub radius: f64,
    pub bound: f64,
    pub min_energy: f64,
    /// `max | |u|_E - rho |` over the scaled samples.
    pub norm_error: f64,
}

/// Random fields scaled to `|u|_E = rho` against the sphere lower bound,
/// with `rho` and the bound computed from `inputs` (whose `C0` the caller
/// chooses).
pub fn sphere_bound_check(pr: &Problem, inputs: &GeometryInputs, samples: usize, lattice: usize, seed: u64) -> Result<SphereReport> {
    if samples == 0 {
        return Err(Error::EmptySample);
    }
    let rho = mp_radius(inputs)?;
    let bound = sphere_bound(inputs)?;
    let d = pr.grid.dim();
    let vals: Vec<(f64, f64)> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let u = SampleFunction::random(d, lattice, seed, i).on_grid(&pr.grid);
            let u = u.scale(rho / pr.e_norm(&u));
            (pr.energy(&u).i, (pr.e_norm(&u) - rho).abs())
        })
        .collect();
    let ratios: Vec<f64> = vals.iter().map(|(e, _)| if *e > 0.0 { bound / e } else { f64::INFINITY }).collect();
    Ok(SphereReport {
        report: InequalityReport::from_ratios("sphere_bound", &ratios)?,
        radius: rho,
        bound,
        min_energy: vals.iter().map(|v| v.0).fold(f64::INFINITY, f64::min),
        norm_error: vals.iter().map(|v| v.1).fold(0.0, f64::max),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub steps: Vec<f64>,
    /// Least-squares slope of log(error) against log(h), per pair.
    pub slopes: Vec<f64>,
    pub min_slope: f64,
    /// Slope of the max-over-pairs relative error against `h`.
    pub aggregate_slope: f64,
    /// Max over pairs of the relative error at the smallest step.
    pub max_relative_error: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.max(1e-300).ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Central differences of `I` along `phi` against `<residual(u), phi>` for
/// `pairs` random pairs. `u` is a random tilt `0.2 + sum c_a (z_a - lo_a)`,
/// `c_a` in `[2, 4]`, plus nodal noise below `0.8 min c_a` times the
/// spacing, so `u > 0` and no grid difference comes near the kink of
/// `|G|^p`. `phi` is drawn in `[-0.5, 1.5]`.
pub fn gradient_check(pr: &Problem, pairs: usize, steps: &[f64], seed: u64) -> Result<GradientCheck> {
    if pairs == 0 || steps.len() < 2 {
        return Err(Error::EmptySample);
    }
    let n = pr.num_unknowns();
    let dim = pr.grid.dim();
    let spacing = (0..dim)
        .map(|a| (pr.grid.hi[a] - pr.grid.lo[a]) / (pr.grid.counts[a] - 1) as f64)
        .fold(f64::INFINITY, f64::min);
    let rows: Vec<Result<Vec<f64>>> = (0..pairs as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            let tilt: Vec<f64> = (0..dim).map(|_| rng.gen_range(2.0..4.0)).collect();
            let amp = 0.8 * spacing * tilt.iter().copied().fold(f64::INFINITY, f64::min);
            let u = Field::new(
                (0..n)
                    .map(|k| {
                        let z = pr.grid.interior_coord(k);
                        let ramp: f64 = z.iter().zip(&pr.grid.lo).zip(&tilt).map(|((z, lo), c)| c * (z - lo)).sum();
                        0.2 + ramp + rng.gen_range(0.0..amp)
                    })
                    .collect(),
            );
            let phi = Field::new((0..n).map(|_| rng.gen_range(-0.5..1.5)).collect());
            let exact = pr.residual(&u)?.dot(&phi);
            Ok(steps
                .iter()
                .map(|&h| {
                    let fd = (pr.energy(&u.axpy(h, &phi)).i - pr.energy(&u.axpy(-h, &phi)).i) / (2.0 * h);
                    (fd - exact).abs() / exact.abs().max(f64::MIN_POSITIVE)
                })
                .collect())
        })
        .collect();
    let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
    let slopes: Vec<f64> = rows.iter().map(|r| loglog_slope(steps, r)).collect();
    let worst: Vec<f64> = (0..steps.len()).map(|k| rows.iter().map(|r| r[k]).fold(0.0, f64::max)).collect();
    let smallest = (0..steps.len()).min_by(|a, b| steps[*a].total_cmp(&steps[*b])).unwrap();
    Ok(GradientCheck {
        steps: steps.to_vec(),
        min_slope: slopes.iter().copied().fold(f64::INFINITY, f64::min),
        aggregate_slope: loglog_slope(steps, &worst),
        max_relative_error: worst[smallest],
        slopes,
    })
}

/// Brute-force A_p constant of `|x|^alpha` on `[-1, 1]`: every interval
/// with endpoints on `points` equispaced nodes, exact integrals.
pub fn ap_brute_force(alpha: f64, p: f64, points: usize) -> f64 {
    let xs: Vec<f64> = (0..points).map(|k| -1.0 + 2.0 * k as f64 / (points - 1) as f64).collect();
    let beta = alpha * (1.0 - conjugate(p));
    let mut best: f64 = 0.0;
    for i in 0..points {
        for j in i + 1..points {
            let (a, b) = (xs[i], xs[j]);
            let len = b - a;
            let r = abs_power_integral(a, b, alpha) / len * (abs_power_integral(a, b, beta) / len).powf(p - 1.0);
            best = best.max(if r.is_nan() { f64::INFINITY } else { r });
        }
    }
    best
}

/// `h_0(t)` for `omega = |x|^alpha` on the real line:
/// `t ((1/2t) int_{-t}^t |s|^beta ds)^{1/p'}`, `beta = alpha(1 - p')`.
pub fn h_power_at_origin(alpha: f64, p: f64, t: f64) -> f64 {
    let pp = conjugate(p);
    let beta = alpha * (1.0 - pp);
    t * (t.powf(beta) / (beta + 1.0)).powf(1.0 / pp)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub reference: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleTable {
    pub rows: Vec<OracleRow>,
    pub all_passed: bool,
}

fn row(name: &str, value: f64, reference: f64, passed: bool, detail: String) -> OracleRow {
    OracleRow { name: name.into(), passed, value, reference, detail }
}

/// The brute-force comparisons of the weight and quasi-metric estimators
/// and the gradient order check.
pub fn oracle_suite(seed: u64) -> Result<OracleTable> {
    let mut rows = Vec::new();

    let fam = BallFamily::dyadic(&[0.0], 1.0, 33, 5)?;
    let est = ap_constant(&Weight::power(0.5), 2.0, &fam, &Refinement::default())?;
    let brute = ap_brute_force(0.5, 2.0, 141);
    let rel = relative_change(brute, est.value);
    rows.push(row("ap_interval_scan", est.value, brute, rel <= 0.05, format!("relative gap {rel:.3e}")));

    let fam = BallFamily::dyadic(&[0.0], 1.0, 17, 6)?;
    let (v, w) = (Weight::power(0.2), Weight::power(0.3));
    let refine = Refinement::single(64);
    let coarse = balance_constant(&v, &w, 1.5, 3.0, 1, 1, &fam, &refine)?;
    let fine = balance_constant(&v, &w, 1.5, 3.0, 1, 1, &fam.refined_ladder(), &refine)?;
    let rel = relative_change(coarse.value, fine.value);
    rows.push(row(
        "balance_refinement",
        fine.value,
        coarse.value,
        coarse.value.is_finite() && rel <= 0.1,
        format!("relative change {rel:.3e}"),
    ));

    let qm = QuasiMetricSpace::new(Weight::power(0.5), 2.0, 1, 1, 2.0 * 2f64.sqrt())?;
    let mut worst: f64 = 0.0;
    for t in [0.05, 0.2, 0.5, 1.0] {
        let exact = h_power_at_origin(0.5, 2.0, t);
        worst = worst.max((qm.h(&[0.0], t)? - exact).abs() / exact);
    }
    rows.push(row("h_closed_form", worst, 1e-5, worst <= 1e-5, "max relative error over t".into()));

    let a = qm.quasi_triangle_constant(10_000, &[-1.0, -1.0], &[1.0, 1.0], seed)?;
    let b = qm.quasi_triangle_constant(10_000, &[-1.0, -1.0], &[1.0, 1.0], seed.wrapping_add(1))?;
    let rel = relative_change(a.k0_estimate, b.k0_estimate);
    rows.push(row(
        "k0_two_seed",
        a.k0_estimate,
        b.k0_estimate,
        a.k0_estimate.is_finite() && rel <= 0.1,
        format!("relative change {rel:.3e}"),
    ));

    let pr = Problem::new(
        Grid::cube(1, 1, 0.0, 1.0, 17)?,
        Weight::constant(1.0),
        Weight::constant(1.0),
        Params { p: 1.5, q: 3.0, gamma: 1.3, mu: 0.05, n: 1, m: 1 },
    )?;
    let g = gradient_check(&pr, 20, &[1e-2, 1e-3, 1e-4], seed)?;
    rows.push(row(
        "gradient_order",
        g.aggregate_slope,
        1.9,
        g.aggregate_slope >= 1.9 && g.max_relative_error <= 1e-6,
        format!("relative error at h = 1e-4: {:.3e}; per-pair min slope {:.3}", g.max_relative_error, g.min_slope),
    ));

    let all_passed = rows.iter().all(|r| r.passed);
    Ok(OracleTable { rows, all_passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::seed_bump;

    fn unit_problem(mu: f64) -> Problem {
        let one = Weight::constant(1.0);
        let prm = Params { p: 1.5, q: 3.0, gamma: 1.3, mu, n: 1, m: 1 };
        Problem::new(Grid::cube(1, 1, 0.0, 1.0, 9).unwrap(), one.clone(), one, prm).unwrap()
    }

    #[test]
    fn poincare_ratio_is_scale_invariant() {
        let pr = unit_problem(0.05);
        let u = SampleFunction::random(2, 5, 3, 0).on_grid(&pr.grid);
        let r = |f: &Field| centered_lqv(&pr, f, 3.0) / pr.e_norm(f);
        let (a, b) = (r(&u), r(&u.scale(2.0)));
        assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn constant_function_has_zero_deviation() {
        let pr = unit_problem(0.05);
        let u = Field::new(vec![0.7; pr.num_unknowns()]);
        assert!(centered_lqv(&pr, &u, 3.0) < 1e-14);
    }

    #[test]
    fn multilinear_vanishes_on_boundary() {
        let f = SampleFunction::random(2, 6, 1, 4);
        for s in [[0.0, 0.3], [1.0, 0.5], [0.2, 0.0], [0.9, 1.0]] {
            assert_eq!(f.eval_unit(&s), 0.0);
        }
        assert!(f.eval_unit(&[0.5, 0.5]) != 0.0);
    }

    #[test]
    fn empty_samples_are_rejected() {
        assert!(matches!(InequalityReport::from_ratios("x", &[]), Err(Error::EmptySample)));
        let pr = unit_problem(0.05);
        let u = seed_bump(&pr, 1.0);
        assert!(matches!(fibering_scan(&pr, &u, &[], 1.0), Err(Error::EmptySample)));
    }

    #[test]
    fn fibering_scan_matches_polynomial() {
        let one = Weight::constant(1.0);
        let prm = Params { p: 2.0, q: 4.0, gamma: 1.3, mu: 0.01, n: 2, m: 1 };
        let pr = Problem::new(Grid::cube(2, 1, 0.0, 1.0, 7).unwrap(), one.clone(), one, prm).unwrap();
        let u = fibering_direction(&pr, &seed_bump(&pr, 1.0)).unwrap();
        let prof = fibering_scan(&pr, &u, &log_grid(1e-3, 1e3, 60), 1.0).unwrap();
        assert!(prof.identity_error <= 1e-12, "{}", prof.identity_error);
        assert!(prof.three_bands, "{:?}", prof.bands);
    }

    #[test]
    fn without_concave_term_sign_changes_once() {
        let pr = unit_problem(0.0);
        let u = seed_bump(&pr, 1.0);
        let prof = fibering_scan(&pr, &u, &log_grid(1e-3, 1e3, 60), 1.0).unwrap();
        let signs: Vec<bool> = prof.bands.iter().map(|b| b.positive).collect();
        assert_eq!(signs, [true, false]);
    }

    #[test]
    fn sphere_samples_sit_on_the_sphere() {
        let pr = unit_problem(0.05);
        let gi = geometry_inputs(&pr, 1.0, pr.grid.circumradius(), &pr.grid.x_center(), 32).unwrap();
        let r = sphere_bound_check(&pr, &gi, 8, 5, 0).unwrap();
        assert!(r.norm_error <= 1e-12 * r.radius.max(1.0));
        assert!(matches!(sphere_bound_check(&pr, &gi, 0, 5, 0), Err(Error::EmptySample)));
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-3, 1e3, 7);
        assert!((g[0] - 1e-3).abs() < 1e-18 && (g[6] - 1e3).abs() < 1e-9);
        assert!((g[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn h_closed_form_reduces_to_identity() {
        for t in [0.1, 1.0, 3.0] {
            assert!((h_power_at_origin(0.0, 2.0, t) - t).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_check_is_deterministic() {
        let pr = unit_problem(0.05);
        let a = gradient_check(&pr, 3, &[1e-2, 1e-3], 9).unwrap();
        let b = gradient_check(&pr, 3, &[1e-2, 1e-3], 9).unwrap();
        assert_eq!(a.slopes, b.slopes);
    }
}
