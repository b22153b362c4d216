//! Positive weights on R^n and estimators for the Muckenhoupt, doubling,
//! balance and compactness constants over finite ball families.
//!
//! Every supremum over "all balls" is replaced by a maximum over a
//! [`BallFamily`]; estimators are evaluated at several quadrature
//! refinement levels so that non-integrable weights show up as a
//! `diverged` flag instead of a silently finite number.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sum::pairwise_sum;

/// Nearest-cell table on a box of R^n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
    /// Cell values, last axis fastest.
    pub values: Vec<f64>,
}

impl Table {
    fn lookup(&self, x: &[f64]) -> f64 {
        let mut idx = 0;
        for a in 0..self.counts.len() {
            let h = (self.hi[a] - self.lo[a]) / self.counts[a] as f64;
            let k = ((x[a] - self.lo[a]) / h).floor();
            let k = k.clamp(0.0, (self.counts[a] - 1) as f64) as usize;
            idx = idx * self.counts[a] + k;
        }
        self.values[idx]
    }
}

/// A positive weight function on R^n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weight {
    Constant { c: f64 },
    /// `coef * |x|^alpha`.
    Power { coef: f64, alpha: f64 },
    /// `coef * prod_i |x_i|^{alpha_i}`.
    Product { coef: f64, alphas: Vec<f64> },
    Tabulated(Table),
}

impl Weight {
    pub fn constant(c: f64) -> Self {
        Weight::Constant { c }
    }

    pub fn power(alpha: f64) -> Self {
        Weight::Power { coef: 1.0, alpha }
    }

    pub fn product(alphas: Vec<f64>) -> Self {
        Weight::Product { coef: 1.0, alphas }
    }

    pub fn tabulated(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n = lo.len();
        if hi.len() != n || counts.len() != n {
            return Err(Error::InvalidWeight("table bounds and counts disagree in dimension".into()));
        }
        if counts.iter().any(|&c| c == 0) || lo.iter().zip(&hi).any(|(l, h)| !(h > l)) {
            return Err(Error::InvalidWeight("degenerate table axis".into()));
        }
        if values.len() != counts.iter().product::<usize>() {
            return Err(Error::InvalidWeight("table value count mismatch".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidWeight("table values must be finite and nonnegative".into()));
        }
        Ok(Weight::Tabulated(Table { lo, hi, counts, values }))
    }

    /// Checks the coefficient and dimension against `n`.
    pub fn check(&self, n: usize) -> Result<()> {
        match self {
            Weight::Constant { c } if !(*c > 0.0 && c.is_finite()) => {
                Err(Error::InvalidWeight(format!("constant {c} is not positive")))
            }
            Weight::Power { coef, alpha } if !(*coef > 0.0 && alpha.is_finite()) => {
                Err(Error::InvalidWeight("power weight needs coef > 0 and finite exponent".into()))
            }
            Weight::Product { coef, alphas } => {
                if !(*coef > 0.0) || alphas.iter().any(|a| !a.is_finite()) {
                    Err(Error::InvalidWeight("product weight needs coef > 0 and finite exponents".into()))
                } else if alphas.len() != n {
                    Err(Error::InvalidWeight(format!(
                        "product weight has {} exponents for dimension {n}",
                        alphas.len()
                    )))
                } else {
                    Ok(())
                }
            }
            Weight::Tabulated(t) if t.counts.len() != n => Err(Error::InvalidWeight(format!(
                "table has dimension {} but weight is used in dimension {n}",
                t.counts.len()
            ))),
            _ => Ok(()),
        }
    }

    pub fn is_unit(&self) -> bool {
        matches!(self, Weight::Constant { c } if *c == 1.0)
    }

    /// Pointwise value. Power weights at their singular set return 0 or inf.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Weight::Constant { c } => *c,
            Weight::Power { coef, alpha } => {
                if *alpha == 0.0 {
                    return *coef;
                }
                let r2: f64 = x.iter().map(|v| v * v).sum();
                coef * r2.powf(0.5 * alpha)
            }
            Weight::Product { coef, alphas } => {
                coef * x
                    .iter()
                    .zip(alphas)
                    .map(|(xi, a)| if *a == 0.0 { 1.0 } else { xi.abs().powf(*a) })
                    .product::<f64>()
            }
            Weight::Tabulated(t) => t.lookup(x),
        }
    }

    /// True when `x` lies on the set where the closed form is 0 or infinite.
    pub fn is_singular_at(&self, x: &[f64]) -> bool {
        match self {
            Weight::Power { alpha, .. } => *alpha != 0.0 && x.iter().all(|v| *v == 0.0),
            Weight::Product { alphas, .. } => x.iter().zip(alphas).any(|(xi, a)| *a != 0.0 && *xi == 0.0),
            _ => false,
        }
    }

    /// Value at a quadrature node; nodes on the singular set are moved by half
    /// a cell along every axis.
    pub fn eval_node(&self, x: &[f64], h: &[f64]) -> f64 {
        if self.is_singular_at(x) {
            let shifted: Vec<f64> = x.iter().zip(h).map(|(xi, hi)| xi + 0.5 * hi).collect();
            self.eval(&shifted)
        } else {
            self.eval(x)
        }
    }

    /// `a * w`.
    pub fn scaled(&self, a: f64) -> Weight {
        match self {
            Weight::Constant { c } => Weight::Constant { c: c * a },
            Weight::Power { coef, alpha } => Weight::Power { coef: coef * a, alpha: *alpha },
            Weight::Product { coef, alphas } => Weight::Product { coef: coef * a, alphas: alphas.clone() },
            Weight::Tabulated(t) => Weight::Tabulated(Table {
                values: t.values.iter().map(|v| v * a).collect(),
                ..t.clone()
            }),
        }
    }

    /// `w^e`.
    pub fn powf(&self, e: f64) -> Weight {
        match self {
            Weight::Constant { c } => Weight::Constant { c: c.powf(e) },
            Weight::Power { coef, alpha } => Weight::Power { coef: coef.powf(e), alpha: alpha * e },
            Weight::Product { coef, alphas } => Weight::Product {
                coef: coef.powf(e),
                alphas: alphas.iter().map(|a| a * e).collect(),
            },
            Weight::Tabulated(t) => Weight::Tabulated(Table {
                values: t.values.iter().map(|v| v.powf(e)).collect(),
                ..t.clone()
            }),
        }
    }

    /// The dual weight `sigma = w^{1-p'}` of the A_p condition.
    pub fn sigma(&self, p: f64) -> Weight {
        self.powf(1.0 - conjugate(p))
    }

    /// Exact integral over the box `[lo, hi]` when the weight factorizes
    /// into one-dimensional power laws.
    pub fn exact_box_integral(&self, lo: &[f64], hi: &[f64]) -> Option<f64> {
        match self {
            Weight::Constant { c } => Some(c * lo.iter().zip(hi).map(|(l, h)| h - l).product::<f64>()),
            Weight::Power { coef, alpha } if lo.len() == 1 => Some(coef * abs_power_integral(lo[0], hi[0], *alpha)),
            Weight::Product { coef, alphas } => Some(
                coef * lo
                    .iter()
                    .zip(hi)
                    .zip(alphas)
                    .map(|((l, h), a)| abs_power_integral(*l, *h, *a))
                    .product::<f64>(),
            ),
            _ => None,
        }
    }

    fn separable(&self, n: usize) -> bool {
        match self {
            Weight::Constant { .. } | Weight::Product { .. } => true,
            Weight::Power { .. } => n == 1,
            Weight::Tabulated(_) => false,
        }
    }
}

/// Conjugate exponent `p' = p / (p - 1)`.
pub fn conjugate(p: f64) -> f64 {
    p / (p - 1.0)
}

/// `int_a^b |s|^alpha ds`, +inf when the interval reaches 0 and `alpha <= -1`.
pub fn abs_power_integral(a: f64, b: f64, alpha: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    if alpha == 0.0 {
        return b - a;
    }
    if alpha <= -1.0 && a <= 0.0 && b >= 0.0 {
        return f64::INFINITY;
    }
    let e = alpha + 1.0;
    if a < 0.0 && b > 0.0 {
        // split at the origin to avoid cancellation
        return (-a).powf(e) / e + b.powf(e) / e;
    }
    // same-sign interval [s, s + len] with s the end nearer the origin
    let (s, len) = if a >= 0.0 { (a, b - a) } else { (-b, b - a) };
    if s == 0.0 {
        return len.powf(e) / e;
    }
    // (s+len)^e - s^e without cancellation for short intervals
    s.powf(e) * (e * (len / s).ln_1p()).exp_m1() / e
}

/// A Euclidean ball in R^n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Midpoint masses of the cells of the ball's bounding-box tensor grid whose
/// centers lie inside the ball, last axis fastest. Separable weights use
/// exact cell integrals, tabulated once per axis.
fn ball_masses(w: &Weight, center: &[f64], radius: f64, res: usize) -> Result<Vec<f64>> {
    let n = center.len();
    let h = 2.0 * radius / res as f64;
    let hv = vec![h; n];
    let coords: Vec<Vec<f64>> = (0..n)
        .map(|a| (0..res).map(|k| center[a] - radius + (k as f64 + 0.5) * h).collect())
        .collect();
    let factors: Option<(f64, Vec<Vec<f64>>)> = match w {
        Weight::Constant { c } => Some((*c, coords.iter().map(|xs| xs.iter().map(|x| (x + 0.5 * h) - (x - 0.5 * h)).collect()).collect())),
        Weight::Product { coef, alphas } => Some((
            *coef,
            coords
                .iter()
                .zip(alphas)
                .map(|(xs, al)| xs.iter().map(|x| abs_power_integral(x - 0.5 * h, x + 0.5 * h, *al)).collect())
                .collect(),
        )),
        _ => None,
    };
    let r2 = radius * radius * (1.0 + 1e-12);
    let mut mass = Vec::new();
    let mut idx = vec![0usize; n];
    let mut c = vec![0.0; n];
    for _ in 0..res.pow(n as u32) {
        let mut d2 = 0.0;
        for a in 0..n {
            c[a] = coords[a][idx[a]];
            d2 += (c[a] - center[a]) * (c[a] - center[a]);
        }
        if d2 <= r2 {
            let m = match &factors {
                Some((k, f)) => k * (0..n).map(|a| f[a][idx[a]]).product::<f64>(),
                None => {
                    let val = w.eval_node(&c, &hv);
                    if let Weight::Tabulated(_) = w {
                        if !(val > 0.0) {
                            return Err(Error::InvalidWeight(format!("tabulated weight vanishes at {c:?}")));
                        }
                    }
                    val * h.powi(n as i32)
                }
            };
            mass.push(m);
        }
        for a in (0..n).rev() {
            idx[a] += 1;
            if idx[a] < res {
                break;
            }
            idx[a] = 0;
        }
    }
    Ok(mass)
}

/// Visits the cell centers of [`ball_cells`] inside the ball, in order,
/// with their multi-index.
fn for_ball_cells(center: &[f64], radius: f64, res: usize, mut f: impl FnMut(&[f64], &[usize])) {
    let n = center.len();
    let h = 2.0 * radius / res as f64;
    let coords: Vec<Vec<f64>> = (0..n)
        .map(|a| (0..res).map(|k| center[a] - radius + (k as f64 + 0.5) * h).collect())
        .collect();
    let r2 = radius * radius * (1.0 + 1e-12);
    let mut idx = vec![0usize; n];
    let mut c = vec![0.0; n];
    for _ in 0..res.pow(n as u32) {
        let mut d2 = 0.0;
        for a in 0..n {
            c[a] = coords[a][idx[a]];
            d2 += (c[a] - center[a]) * (c[a] - center[a]);
        }
        if d2 <= r2 {
            f(&c, &idx);
        }
        for a in (0..n).rev() {
            idx[a] += 1;
            if idx[a] < res {
                break;
            }
            idx[a] = 0;
        }
    }
}

/// Minimum of the cell-center values of `w` over the ball.
fn ball_infimum(w: &Weight, center: &[f64], radius: f64, res: usize) -> f64 {
    let h = vec![2.0 * radius / res as f64; center.len()];
    let mut inf = f64::INFINITY;
    for_ball_cells(center, radius, res, |x, _| inf = inf.min(w.eval_node(x, &h)));
    inf
}

/// Summed-area table over a `res^n` cell grid; `sum(lo, hi)` is the total
/// over the index box `lo <= k < hi`.
struct SummedArea {
    n: usize,
    side: usize,
    table: Vec<f64>,
}

impl SummedArea {
    fn new(n: usize, res: usize, cells: &[f64]) -> Self {
        let side = res + 1;
        let mut table = vec![0.0; side.pow(n as u32)];
        let mut idx = vec![0usize; n];
        for (k, v) in cells.iter().enumerate() {
            let mut flat = 0;
            for a in 0..n {
                flat = flat * side + idx[a] + 1;
            }
            table[flat] = *v;
            let _ = k;
            for a in (0..n).rev() {
                idx[a] += 1;
                if idx[a] < res {
                    break;
                }
                idx[a] = 0;
            }
        }
        let mut stride = 1;
        for _ in 0..n {
            for i in 0..table.len() {
                if (i / stride) % side != 0 {
                    table[i] += table[i - stride];
                }
            }
            stride *= side;
        }
        SummedArea { n, side, table }
    }

    fn sum(&self, lo: &[usize], hi: &[usize]) -> f64 {
        let mut total = 0.0;
        for mask in 0..1usize << self.n {
            let mut flat = 0;
            let mut sign = 1.0;
            for a in 0..self.n {
                let k = if (mask >> a) & 1 == 1 { hi[a] } else {
                    sign = -sign;
                    lo[a]
                };
                flat = flat * self.side + k;
            }
            total += sign * self.table[flat];
        }
        total
    }
}

fn check_ball(radius: f64, res: usize) -> Result<()> {
    if !(radius > 0.0) {
        return Err(Error::Parameter(format!("ball radius must be positive, got {radius}")));
    }
    if res < 4 {
        return Err(Error::Parameter(format!("quadrature resolution must be >= 4, got {res}")));
    }
    Ok(())
}

/// `int_Q w dx` over the ball `Q = Q(center, radius)`.
///
/// Midpoint rule on a `res^n` tensor grid over the bounding box, zeroing
/// cells whose centers fall outside the ball. Weights that factor into
/// one-dimensional power laws use exact cell integrals instead of the
/// midpoint value; in one dimension that is the exact interval integral.
/// Non-integrable weights yield `+inf`.
pub fn weight_integral(w: &Weight, center: &[f64], radius: f64, res: usize) -> Result<f64> {
    check_ball(radius, res)?;
    if center.len() == 1 && w.separable(1) {
        return Ok(w.exact_box_integral(&[center[0] - radius], &[center[0] + radius]).unwrap());
    }
    Ok(pairwise_sum(&ball_masses(w, center, radius, res)?))
}

/// Lebesgue measure of the ball under the same quadrature as [`weight_integral`].
pub fn ball_measure(center: &[f64], radius: f64, res: usize) -> Result<f64> {
    weight_integral(&Weight::constant(1.0), center, radius, res)
}

/// `int w dx` over the axis-aligned box `[lo, hi]`: exact for separable
/// weights, otherwise midpoint rule on `res` cells per axis.
pub fn box_integral(w: &Weight, lo: &[f64], hi: &[f64], res: usize) -> Result<f64> {
    if res < 1 || lo.iter().zip(hi).any(|(l, h)| !(h > l)) {
        return Err(Error::Parameter("box integral needs a nondegenerate box and res >= 1".into()));
    }
    let n = lo.len();
    if w.separable(n) {
        return Ok(w.exact_box_integral(lo, hi).unwrap());
    }
    let h: Vec<f64> = lo.iter().zip(hi).map(|(l, u)| (u - l) / res as f64).collect();
    let vol: f64 = h.iter().product();
    let mut vals = Vec::with_capacity(res.pow(n as u32));
    let mut idx = vec![0usize; n];
    for _ in 0..res.pow(n as u32) {
        let c: Vec<f64> = (0..n).map(|a| lo[a] + (idx[a] as f64 + 0.5) * h[a]).collect();
        vals.push(w.eval_node(&c, &h) * vol);
        for a in (0..n).rev() {
            idx[a] += 1;
            if idx[a] < res {
                break;
            }
            idx[a] = 0;
        }
    }
    Ok(pairwise_sum(&vals))
}

/// Finite family of balls replacing "all balls" in the suprema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallFamily {
    pub centers: Vec<Vec<f64>>,
    /// Strictly increasing.
    pub radii: Vec<f64>,
    pub enclosing_radius: f64,
    pub enclosing_center: Vec<f64>,
}

impl BallFamily {
    /// Node lattice of `per_axis` points per axis on `[x0 - R, x0 + R]^n`
    /// (restricted to the ball of radius `R`) and the ladder
    /// `R * ratio^{-k}`, `k = 0..steps`.
    pub fn lattice(x0: &[f64], enclosing_radius: f64, per_axis: usize, steps: usize, ratio: f64) -> Result<Self> {
        if per_axis == 0 || steps == 0 || !(ratio > 1.0) || !(enclosing_radius > 0.0) {
            return Err(Error::Parameter(
                "ball family needs per_axis >= 1, steps >= 1, ratio > 1 and R > 0".into(),
            ));
        }
        let n = x0.len();
        let coord = |k: usize| -> f64 {
            if per_axis == 1 {
                0.0
            } else {
                -1.0 + 2.0 * k as f64 / (per_axis - 1) as f64
            }
        };
        let mut centers = Vec::new();
        let mut idx = vec![0usize; n];
        for _ in 0..per_axis.pow(n as u32) {
            let c: Vec<f64> = (0..n).map(|a| x0[a] + enclosing_radius * coord(idx[a])).collect();
            let d2: f64 = c.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 <= enclosing_radius * enclosing_radius * (1.0 + 1e-12) {
                centers.push(c);
            }
            for a in (0..n).rev() {
                idx[a] += 1;
                if idx[a] < per_axis {
                    break;
                }
                idx[a] = 0;
            }
        }
        let radii = (0..steps).rev().map(|k| enclosing_radius * ratio.powi(-(k as i32))).collect();
        Ok(BallFamily {
            centers,
            radii,
            enclosing_radius,
            enclosing_center: x0.to_vec(),
        })
    }

    /// 32 lattice points per axis, 16-step ladder with ratio sqrt(2).
    pub fn standard(x0: &[f64], enclosing_radius: f64) -> Result<Self> {
        Self::lattice(x0, enclosing_radius, 32, 16, std::f64::consts::SQRT_2)
    }

    /// Dyadic ladder (ratio 2).
    pub fn dyadic(x0: &[f64], enclosing_radius: f64, per_axis: usize, levels: usize) -> Result<Self> {
        Self::lattice(x0, enclosing_radius, per_axis, levels, 2.0)
    }

    /// Same centers and radius span, ladder ratio replaced by its square root.
    pub fn refined_ladder(&self) -> Self {
        let rmin = self.radii[0];
        let rmax = *self.radii.last().unwrap();
        let steps = 2 * self.radii.len() - 1;
        let radii = if self.radii.len() == 1 {
            self.radii.clone()
        } else {
            (0..steps)
                .map(|k| rmin * (rmax / rmin).powf(k as f64 / (steps - 1) as f64))
                .collect()
        };
        BallFamily { radii, ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        self.enclosing_center.len()
    }

    pub fn len(&self) -> usize {
        self.centers.len() * self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Parameter("ball family is empty".into()));
        }
        if self.radii.iter().any(|r| !(*r > 0.0)) || self.radii.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parameter("radius ladder must be positive and strictly increasing".into()));
        }
        let r2 = self.enclosing_radius * self.enclosing_radius * (1.0 + 1e-9);
        for c in &self.centers {
            let d2: f64 = c.iter().zip(&self.enclosing_center).map(|(a, b)| (a - b) * (a - b)).sum();
            if c.len() != self.dim() || d2 > r2 {
                return Err(Error::Parameter("family center outside the enclosing ball".into()));
            }
        }
        Ok(())
    }
}

/// Quadrature refinement schedule shared by all estimators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    /// Resolution of the coarsest level.
    pub resolution: usize,
    /// Number of levels; level `l` uses `resolution * 2^l`.
    pub levels: usize,
    /// Growth factor across the three finest levels that flags divergence.
    pub growth_factor: f64,
    /// Values above this are treated as overflow.
    pub overflow_guard: f64,
}

impl Default for Refinement {
    fn default() -> Self {
        Refinement {
            resolution: 32,
            levels: 3,
            growth_factor: 2.0,
            overflow_guard: 1e150,
        }
    }
}

impl Refinement {
    pub fn single(resolution: usize) -> Self {
        Refinement { resolution, levels: 1, ..Default::default() }
    }

    fn resolutions(&self) -> Vec<usize> {
        (0..self.levels.max(1)).map(|l| self.resolution << l).collect()
    }

    /// Divergence rule: any non-finite or overflowing level, or strictly
    /// increasing values across the three finest levels with total growth
    /// above `growth_factor`.
    pub fn diverged(&self, levels: &[f64]) -> bool {
        if levels.iter().any(|v| !v.is_finite() || *v > self.overflow_guard) {
            return true;
        }
        if levels.len() < 3 {
            return false;
        }
        let t = &levels[levels.len() - 3..];
        t[0] < t[1] && t[1] < t[2] && t[2] > self.growth_factor * t[0]
    }
}

/// A supremum estimate over a ball family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    /// Value at the finest level (+inf when non-integrable).
    pub value: f64,
    /// Value at every refinement level, coarsest first.
    pub levels: Vec<f64>,
    pub diverged: bool,
    /// Ball attaining the maximum at the finest level.
    pub argmax: Option<Ball>,
}

fn sanitize(v: f64, guard: f64) -> f64 {
    if v.is_nan() || v > guard {
        f64::INFINITY
    } else {
        v
    }
}

/// Maximum of `ratio(center_index, radii_values)` over centers, evaluated in
/// parallel; each call returns one value per entry of its own index space.
fn scan_centers<F>(family: &BallFamily, per_center: F) -> Result<(f64, Option<(usize, usize)>)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let rows: Vec<Result<Vec<f64>>> = family.centers.par_iter().map(|c| per_center(c)).collect();
    let mut best = f64::NEG_INFINITY;
    let mut arg = None;
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row?.into_iter().enumerate() {
            let v = if v.is_nan() { f64::INFINITY } else { v };
            if v > best {
                best = v;
                arg = Some((i, j));
            }
        }
    }
    Ok((best, arg))
}

fn estimate_levels<F>(family: &BallFamily, refine: &Refinement, radius_of: impl Fn(usize) -> f64, f: F) -> Result<Estimate>
where
    F: Fn(&[f64], usize) -> Result<Vec<f64>> + Sync,
{
    family.validate()?;
    let mut levels = Vec::new();
    let mut argmax = None;
    for res in refine.resolutions() {
        let (v, arg) = scan_centers(family, |c| f(c, res))?;
        levels.push(sanitize(v, refine.overflow_guard));
        argmax = arg.map(|(i, j)| Ball { center: family.centers[i].clone(), radius: radius_of(j) });
    }
    Ok(Estimate {
        value: *levels.last().unwrap(),
        diverged: refine.diverged(&levels),
        levels,
        argmax,
    })
}

/// `(int_Q w)(int_Q sigma)^{p-1} / |Q|^p` for one ball.
pub fn ap_ratio(w: &Weight, sigma: &Weight, p: f64, center: &[f64], radius: f64, res: usize) -> Result<f64> {
    let wq = weight_integral(w, center, radius, res)?;
    let sq = weight_integral(sigma, center, radius, res)?;
    let q = ball_measure(center, radius, res)?;
    Ok(wq * sq.powf(p - 1.0) / q.powf(p))
}

/// A_p constant of `w`: maximum of [`ap_ratio`] over the family.
pub fn ap_constant(w: &Weight, p: f64, family: &BallFamily, refine: &Refinement) -> Result<Estimate> {
    if !(p > 1.0) {
        return Err(Error::Parameter(format!("A_p needs p > 1, got {p}")));
    }
    w.check(family.dim())?;
    let sigma = w.sigma(p);
    estimate_levels(family, refine, |j| family.radii[j], |c, res| {
        family.radii.iter().map(|&r| ap_ratio(w, &sigma, p, c, r, res)).collect()
    })
}

/// A_1 constant: `sup (int_Q w / |Q|) / inf_Q w`, the infimum taken over
/// quadrature cell values. `None` when `w` vanishes on some scanned ball.
pub fn a1_constant(w: &Weight, family: &BallFamily, refine: &Refinement) -> Result<Option<Estimate>> {
    w.check(family.dim())?;
    let est = estimate_levels(family, refine, |j| family.radii[j], |c, res| {
        family
            .radii
            .iter()
            .map(|&r| {
                let inf = ball_infimum(w, c, r, res);
                let avg = weight_integral(w, c, r, res)? / ball_measure(c, r, res)?;
                Ok(if inf > 0.0 { avg / inf } else { f64::INFINITY })
            })
            .collect()
    })?;
    Ok(if est.value.is_finite() { Some(est) } else { None })
}

/// Doubling constant `sup w(2Q) / w(Q)`.
pub fn doubling_constant(w: &Weight, family: &BallFamily, refine: &Refinement) -> Result<Estimate> {
    w.check(family.dim())?;
    estimate_levels(family, refine, |j| family.radii[j], |c, res| {
        family
            .radii
            .iter()
            .map(|&r| Ok(weight_integral(w, c, 2.0 * r, res)? / weight_integral(w, c, r, res)?))
            .collect()
    })
}

/// Exponents of the two-weight balance expression.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceExponents {
    /// Exponent of the radius: `1 - (m(n+p)/p)(1/p - 1/q)`.
    pub radius: f64,
    /// Exponent of `v`: `1/q`.
    pub v: f64,
    /// Exponent of `omega`: `1/p - (m/p)(1/p - 1/q)`.
    pub omega: f64,
}

impl BalanceExponents {
    pub fn new(p: f64, q: f64, n: usize, m: usize) -> Self {
        let (n, m) = (n as f64, m as f64);
        let gap = 1.0 / p - 1.0 / q;
        BalanceExponents {
            radius: 1.0 - (m * (n + p) / p) * gap,
            v: 1.0 / q,
            omega: 1.0 / p - (m / p) * gap,
        }
    }

    /// Checks `p <= q` and a nonnegative omega exponent.
    pub fn checked(p: f64, q: f64, n: usize, m: usize) -> Result<Self> {
        if !(p <= q) {
            return Err(Error::Parameter(format!("balance condition requires p <= q (p = {p}, q = {q})")));
        }
        let e = Self::new(p, q, n, m);
        if e.omega < 0.0 {
            return Err(Error::Parameter(format!(
                "balance condition requires 1/p - (m/p)(1/p - 1/q) >= 0, got {}",
                e.omega
            )));
        }
        Ok(e)
    }

    /// `R^{radius} v^{1/q} / omega^{omega}`; the shared closed form of the
    /// embedding constant and the compactness bound.
    pub fn combine(&self, radius: f64, v_mass: f64, omega_mass: f64) -> f64 {
        radius.powf(self.radius) * v_mass.powf(self.v) / omega_mass.powf(self.omega)
    }
}

/// Two-weight balance constant: maximum over centers and ladder pairs
/// `r < R` of `(r/R)^a (v(Q_r)/v(Q_R))^{1/q} / (w(Q_r)/w(Q_R))^b`.
#[allow(clippy::too_many_arguments)]
pub fn balance_constant(
    v: &Weight,
    omega: &Weight,
    p: f64,
    q: f64,
    n: usize,
    m: usize,
    family: &BallFamily,
    refine: &Refinement,
) -> Result<Estimate> {
    let e = BalanceExponents::checked(p, q, n, m)?;
    v.check(family.dim())?;
    omega.check(family.dim())?;
    let k = family.radii.len();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    if pairs.is_empty() {
        return Err(Error::Parameter("balance constant needs at least two radii".into()));
    }
    let pairs_ref = &pairs;
    estimate_levels(family, refine, |j| family.radii[pairs[j].0], |c, res| {
        let vm: Vec<f64> = family.radii.iter().map(|&r| weight_integral(v, c, r, res)).collect::<Result<_>>()?;
        let wm: Vec<f64> = family.radii.iter().map(|&r| weight_integral(omega, c, r, res)).collect::<Result<_>>()?;
        Ok(pairs_ref
            .iter()
            .map(|&(i, j)| {
                let rr = family.radii[i] / family.radii[j];
                rr.powf(e.radius) * (vm[i] / vm[j]).powf(e.v) / (wm[i] / wm[j]).powf(e.omega)
            })
            .collect())
    })
}

/// Tabulated `r -> max_x r^a v(Q_r)^{1/q} / w(Q_r)^b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompactnessProfile {
    /// `(radius, bound)` sorted by decreasing radius.
    pub entries: Vec<(f64, f64)>,
    pub fraction: f64,
    /// Bound at the smallest radius is below `fraction` times the bound at
    /// the largest.
    pub vanishes: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn compactness_profile(
    v: &Weight,
    omega: &Weight,
    p: f64,
    q: f64,
    n: usize,
    m: usize,
    family: &BallFamily,
    resolution: usize,
    fraction: f64,
) -> Result<CompactnessProfile> {
    let e = BalanceExponents::checked(p, q, n, m)?;
    family.validate()?;
    v.check(family.dim())?;
    omega.check(family.dim())?;
    let rows: Vec<Result<Vec<f64>>> = family
        .centers
        .par_iter()
        .map(|c| {
            family
                .radii
                .iter()
                .map(|&r| Ok(e.combine(r, weight_integral(v, c, r, resolution)?, weight_integral(omega, c, r, resolution)?)))
                .collect()
        })
        .collect();
    let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
    let mut entries: Vec<(f64, f64)> = family
        .radii
        .iter()
        .enumerate()
        .map(|(j, &r)| (r, crate::sum::max_of(rows.iter().map(|row| row[j]))))
        .collect();
    entries.reverse();
    let first = entries.first().unwrap().1;
    let last = entries.last().unwrap().1;
    Ok(CompactnessProfile {
        vanishes: last.is_finite() && first.is_finite() && last < fraction * first,
        entries,
        fraction,
    })
}

/// Probe subsets used by the A_infinity fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AinfProbes {
    /// Upper bound on sub-box positions per axis and scale.
    pub count: usize,
    /// Number of dyadic sub-box scales (side `2r / 2^s`, `s = 1..=scales`).
    pub scales: usize,
}

impl Default for AinfProbes {
    fn default() -> Self {
        AinfProbes { count: 8, scales: 5 }
    }
}

/// Fitted A_infinity pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AinfFit {
    pub c: f64,
    pub delta: f64,
    /// Largest exponent compatible with `C = 1` on the probes.
    pub delta_probe: f64,
    pub probes: usize,
}

/// Inflation of the exponent deficit `1 - delta_probe` applied before
/// reporting, so the pair survives denser probe sets.
pub const AINF_DEFICIT_INFLATION: f64 = 1.5;
const AINF_DELTA_FLOOR: f64 = 0.01;

/// `(v(E)/v(Q), |E|/|Q|)` for every probe `E` of every family ball.
pub fn ainf_samples(v: &Weight, family: &BallFamily, probes: &AinfProbes, resolution: usize) -> Result<Vec<(f64, f64)>> {
    if probes.count < 8 {
        return Err(Error::Parameter(format!("A_inf fit needs at least 8 probes, got {}", probes.count)));
    }
    family.validate()?;
    v.check(family.dim())?;
    let n = family.dim();
    let res = resolution.max(1 << (probes.scales + 1));
    let balls: Vec<(&Vec<f64>, f64)> = family
        .centers
        .iter()
        .flat_map(|c| family.radii.iter().map(move |&r| (c, r)))
        .collect();
    let rows: Vec<Result<Vec<(f64, f64)>>> = balls
        .par_iter()
        .map(|&(c, r)| {
            let mass = ball_masses(v, c, r, res)?;
            let vq = pairwise_sum(&mass);
            let mut vgrid = vec![0.0; res.pow(n as u32)];
            let mut cgrid = vec![0.0; res.pow(n as u32)];
            let mut k = 0;
            for_ball_cells(c, r, res, |_, idx| {
                let flat = idx.iter().fold(0, |f, i| f * res + i);
                vgrid[flat] = mass[k];
                cgrid[flat] = 1.0;
                k += 1;
            });
            let vsat = SummedArea::new(n, res, &vgrid);
            let csat = SummedArea::new(n, res, &cgrid);
            let total = mass.len() as f64;
            let mut out = vec![(1.0, 1.0)];
            let mut probe = |lo: &[usize], hi: &[usize]| {
                let cnt = csat.sum(lo, hi).round();
                if cnt > 0.0 && cnt < total {
                    out.push((vsat.sum(lo, hi) / vq, cnt / total));
                }
            };
            for s in 1..=probes.scales {
                let cells_per_side = res >> s;
                let slots = res - cells_per_side;
                let positions = probes.count.min(slots + 1);
                let offsets: Vec<usize> = (0..positions)
                    .map(|k| if positions == 1 { 0 } else { k * slots / (positions - 1) })
                    .collect();
                let mut idx = vec![0usize; n];
                for _ in 0..positions.pow(n as u32) {
                    let lo: Vec<usize> = idx.iter().map(|&i| offsets[i]).collect();
                    let hi: Vec<usize> = lo.iter().map(|l| l + cells_per_side).collect();
                    probe(&lo, &hi);
                    for a in (0..n).rev() {
                        idx[a] += 1;
                        if idx[a] < positions {
                            break;
                        }
                        idx[a] = 0;
                    }
                }
            }
            for a in 0..n {
                let mut lo = vec![0; n];
                let mut hi = vec![res; n];
                lo[a] = res / 2;
                probe(&lo, &hi);
                lo[a] = 0;
                hi[a] = res / 2;
                probe(&lo, &hi);
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for row in rows {
        all.extend(row?);
    }
    Ok(all)
}

/// Fit `(C, delta)` with `v(E)/v(Q) <= C (|E|/|Q|)^delta` on every probe.
pub fn ainf_params(v: &Weight, family: &BallFamily, probes: &AinfProbes, resolution: usize) -> Result<AinfFit> {
    let samples = ainf_samples(v, family, probes, resolution)?;
    Ok(fit_ainf(&samples))
}

/// Fit from precomputed `(mass ratio, measure ratio)` samples.
pub fn fit_ainf(samples: &[(f64, f64)]) -> AinfFit {
    let mut delta_probe: f64 = 1.0;
    for &(a, b) in samples {
        if b < 1.0 && a > 0.0 {
            let d = if a >= 1.0 { 0.0 } else { a.ln() / b.ln() };
            delta_probe = delta_probe.min(d);
        }
    }
    let delta = if delta_probe >= 1.0 - 1e-9 {
        1.0
    } else {
        (1.0 - (1.0 - delta_probe) * AINF_DEFICIT_INFLATION).max(AINF_DELTA_FLOOR)
    };
    let c = samples.iter().map(|&(a, b)| a / b.powf(delta)).fold(1.0, f64::max);
    AinfFit { c, delta, delta_probe, probes: samples.len() }
}

/// Does `(C, delta)` hold on every sample (with relative slack)?
pub fn ainf_holds(fit: &AinfFit, samples: &[(f64, f64)], slack: f64) -> bool {
    samples.iter().all(|&(a, b)| a <= fit.c * b.powf(fit.delta) * (1.0 + slack))
}

/// Divergence flags per estimate.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diverged {
    pub ap: bool,
    pub a1: bool,
    pub doubling: bool,
    pub balance: bool,
}

/// All weight constants for one `(omega, v)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightReport {
    pub ap_constant: f64,
    pub a1_constant: Option<f64>,
    pub ainf_c: f64,
    pub ainf_delta: f64,
    pub doubling_constant: f64,
    pub balance_constant: f64,
    /// Balance constant recomputed on the refined ladder.
    pub balance_refined: f64,
    pub compactness_profile: Vec<(f64, f64)>,
    pub compactness_vanishes: bool,
    pub diverged: Diverged,
}

impl WeightReport {
    /// Finite A_p and balance constants, stable balance under ladder
    /// refinement (relative change below `stability`), vanishing profile.
    pub fn passes(&self, stability: f64) -> bool {
        !self.diverged.ap
            && !self.diverged.balance
            && self.ap_constant.is_finite()
            && self.balance_constant.is_finite()
            && relative_change(self.balance_constant, self.balance_refined) < stability
            && self.compactness_vanishes
    }
}

pub fn relative_change(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Inputs of [`weight_report`].
#[derive(Clone, Debug)]
pub struct WeightSetup<'a> {
    pub omega: &'a Weight,
    pub v: &'a Weight,
    pub p: f64,
    pub q: f64,
    pub n: usize,
    pub m: usize,
    pub family: &'a BallFamily,
    /// Family used for the compactness profile (usually a longer ladder).
    pub profile_family: &'a BallFamily,
    pub refine: Refinement,
    pub probes: AinfProbes,
    pub profile_fraction: f64,
}

pub fn weight_report(s: &WeightSetup) -> Result<WeightReport> {
    let ap = ap_constant(s.omega, s.p, s.family, &s.refine)?;
    let a1 = a1_constant(s.omega, s.family, &s.refine)?;
    let ainf = ainf_params(s.v, s.family, &s.probes, s.refine.resolution)?;
    let dbl = doubling_constant(s.omega, s.family, &s.refine)?;
    let bal = balance_constant(s.v, s.omega, s.p, s.q, s.n, s.m, s.family, &s.refine)?;
    let bal_ref = balance_constant(s.v, s.omega, s.p, s.q, s.n, s.m, &s.family.refined_ladder(), &s.refine)?;
    let prof = compactness_profile(
        s.v,
        s.omega,
        s.p,
        s.q,
        s.n,
        s.m,
        s.profile_family,
        s.refine.resolution << (s.refine.levels.max(1) - 1),
        s.profile_fraction,
    )?;
    Ok(WeightReport {
        ap_constant: ap.value,
        a1_constant: a1.as_ref().map(|e| e.value),
        ainf_c: ainf.c,
        ainf_delta: ainf.delta,
        doubling_constant: dbl.value,
        balance_constant: bal.value,
        balance_refined: bal_ref.value,
        compactness_profile: prof.entries,
        compactness_vanishes: prof.vanishes,
        diverged: Diverged {
            ap: ap.diverged,
            a1: a1.map_or(true, |e| e.diverged),
            doubling: dbl.diverged,
            balance: bal.diverged || bal_ref.diverged,
        },
    })
}

/// One checked condition of [`validate_exponents`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub holds: bool,
    pub detail: String,
}

/// Outcome of [`validate_exponents`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentVerdict {
    pub valid: bool,
    pub conditions: Vec<Condition>,
    /// The relaxed gamma range was used; `v^{-gamma/(q-gamma)}` must be
    /// locally integrable.
    pub gamma_caveat: bool,
}

impl ExponentVerdict {
    pub fn violated(&self) -> Vec<&Condition> {
        self.conditions.iter().filter(|c| !c.holds).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

/// Slack used for the open-interval tests on floating-point inputs.
pub const OPEN_INTERVAL_SLACK: f64 = 1e-12;

fn open(lo: f64, x: f64, hi: f64) -> bool {
    let eps = |v: f64| OPEN_INTERVAL_SLACK * v.abs().max(1.0);
    x > lo + eps(lo) && x < hi - eps(hi)
}

/// Open interval of admissible `q` for `v = a*omega`, if the case is covered.
pub fn proportional_q_range(p: f64, n: usize, m: usize) -> Option<(f64, f64, &'static str)> {
    let (nf, mf) = (n as f64, m as f64);
    if (mf - p).abs() <= OPEN_INTERVAL_SLACK * p.max(1.0) {
        Some((p, p * (nf + p) / nf, "m = p"))
    } else if mf > p {
        Some((p, p * mf * (nf + p) / (mf * (nf + p) - p * p), "m > p"))
    } else if m == 1 {
        let k = p * p - p + 1.0;
        Some((p, (p * nf * k + p * p) / (nf * k + p - p * p), "m = 1"))
    } else {
        None
    }
}

/// Check the exponent ranges required for the two-solution result.
#[allow(clippy::too_many_arguments)]
pub fn validate_exponents(p: f64, q: f64, gamma: f64, mu: f64, n: usize, m: usize, proportional: bool) -> ExponentVerdict {
    let big_n = (n + m) as f64;
    let mut conditions = Vec::new();
    let mut push = |name: &str, holds: bool, detail: String| {
        conditions.push(Condition { name: name.into(), holds, detail })
    };
    push("dimensions", n >= 1 && m >= 1, format!("n = {n}, m = {m} (both >= 1)"));
    let p_ok = open(1.0, p, big_n);
    push("p_range", p_ok, format!("p = {p} in (1, {big_n})"));
    let q_hi = if big_n > p { p * big_n / (big_n - p) } else { f64::INFINITY };
    let q_ok = open(p, q, q_hi);
    push("q_range", q_ok, format!("q = {q} in ({p}, {q_hi})"));
    let mut prop_ok = true;
    if proportional {
        match proportional_q_range(p, n, m) {
            Some((lo, hi, case)) => {
                prop_ok = open(lo, q, hi);
                push("q_range_proportional", prop_ok, format!("v = a*omega, {case}: q = {q} in ({lo}, {hi})"));
            }
            None => {
                prop_ok = false;
                push("q_range_proportional", false, format!("v = a*omega: case m = {m}, p = {p} not covered"));
            }
        }
    }
    let g_hi = big_n / (big_n - 1.0);
    let g_strict = open(1.0, gamma, g_hi);
    push("gamma_strict", g_strict, format!("gamma = {gamma} in (1, {g_hi})"));
    let g_relaxed = open(1.0, gamma, p);
    push(
        "gamma_relaxed",
        g_relaxed,
        format!("gamma = {gamma} in (1, {p}); needs v^(-gamma/(q-gamma)) locally integrable"),
    );
    let mu_ok = mu > 0.0;
    push("mu_positive", mu_ok, format!("mu = {mu} > 0"));
    let gamma_caveat = !g_strict && g_relaxed;
    ExponentVerdict {
        valid: n >= 1 && m >= 1 && p_ok && q_ok && prop_ok && (g_strict || g_relaxed) && mu_ok,
        conditions,
        gamma_caveat,
    }
}
