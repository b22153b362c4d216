//! The quasi-metric `rho` on R^{n+m} induced by `omega` through
//! `h_x(t) = t (avg_{Q(x,t)} sigma)^{1/p'}`, and the quasi-triangle constant.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weights::{ball_measure, conjugate, weight_integral, Weight};

/// Number of log-spaced knots in every cached `h_x` table.
pub const TABLE_KNOTS: usize = 256;
/// Enlargement factor `5 K0^2` of the covering balls in the homogeneous-space
/// machinery; recorded for reference, not used by any computation here.
pub const BALL_ENLARGEMENT: f64 = 5.0;

struct HTable {
    t: Vec<f64>,
    h: Vec<f64>,
}

pub struct QuasiMetricSpace {
    pub omega: Weight,
    sigma: Weight,
    pub p: f64,
    pub n: usize,
    pub m: usize,
    /// Relative tolerance of the inversion.
    pub tolerance: f64,
    /// `h_x^{-1}` searches `t` up to this value.
    pub cap: f64,
    /// Quadrature resolution for `n >= 2` or non-separable weights.
    pub resolution: usize,
    cache: RwLock<HashMap<Vec<u64>, Arc<HTable>>>,
}

impl std::fmt::Debug for QuasiMetricSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QuasiMetricSpace")
            .field("omega", &self.omega)
            .field("p", &self.p)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("tolerance", &self.tolerance)
            .field("cap", &self.cap)
            .finish()
    }
}

impl QuasiMetricSpace {
    /// `domain_diameter` sets the bracketing cap `1e6 * diameter`.
    pub fn new(omega: Weight, p: f64, n: usize, m: usize, domain_diameter: f64) -> Result<Self> {
        if !(p > 1.0) {
            return Err(Error::Parameter(format!("quasi-metric needs p > 1, got {p}")));
        }
        if n == 0 || m == 0 {
            return Err(Error::Parameter("quasi-metric needs n, m >= 1".into()));
        }
        if !(domain_diameter > 0.0) {
            return Err(Error::Parameter("domain diameter must be positive".into()));
        }
        omega.check(n)?;
        Ok(QuasiMetricSpace {
            sigma: omega.sigma(p),
            omega,
            p,
            n,
            m,
            tolerance: 1e-13,
            cap: 1e6 * domain_diameter,
            resolution: 64,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = tol;
        self
    }

    pub fn with_resolution(mut self, res: usize) -> Self {
        self.resolution = res;
        self
    }

    /// `h_x(t)`.
    pub fn h(&self, x: &[f64], t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Parameter(format!("h needs t >= 0, got {t}")));
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        let pp = conjugate(self.p);
        if let Weight::Constant { c } = self.sigma {
            return Ok(t * c.powf(1.0 / pp));
        }
        let s = weight_integral(&self.sigma, x, t, self.resolution)?;
        if !s.is_finite() {
            return Err(Error::Divergence(format!("sigma is not integrable on the ball about {x:?} of radius {t}")));
        }
        let avg = s / ball_measure(x, t, self.resolution)?;
        Ok(t * avg.powf(1.0 / pp))
    }

    fn table(&self, x: &[f64]) -> Result<Arc<HTable>> {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if let Some(t) = self.cache.read().unwrap().get(&key) {
            return Ok(t.clone());
        }
        let lo = self.cap * 1e-22;
        let ratio = (self.cap / lo).powf(1.0 / (TABLE_KNOTS - 1) as f64);
        let t: Vec<f64> = (0..TABLE_KNOTS)
            .map(|k| if k + 1 == TABLE_KNOTS { self.cap } else { lo * ratio.powi(k as i32) })
            .collect();
        let h: Vec<f64> = t.iter().map(|&s| self.h(x, s)).collect::<Result<_>>()?;
        assert!(h.windows(2).all(|w| w[1] >= w[0]), "h_x table is not monotone at x = {x:?}");
        let table = Arc::new(HTable { t, h });
        self.cache.write().unwrap().insert(key, table.clone());
        Ok(table)
    }

    pub fn cached_tables(&self) -> usize {
        self.cache.read().unwrap().len()
    }

    /// `h_x^{-1}(w) = inf { t > 0 : h_x(t) >= w }`.
    pub fn h_inv(&self, x: &[f64], w: f64) -> Result<f64> {
        if !(w >= 0.0) {
            return Err(Error::Parameter(format!("h_inv needs w >= 0, got {w}")));
        }
        if w == 0.0 {
            return Ok(0.0);
        }
        if let Weight::Constant { c } = self.sigma {
            let t = w / c.powf(1.0 / conjugate(self.p));
            if t > self.cap {
                return Err(Error::Unreachable { value: w, cap: self.cap });
            }
            return Ok(t);
        }
        let tab = self.table(x)?;
        let last = *tab.h.last().unwrap();
        if w > last {
            return Err(Error::Unreachable { value: w, cap: self.cap });
        }
        let k = tab.h.partition_point(|&v| v < w);
        let (mut a, mut b) = if k == 0 { (0.0, tab.t[0]) } else { (tab.t[k - 1], tab.t[k]) };
        for _ in 0..200 {
            if b - a <= self.tolerance * b {
                break;
            }
            let mid = 0.5 * (a + b);
            if self.h(x, mid)? >= w {
                b = mid;
            } else {
                a = mid;
            }
        }
        Ok(b)
    }

    fn split<'a>(&self, z: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        z.split_at(self.n)
    }

    /// `rho(z1, z2) = max(|x1 - x2|, h_{x1}^{-1}(|y1 - y2|), h_{x2}^{-1}(|y1 - y2|))`.
    pub fn rho(&self, z1: &[f64], z2: &[f64]) -> Result<f64> {
        let d = self.n + self.m;
        if z1.len() != d || z2.len() != d {
            return Err(Error::Parameter(format!("points must have {d} coordinates")));
        }
        let (x1, y1) = self.split(z1);
        let (x2, y2) = self.split(z2);
        let dx = x1.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let dy = y1.iter().zip(y2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        Ok(dx.max(self.h_inv(x1, dy)?).max(self.h_inv(x2, dy)?))
    }

    /// Estimate `K0` from `samples` uniform triples in the box `[lo, hi]`.
    /// Triple `i` is drawn from stream `i` of the seeded generator, so a
    /// longer run extends a shorter one.
    pub fn quasi_triangle_constant(&self, samples: usize, lo: &[f64], hi: &[f64], seed: u64) -> Result<QuasiMetricReport> {
        if samples < 100 {
            return Err(Error::Parameter(format!("need at least 100 samples, got {samples}")));
        }
        let d = self.n + self.m;
        if lo.len() != d || hi.len() != d {
            return Err(Error::Parameter(format!("sampling box must have {d} axes")));
        }
        let rows: Vec<Result<Option<(f64, [Vec<f64>; 3])>>> = (0..samples)
            .into_par_iter()
            .map(|i| {
                let z = triple(seed, i as u64, lo, hi);
                let r12 = self.rho(&z[0], &z[1])?;
                let den = self.rho(&z[0], &z[2])? + self.rho(&z[1], &z[2])?;
                if den == 0.0 {
                    if r12 == 0.0 {
                        return Ok(None);
                    }
                    return Err(Error::MetricViolation { numerator: r12 });
                }
                // z3 = z1 realizes ratio 1 whenever z1 != z2
                let ratio = if r12 > 0.0 { (r12 / den).max(1.0) } else { r12 / den };
                Ok(Some((ratio, z)))
            })
            .collect();
        let mut best: Option<(f64, [Vec<f64>; 3])> = None;
        let mut used = 0;
        for r in rows {
            if let Some((ratio, z)) = r? {
                used += 1;
                if best.as_ref().map_or(true, |b| ratio > b.0) {
                    best = Some((ratio, z));
                }
            }
        }
        let (k0, triple) = best.ok_or(Error::EmptySample)?;
        Ok(QuasiMetricReport { k0_estimate: k0, samples: used, max_triple: triple.to_vec() })
    }
}

fn triple(seed: u64, stream: u64, lo: &[f64], hi: &[f64]) -> [Vec<f64>; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut point = || lo.iter().zip(hi).map(|(a, b)| rng.gen_range(*a..*b)).collect::<Vec<f64>>();
    [point(), point(), point()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasiMetricReport {
    pub k0_estimate: f64,
    /// Nondegenerate triples used.
    pub samples: usize,
    /// Triple attaining the maximum.
    pub max_triple: Vec<Vec<f64>>,
}
