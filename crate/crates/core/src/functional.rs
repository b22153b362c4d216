//! The discrete energy `I = I1 - I2 - I3`, its exact gradient and
//! Hessian, norms, and the scalar geometry constants of the mountain-pass
//! construction.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{cell_omega, corner_differences, Field, Grid};
use crate::linalg::{self, SparseMatrix};
use crate::sum::pairwise_sum;
use crate::weights::{self, conjugate, BalanceExponents, Weight};

/// Cells with `|grad_omega u|^p` below this contribute nothing to the
/// gradient and Hessian.
pub const GRADIENT_FLOOR: f64 = 1e-30;
/// Smallest `p` accepted by the gradient and solver paths.
pub const MIN_SOLVER_P: f64 = 1.2;
const MAX_DIM: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub p: f64,
    pub q: f64,
    pub gamma: f64,
    pub mu: f64,
    pub n: usize,
    pub m: usize,
}

impl Params {
    pub fn big_n(&self) -> usize {
        self.n + self.m
    }

    pub fn validate(&self) -> Result<()> {
        let nn = self.big_n() as f64;
        if self.n == 0 || self.m == 0 {
            return Err(Error::Parameter("n and m must be at least 1".into()));
        }
        if !(self.p > 1.0 && self.p < nn) {
            return Err(Error::Parameter(format!("need 1 < p < N = {nn}, got p = {}", self.p)));
        }
        if !(self.q > self.p) {
            return Err(Error::Parameter(format!("need q > p, got q = {}, p = {}", self.q, self.p)));
        }
        if !(self.gamma > 1.0) {
            return Err(Error::Parameter(format!("need gamma > 1, got {}", self.gamma)));
        }
        if !(self.mu >= 0.0) {
            return Err(Error::Parameter(format!("need mu >= 0, got {}", self.mu)));
        }
        Ok(())
    }
}

/// `I = I1 - I2 - I3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    #[serde(rename = "I1")]
    pub i1: f64,
    #[serde(rename = "I2")]
    pub i2: f64,
    #[serde(rename = "I3")]
    pub i3: f64,
    #[serde(rename = "I")]
    pub i: f64,
}

/// The three integrals that determine `t -> I(t u)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberingIntegrals {
    /// `|u|_E^p`.
    pub e_p: f64,
    /// `int v u_+^q`.
    pub vq: f64,
    /// `int u_+^gamma`.
    pub g: f64,
}

impl FiberingIntegrals {
    /// `(t^p/p)|u|^p - (t^q/q) int v u_+^q - (mu t^gamma/gamma) int u_+^gamma`.
    pub fn energy(&self, params: &Params, t: f64) -> f64 {
        let Params { p, q, gamma, mu, .. } = *params;
        t.powf(p) / p * self.e_p - t.powf(q) / q * self.vq - mu * t.powf(gamma) / gamma * self.g
    }
}

/// A discretized problem: grid, weights and exponents with all the
/// per-cell and per-node weight values precomputed.
#[derive(Clone, Debug)]
pub struct Problem {
    pub grid: Grid,
    pub omega: Weight,
    pub v: Weight,
    pub params: Params,
    pub gradient_floor: f64,
    wfac: Vec<f64>,
    v_node: Vec<f64>,
    vol: f64,
    /// For every interior node, its `2^N` adjacent cells ordered by the
    /// node's corner position in the cell.
    node_cells: Vec<usize>,
    dirichlet: OnceLock<SparseMatrix>,
}

impl Problem {
    pub fn new(grid: Grid, omega: Weight, v: Weight, params: Params) -> Result<Self> {
        params.validate()?;
        if grid.n != params.n || grid.m != params.m {
            return Err(Error::Parameter(format!(
                "grid splits ({}, {}) but parameters say ({}, {})",
                grid.n, grid.m, params.n, params.m
            )));
        }
        if grid.dim() > MAX_DIM {
            return Err(Error::Parameter(format!("dimension {} exceeds {MAX_DIM}", grid.dim())));
        }
        omega.check(grid.n)?;
        v.check(grid.n)?;
        let omega_c = cell_omega(&grid, &omega);
        if let Some(w) = omega_c.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidWeight(format!("omega takes value {w} at a cell center")));
        }
        let wfac = omega_c.iter().map(|w| w.powf(2.0 / params.p)).collect();
        let hx = &grid.h[..grid.n];
        let v_node: Vec<f64> = (0..grid.num_interior())
            .map(|i| v.eval_node(&grid.interior_coord(i)[..grid.n], hx))
            .collect();
        if let Some(x) = v_node.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidWeight(format!("v takes value {x} at a grid node")));
        }
        let d = grid.dim();
        let cells_per_axis: Vec<usize> = grid.counts.iter().map(|c| c - 1).collect();
        let mut node_cells = Vec::with_capacity(grid.num_interior() << d);
        for j in 0..grid.num_interior() {
            let node = grid.interior_multi(j);
            for mask in 0..1usize << d {
                let mut c = 0;
                for a in 0..d {
                    let e = (mask >> (d - 1 - a)) & 1;
                    c = c * cells_per_axis[a] + (node[a] - e);
                }
                node_cells.push(c);
            }
        }
        Ok(Problem {
            vol: grid.cell_volume(),
            grid,
            omega,
            v,
            params,
            gradient_floor: GRADIENT_FLOOR,
            wfac,
            v_node,
            node_cells,
            dirichlet: OnceLock::new(),
        })
    }

    pub fn with_gradient_floor(mut self, floor: f64) -> Self {
        self.gradient_floor = floor;
        self
    }

    /// Same grid and weights with different exponents.
    pub fn with_params(&self, params: Params) -> Result<Self> {
        Problem::new(self.grid.clone(), self.omega.clone(), self.v.clone(), params)
            .map(|p| p.with_gradient_floor(self.gradient_floor))
    }

    pub fn num_unknowns(&self) -> usize {
        self.grid.num_interior()
    }

    /// Quadrature weight of a node and of a cell.
    pub fn cell_volume(&self) -> f64 {
        self.vol
    }

    pub fn v_at_nodes(&self) -> &[f64] {
        &self.v_node
    }

    fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// Entries per cell of the corner differences.
    fn stride(&self) -> usize {
        self.dim() << self.dim()
    }

    /// Corner differences of `u` for every cell, `N 2^N` entries per cell.
    fn all_differences(&self, u: &Field) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.num_cells() * self.stride()];
        out.par_chunks_mut(self.stride())
            .enumerate()
            .for_each(|(c, g)| corner_differences(&self.grid, &u.values, c, g));
        out
    }

    /// Mean over the cell corners of `|G_k|_W^p`.
    fn cell_power(&self, c: usize, g: &[f64]) -> f64 {
        let d = self.dim();
        let p = self.params.p;
        let s: Vec<f64> = g.chunks(d).map(|gk| self.modulus2(c, gk).powf(0.5 * p)).collect();
        s.iter().sum::<f64>() / s.len() as f64
    }

    /// `|G|_W^2 = omega^{2/p}|g_x|^2 + |g_y|^2`.
    fn modulus2(&self, c: usize, g: &[f64]) -> f64 {
        let n = self.grid.n;
        let sx: f64 = g[..n].iter().map(|x| x * x).sum();
        let sy: f64 = g[n..].iter().map(|x| x * x).sum();
        self.wfac[c] * sx + sy
    }

    /// Apply the transpose of the corner-difference operator to per-cell
    /// fluxes (`N 2^N` entries per cell).
    fn gather(&self, flux: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let stride = self.stride();
        let inv: Vec<f64> = self.grid.h.iter().map(|h| 1.0 / h).collect();
        let k = 1usize << d;
        (0..self.num_unknowns())
            .into_par_iter()
            .map(|j| {
                let mut s = 0.0;
                for mask in 0..k {
                    let c = self.node_cells[j * k + mask];
                    let f = &flux[c * stride..(c + 1) * stride];
                    for a in 0..d {
                        let bit = 1usize << (d - 1 - a);
                        // The two corners whose axis-a edge contains this node.
                        let both = f[mask * d + a] + f[(mask ^ bit) * d + a];
                        if mask & bit != 0 {
                            s += both * inv[a];
                        } else {
                            s -= both * inv[a];
                        }
                    }
                }
                s
            })
            .collect()
    }

    pub fn energy(&self, u: &Field) -> EnergyBreakdown {
        let Params { q, gamma, mu, .. } = self.params;
        let i1 = self.energy_i1(u);
        let up: Vec<f64> = u.values.iter().map(|x| x.max(0.0)).collect();
        let t2: Vec<f64> = up.iter().zip(&self.v_node).map(|(x, v)| v * x.powf(q)).collect();
        let t3: Vec<f64> = up.iter().map(|x| x.powf(gamma)).collect();
        let i2 = self.vol * pairwise_sum(&t2) / q;
        let i3 = mu * self.vol * pairwise_sum(&t3) / gamma;
        EnergyBreakdown { i1, i2, i3, i: i1 - i2 - i3 }
    }

    /// Exact gradient of [`Problem::energy`] with respect to the interior
    /// values, so that the directional derivative along `phi` is `g . phi`.
    pub fn residual(&self, u: &Field) -> Result<Field> {
        self.check_solver_p()?;
        let Params { p, q, gamma, mu, .. } = self.params;
        let d = self.dim();
        let n = self.grid.n;
        let st = self.stride();
        let wk = self.vol / (1usize << d) as f64;
        let mut flux = self.all_differences(u);
        flux.par_chunks_mut(st).enumerate().for_each(|(c, gc)| {
            for g in gc.chunks_mut(d) {
                let a2 = self.modulus2(c, g);
                let coef = if a2.powf(0.5 * p) < self.gradient_floor { 0.0 } else { wk * a2.powf(0.5 * p - 1.0) };
                for (a, x) in g.iter_mut().enumerate() {
                    *x *= if a < n { coef * self.wfac[c] } else { coef };
                }
            }
        });
        let mut g = self.gather(&flux);
        for (j, gj) in g.iter_mut().enumerate() {
            let x = u.values[j];
            if x > 0.0 {
                *gj -= self.vol * (self.v_node[j] * x.powf(q - 1.0) + mu * x.powf(gamma - 1.0));
            }
        }
        Ok(Field::new(g))
    }

    /// Residual of the `I1` part alone.
    pub fn residual_principal(&self, u: &Field) -> Result<Field> {
        let zero = Params { mu: 0.0, ..self.params };
        let mut pr = self.clone();
        pr.params = zero;
        let g = pr.residual(u)?;
        let mut out = g.values;
        for (j, o) in out.iter_mut().enumerate() {
            let x = u.values[j];
            if x > 0.0 {
                *o += self.vol * self.v_node[j] * x.powf(self.params.q - 1.0);
            }
        }
        Ok(Field::new(out))
    }

    /// Hessian of the discrete energy applied to `phi`.
    pub fn hessian_apply(&self, u: &Field, phi: &Field) -> Result<Field> {
        self.check_solver_p()?;
        let Params { p, q, gamma, mu, .. } = self.params;
        let d = self.dim();
        let n = self.grid.n;
        let st = self.stride();
        let wk = self.vol / (1usize << d) as f64;
        let gu = self.all_differences(u);
        let mut flux = self.all_differences(phi);
        flux.par_chunks_mut(st).enumerate().for_each(|(c, hc)| {
            let w = |a: usize| if a < n { self.wfac[c] } else { 1.0 };
            for (k, h) in hc.chunks_mut(d).enumerate() {
                let g = &gu[c * st + k * d..c * st + (k + 1) * d];
                let a2 = self.modulus2(c, g);
                if a2.powf(0.5 * p) < self.gradient_floor {
                    h.iter_mut().for_each(|x| *x = 0.0);
                    continue;
                }
                let wg_h: f64 = (0..d).map(|a| w(a) * g[a] * h[a]).sum();
                let c1 = a2.powf(0.5 * p - 1.0);
                let c2 = (p - 2.0) * a2.powf(0.5 * p - 2.0) * wg_h;
                for a in 0..d {
                    h[a] = wk * (c1 * w(a) * h[a] + c2 * w(a) * g[a]);
                }
            }
        });
        let mut out = self.gather(&flux);
        for (j, o) in out.iter_mut().enumerate() {
            let x = u.values[j];
            if x > 0.0 {
                let k = (q - 1.0) * self.v_node[j] * x.powf(q - 2.0) + mu * (gamma - 1.0) * x.powf(gamma - 2.0);
                *o -= self.vol * k * phi.values[j];
            }
        }
        Ok(Field::new(out))
    }

    /// The weighted Dirichlet form: Hessian of
    /// `1/2 sum vol (omega^{2/p}|g_x|^2 + |g_y|^2)`.
    pub fn dirichlet_apply(&self, phi: &Field) -> Field {
        let d = self.dim();
        let n = self.grid.n;
        let wk = self.vol / (1usize << d) as f64;
        let mut flux = self.all_differences(phi);
        flux.par_chunks_mut(self.stride()).enumerate().for_each(|(c, h)| {
            for (i, x) in h.iter_mut().enumerate() {
                *x *= if i % d < n { wk * self.wfac[c] } else { wk };
            }
        });
        Field::new(self.gather(&flux))
    }

    /// Solve `K s = g` for the Dirichlet form `K`; the result is the
    /// Sobolev gradient used by the descent methods.
    pub fn dirichlet_solve(&self, g: &Field, tol: f64) -> Field {
        let k = self.dirichlet_matrix();
        linalg::cg(|x| k.mul(x), g, tol, 20 * self.num_unknowns().max(50)).x
    }

    /// The Dirichlet form as an assembled sparse matrix.
    pub fn dirichlet_matrix(&self) -> &SparseMatrix {
        self.dirichlet.get_or_init(|| self.assemble_dirichlet())
    }

    /// Probe the operator with one indicator per residue class of the node
    /// indices mod 3; within a `3^N` neighbourhood every class has at most
    /// one node, so each probe reads off one coupling per row.
    fn assemble_dirichlet(&self) -> SparseMatrix {
        let d = self.dim();
        let color = |node: &[usize]| node.iter().fold(0, |acc, x| 3 * acc + x % 3);
        let nu = self.num_unknowns();
        let probes: Vec<Field> = (0..3usize.pow(d as u32))
            .into_par_iter()
            .map(|col| {
                let ind = (0..nu)
                    .map(|j| if color(&self.grid.interior_multi(j)) == col { 1.0 } else { 0.0 })
                    .collect();
                self.dirichlet_apply(&Field::new(ind))
            })
            .collect();
        let rows = (0..nu)
            .map(|i| {
                let node = self.grid.interior_multi(i);
                let mut row = Vec::new();
                for off in 0..3usize.pow(d as u32) {
                    let mut nb = node.clone();
                    let mut o = off;
                    for a in (0..d).rev() {
                        nb[a] = nb[a] + o % 3 - 1;
                        o /= 3;
                    }
                    if let Some(j) = self.grid.interior_index(&nb) {
                        let v = probes[color(&nb)].values[i];
                        if v != 0.0 {
                            row.push((j, v));
                        }
                    }
                }
                row
            })
            .collect();
        SparseMatrix::from_rows(rows)
    }

    fn check_solver_p(&self) -> Result<()> {
        if self.params.p < MIN_SOLVER_P {
            return Err(Error::Parameter(format!(
                "gradient paths need p >= {MIN_SOLVER_P}, got {}",
                self.params.p
            )));
        }
        Ok(())
    }

    /// `|u|_E = (int |grad_omega u|^p)^{1/p} = (p I1)^{1/p}`.
    pub fn e_norm(&self, u: &Field) -> f64 {
        (self.params.p * self.energy_i1(u)).powf(1.0 / self.params.p)
    }

    fn energy_i1(&self, u: &Field) -> f64 {
        let p = self.params.p;
        let st = self.stride();
        let g = self.all_differences(u);
        let cell: Vec<f64> = (0..self.grid.num_cells())
            .into_par_iter()
            .map(|c| self.cell_power(c, &g[c * st..(c + 1) * st]))
            .collect();
        self.vol * pairwise_sum(&cell) / p
    }

    /// `|e_j|_E` for the coordinate hat of interior node `j`, computed on
    /// its `2^N` adjacent cells only.
    pub fn hat_e_norm(&self, j: usize) -> f64 {
        let d = self.dim();
        let k = 1usize << d;
        let mut g = vec![0.0; self.stride()];
        let mut cells = Vec::with_capacity(k);
        for mask in 0..k {
            let c = self.node_cells[j * k + mask];
            for corner in 0..k {
                for a in 0..d {
                    let bit = 1usize << (d - 1 - a);
                    let hi = (corner | bit == mask) as i32 as f64;
                    let lo = (corner & !bit == mask) as i32 as f64;
                    g[corner * d + a] = (hi - lo) / self.grid.h[a];
                }
            }
            cells.push(self.cell_power(c, &g));
        }
        (self.vol * pairwise_sum(&cells)).powf(1.0 / self.params.p)
    }

    /// `(int v |u|^q)^{1/q}` with nodal quadrature.
    pub fn lqv_norm(&self, u: &Field, q: f64) -> f64 {
        let t: Vec<f64> = u.values.iter().zip(&self.v_node).map(|(x, v)| v * x.abs().powf(q)).collect();
        (self.vol * pairwise_sum(&t)).powf(1.0 / q)
    }

    /// `(int |u|^p)^{1/p}` with nodal quadrature.
    pub fn lp_norm(&self, u: &Field) -> f64 {
        let p = self.params.p;
        let t: Vec<f64> = u.values.iter().map(|x| x.abs().powf(p)).collect();
        (self.vol * pairwise_sum(&t)).powf(1.0 / p)
    }

    /// `|u|_{L^p} + |u|_E`, reported as a diagnostic.
    pub fn full_norm(&self, u: &Field) -> f64 {
        self.lp_norm(u) + self.e_norm(u)
    }

    pub fn fibering_integrals(&self, u: &Field) -> FiberingIntegrals {
        let Params { p, q, gamma, .. } = self.params;
        let e = self.energy_i1(u) * p;
        let up: Vec<f64> = u.values.iter().map(|x| x.max(0.0)).collect();
        let t2: Vec<f64> = up.iter().zip(&self.v_node).map(|(x, v)| v * x.powf(q)).collect();
        let t3: Vec<f64> = up.iter().map(|x| x.powf(gamma)).collect();
        FiberingIntegrals { e_p: e, vq: self.vol * pairwise_sum(&t2), g: self.vol * pairwise_sum(&t3) }
    }

    /// `t* = (int u_+^gamma / (gamma |u|_E^p))^{1/(p - gamma)}`.
    pub fn fibering_threshold(&self, u: &Field) -> Result<f64> {
        let Params { p, gamma, .. } = self.params;
        if gamma >= p {
            return Err(Error::Parameter(format!("fibering threshold needs gamma < p, got gamma = {gamma}, p = {p}")));
        }
        let f = self.fibering_integrals(u);
        if !(f.g > 0.0) {
            return Err(Error::DegenerateSeed("seed has no positive part".into()));
        }
        Ok((f.g / (gamma * f.e_p)).powf(1.0 / (p - gamma)))
    }
}

/// Scalar inputs of the geometry constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryInputs {
    pub p: f64,
    pub q: f64,
    pub gamma: f64,
    pub n: usize,
    pub m: usize,
    pub c0: f64,
    /// Radius `R` of the enclosing ball.
    pub radius: f64,
    /// `v(Q_R)`.
    pub v_mass: f64,
    /// `omega(Q_R)`.
    pub omega_mass: f64,
    /// `|Omega|`.
    pub domain_volume: f64,
    /// `int_Omega (1 + omega^{-p'/p})`.
    pub dual_l1: f64,
}

impl GeometryInputs {
    fn exponents(&self) -> BalanceExponents {
        BalanceExponents::new(self.p, self.q, self.n, self.m)
    }

    /// `(q/4p)^{1/q} / A`, the shared base of the radius, the threshold
    /// and the sphere bound.
    fn base(&self) -> f64 {
        (self.q / (4.0 * self.p)).powf(1.0 / self.q) / embedding_constant(self)
    }

    fn check_gap(&self) -> Result<()> {
        if !(self.q > self.p) {
            return Err(Error::Parameter(format!(
                "q must exceed p for the mountain-pass radius (q = {}, p = {})",
                self.q, self.p
            )));
        }
        Ok(())
    }
}

/// `A = C0 R^{1-(m(n+p)/p)(1/p-1/q)} v(Q_R)^{1/q} / omega(Q_R)^{1/p-(m/p)(1/p-1/q)}`.
pub fn embedding_constant(g: &GeometryInputs) -> f64 {
    g.c0 * g.exponents().combine(g.radius, g.v_mass, g.omega_mass)
}

/// `rho = ((q/4p)^{1/q} / A)^{q/(q-p)}`.
pub fn mp_radius(g: &GeometryInputs) -> Result<f64> {
    g.check_gap()?;
    Ok(g.base().powf(g.q / (g.q - g.p)))
}

/// The threshold for `mu`, evaluated exactly as
/// `base^{q(2-p)/(q-p)} |Omega|^{gamma/N - 1} |1 + omega^{-p'/p}|_{L1}^{-gamma/p'}`.
pub fn lambda_threshold(g: &GeometryInputs) -> Result<f64> {
    g.check_gap()?;
    if !g.dual_l1.is_finite() {
        return Err(Error::Divergence("int (1 + omega^{-p'/p}) is infinite".into()));
    }
    let nn = (g.n + g.m) as f64;
    Ok(g.base().powf(g.q * (2.0 - g.p) / (g.q - g.p))
        * g.domain_volume.powf(g.gamma / nn - 1.0)
        * g.dual_l1.powf(-g.gamma / conjugate(g.p)))
}

/// `(1/2p) base^{pq/(q-p)}`.
pub fn sphere_bound(g: &GeometryInputs) -> Result<f64> {
    g.check_gap()?;
    Ok(g.base().powf(g.p * g.q / (g.q - g.p)) / (2.0 * g.p))
}

/// The lower bound `-(mu R^gamma / gamma) C0 |Omega|^{1-gamma/N} |1+omega^{-p'/p}|^{gamma/p'}`
/// of `I` inside the ball, as a diagnostic.
pub fn lower_bound_diagnostic(g: &GeometryInputs, mu: f64) -> f64 {
    let nn = (g.n + g.m) as f64;
    -(mu * g.radius.powf(g.gamma) / g.gamma)
        * g.c0
        * g.domain_volume.powf(1.0 - g.gamma / nn)
        * g.dual_l1.powf(g.gamma / conjugate(g.p))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryConstants {
    #[serde(rename = "embedding_A")]
    pub embedding_a: f64,
    #[serde(rename = "C0")]
    pub c0: f64,
    pub mp_radius: f64,
    pub lambda: f64,
    pub sphere_bound: f64,
}

pub fn geometry_constants(g: &GeometryInputs) -> Result<GeometryConstants> {
    Ok(GeometryConstants {
        embedding_a: embedding_constant(g),
        c0: g.c0,
        mp_radius: mp_radius(g)?,
        lambda: lambda_threshold(g)?,
        sphere_bound: sphere_bound(g)?,
    })
}

/// Geometry inputs for a problem: the weight masses of the ball of radius
/// `radius` about `x0` in R^n and the dual integral over the grid box.
pub fn geometry_inputs(problem: &Problem, c0: f64, radius: f64, x0: &[f64], resolution: usize) -> Result<GeometryInputs> {
    let grid = &problem.grid;
    let prm = problem.params;
    if x0.len() != grid.n {
        return Err(Error::Parameter(format!("x0 has {} coordinates, expected {}", x0.len(), grid.n)));
    }
    let v_mass = weights::weight_integral(&problem.v, x0, radius, resolution)?;
    let omega_mass = weights::weight_integral(&problem.omega, x0, radius, resolution)?;
    if !v_mass.is_finite() || !omega_mass.is_finite() {
        return Err(Error::Divergence("weight mass of the enclosing ball is infinite".into()));
    }
    let dual = problem.omega.powf(-conjugate(prm.p) / prm.p);
    let ylen: f64 = (grid.n..grid.dim()).map(|a| grid.hi[a] - grid.lo[a]).product();
    let dual_x = weights::box_integral(&dual, &grid.lo[..grid.n], &grid.hi[..grid.n], resolution)?;
    Ok(GeometryInputs {
        p: prm.p,
        q: prm.q,
        gamma: prm.gamma,
        n: prm.n,
        m: prm.m,
        c0,
        radius,
        v_mass,
        omega_mass,
        domain_volume: grid.volume(),
        dual_l1: grid.volume() + dual_x * ylen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(p: f64, mu: f64) -> Params {
        Params { p, q: 3.0, gamma: 1.2, mu, n: 1, m: 1 }
    }

    fn unit_problem(k: usize, p: f64, mu: f64) -> Problem {
        Problem::new(Grid::cube(1, 1, 0.0, 1.0, k).unwrap(), Weight::constant(1.0), Weight::constant(1.0), params(p, mu))
            .unwrap()
    }

    fn random_field(pr: &Problem, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::new((0..pr.num_unknowns()).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Straight-loop re-implementation of the 2D energy on a uniform grid.
    fn loop_energy(u2d: &[Vec<f64>], h: f64, p: f64, q: f64, gamma: f64, mu: f64) -> f64 {
        let k = u2d.len();
        let mut i1 = 0.0;
        for i in 0..k - 1 {
            for j in 0..k - 1 {
                let lo_x = (u2d[i + 1][j] - u2d[i][j]) / h;
                let hi_x = (u2d[i + 1][j + 1] - u2d[i][j + 1]) / h;
                let lo_y = (u2d[i][j + 1] - u2d[i][j]) / h;
                let hi_y = (u2d[i + 1][j + 1] - u2d[i + 1][j]) / h;
                for (gx, gy) in [(lo_x, lo_y), (lo_x, hi_y), (hi_x, lo_y), (hi_x, hi_y)] {
                    i1 += 0.25 * (gx * gx + gy * gy).powf(p / 2.0) * h * h;
                }
            }
        }
        let (mut i2, mut i3) = (0.0, 0.0);
        for row in u2d {
            for &x in row {
                let xp: f64 = x.max(0.0);
                i2 += xp.powf(q) * h * h;
                i3 += xp.powf(gamma) * h * h;
            }
        }
        i1 / p - i2 / q - mu * i3 / gamma
    }

    #[test]
    fn hat_energy_matches_loop_oracle() {
        let pr = Problem::new(
            Grid::cube(1, 1, 0.0, 1.0, 5).unwrap(),
            Weight::constant(1.0),
            Weight::constant(1.0),
            Params { p: 1.5, q: 3.0, gamma: 1.2, mu: 0.1, n: 1, m: 1 },
        )
        .unwrap();
        let hat = |x: f64, y: f64| (1.0 - (2.0 * x - 1.0).abs()).min(1.0 - (2.0 * y - 1.0).abs());
        let u = pr.grid.field_from(|z| hat(z[0], z[1]));
        let u2d: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                (0..5)
                    .map(|j| if i == 0 || j == 0 || i == 4 || j == 4 { 0.0 } else { hat(i as f64 / 4.0, j as f64 / 4.0) })
                    .collect()
            })
            .collect();
        let oracle = loop_energy(&u2d, 0.25, 1.5, 3.0, 1.2, 0.1);
        let e = pr.energy(&u);
        assert!((e.i - oracle).abs() < 1e-12, "{} vs {oracle}", e.i);
        assert_eq!(e.i, e.i1 - e.i2 - e.i3);
    }

    #[test]
    fn assembled_dirichlet_matches_operator() {
        let grid = Grid::new(2, 1, vec![-1.0, 0.0, 0.0], vec![1.0, 1.0, 2.0], vec![6, 5, 7]).unwrap();
        let pr = Problem::new(
            grid,
            Weight::power(0.4),
            Weight::constant(1.0),
            Params { p: 2.5, q: 4.0, gamma: 1.3, mu: 0.1, n: 2, m: 1 },
        )
        .unwrap();
        let u = random_field(&pr, 3);
        let a = pr.dirichlet_matrix().mul(&u);
        let b = pr.dirichlet_apply(&u);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn hat_norm_matches_full_assembly() {
        let pr = Problem::new(
            Grid::new(1, 2, vec![-1.0, 0.0, 0.0], vec![1.0, 1.0, 2.0], vec![5, 6, 5]).unwrap(),
            Weight::power(0.3),
            Weight::constant(1.0),
            Params { p: 1.7, q: 2.5, gamma: 1.3, mu: 0.1, n: 1, m: 2 },
        )
        .unwrap();
        for j in 0..pr.num_unknowns() {
            let mut e = vec![0.0; pr.num_unknowns()];
            e[j] = 1.0;
            let full = pr.e_norm(&Field::new(e));
            assert!((pr.hat_e_norm(j) - full).abs() < 1e-12 * full, "node {j}");
        }
    }

    #[test]
    fn zero_and_nonpositive_fields() {
        let pr = unit_problem(9, 1.5, 0.1);
        let e = pr.energy(&pr.grid.zeros());
        assert_eq!((e.i1, e.i2, e.i3, e.i), (0.0, 0.0, 0.0, 0.0));
        assert!(pr.residual(&pr.grid.zeros()).unwrap().values.iter().all(|x| *x == 0.0));
        let neg = pr.grid.field_from(|z| -z[0] * z[1] - 0.1);
        let e = pr.energy(&neg);
        assert_eq!((e.i2, e.i3), (0.0, 0.0));
        assert!(e.i1 > 0.0 && e.i == e.i1);
    }

    #[test]
    fn directional_derivative_matches_residual() {
        let pr = unit_problem(9, 1.5, 0.1);
        for seed in 0..5 {
            let u = random_field(&pr, seed);
            let phi = random_field(&pr, 100 + seed);
            let g = pr.residual(&u).unwrap().dot(&phi);
            let h = 1e-5;
            let fd = (pr.energy(&u.axpy(h, &phi)).i - pr.energy(&u.axpy(-h, &phi)).i) / (2.0 * h);
            assert!((fd - g).abs() < 1e-7 * g.abs().max(1.0), "{fd} vs {g}");
        }
    }

    #[test]
    fn weighted_directional_derivative_matches_residual() {
        let pr = Problem::new(
            Grid::cube(1, 1, -1.0, 1.0, 9).unwrap(),
            Weight::power(0.3),
            Weight::power(0.2),
            Params { p: 1.5, q: 3.0, gamma: 1.3, mu: 0.01, n: 1, m: 1 },
        )
        .unwrap();
        let u = random_field(&pr, 7);
        let phi = random_field(&pr, 8);
        let g = pr.residual(&u).unwrap().dot(&phi);
        let h = 1e-5;
        let fd = (pr.energy(&u.axpy(h, &phi)).i - pr.energy(&u.axpy(-h, &phi)).i) / (2.0 * h);
        assert!((fd - g).abs() < 1e-7 * g.abs().max(1.0));
    }

    #[test]
    fn hessian_matches_residual_differences() {
        for p in [1.5, 1.9, 2.5] {
            let pr = if p < 2.0 {
                unit_problem(8, p, 0.05)
            } else {
                Problem::new(
                    Grid::cube(2, 1, 0.0, 1.0, 6).unwrap(),
                    Weight::constant(1.0),
                    Weight::constant(1.0),
                    Params { p, q: 3.0, gamma: 1.2, mu: 0.05, n: 2, m: 1 },
                )
                .unwrap()
            };
            let u = random_field(&pr, 11).scale(0.5).axpy(1.0, &pr.grid.field_from(|_| 0.6));
            let phi = random_field(&pr, 12);
            let hv = pr.hessian_apply(&u, &phi).unwrap();
            let h = 1e-6;
            let fd = pr.residual(&u.axpy(h, &phi)).unwrap().sub(&pr.residual(&u.axpy(-h, &phi)).unwrap()).scale(0.5 / h);
            let err = fd.sub(&hv).sup_norm();
            assert!(err < 1e-5 * hv.sup_norm().max(1.0), "p = {p}: {err}");
        }
    }

    #[test]
    fn principal_residual_is_homogeneous() {
        let pr = unit_problem(9, 1.7, 0.1);
        let u = random_field(&pr, 3);
        let t = 2.5;
        let a = pr.residual_principal(&u.scale(t)).unwrap();
        let b = pr.residual_principal(&u).unwrap().scale(t.powf(0.7));
        assert!(a.sub(&b).sup_norm() < 1e-12 * b.sup_norm());
    }

    #[test]
    fn small_p_is_rejected_on_gradient_paths() {
        let pr = unit_problem(5, 1.1, 0.1);
        assert!(matches!(pr.residual(&pr.grid.zeros()), Err(Error::Parameter(_))));
    }

    #[test]
    fn doubling_gradient_floor_is_harmless() {
        let pr = unit_problem(9, 1.5, 0.1);
        let mut u = random_field(&pr, 5);
        u.values[10] = 0.0;
        let a = pr.residual(&u).unwrap();
        let b = pr.clone().with_gradient_floor(2.0 * GRADIENT_FLOOR).residual(&u).unwrap();
        assert!(a.sub(&b).sup_norm() < 1e-12);
    }

    #[test]
    fn norms_are_consistent() {
        let pr = unit_problem(9, 1.5, 0.1);
        let u = random_field(&pr, 9);
        let e = pr.energy(&u);
        assert!((pr.e_norm(&u).powf(1.5) - 1.5 * e.i1).abs() < 1e-12 * e.i1.max(1.0));
        assert!((pr.e_norm(&u.scale(-3.0)) - 3.0 * pr.e_norm(&u)).abs() < 1e-12);
        assert!((pr.lqv_norm(&u.scale(2.0), 3.0) - 2.0 * pr.lqv_norm(&u, 3.0)).abs() < 1e-12);
        assert_eq!(pr.lqv_norm(&pr.grid.zeros(), 3.0), 0.0);
    }

    #[test]
    fn ramp_e_norm_approaches_closed_form() {
        // u = a * x away from the boundary layer: |u|_E -> |a| |Omega|^{1/p}
        let a = 2.0;
        let k = 65;
        let p = 1.5;
        let pr = unit_problem(k, p, 0.0);
        let u = pr.grid.field_from(|z| a * z[0]);
        let st = pr.stride();
        let g = pr.all_differences(&u);
        let cells = k - 1;
        let mut s = 0.0;
        let mut area = 0.0;
        for i in 1..cells - 1 {
            for j in 1..cells - 1 {
                let c = i * cells + j;
                s += pr.cell_power(c, &g[c * st..(c + 1) * st]) * pr.vol;
                area += pr.vol;
            }
        }
        assert!((s.powf(1.0 / p) - a * area.powf(1.0 / p)).abs() < 1e-10);
    }

    #[test]
    fn fibering_identity_holds_exactly() {
        let pr = unit_problem(9, 1.5, 0.1);
        for seed in 0..20 {
            let u = random_field(&pr, 40 + seed);
            let f = pr.fibering_integrals(&u);
            let t = 0.1 + seed as f64 * 0.3;
            let direct = pr.energy(&u.scale(t)).i;
            assert!((direct - f.energy(&pr.params, t)).abs() < 1e-12 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn fibering_threshold_behaviour() {
        // the threshold carries no mu, so the sign check needs p * mu > 2^{gamma - p}
        let pr = unit_problem(9, 1.5, 1.0);
        let u = pr.grid.field_from(|z| (std::f64::consts::PI * z[0]).sin() * (std::f64::consts::PI * z[1]).sin());
        let t = pr.fibering_threshold(&u).unwrap();
        let f = pr.fibering_integrals(&u);
        let (p, g) = (1.5, 1.2);
        let recomputed = (f.g / (g * f.e_p)).powf(1.0 / (p - g));
        assert_eq!(t, recomputed);
        let t2 = pr.fibering_threshold(&u.scale(2.0)).unwrap();
        assert!((t2 - t * 2f64.powf((g - p) / (p - g))).abs() < 1e-12 * t);
        assert!(pr.energy(&u.scale(0.5 * t)).i < 0.0);
        assert!(matches!(pr.fibering_threshold(&u.scale(-1.0)), Err(Error::DegenerateSeed(_))));
        let bad = pr.with_params(Params { gamma: 1.6, q: 3.0, ..pr.params }).unwrap();
        assert!(matches!(bad.fibering_threshold(&u), Err(Error::Parameter(_))));
    }

    fn unit_inputs() -> GeometryInputs {
        GeometryInputs {
            p: 1.5,
            q: 3.0,
            gamma: 1.3,
            n: 1,
            m: 1,
            c0: 1.0,
            radius: 1.0,
            v_mass: 2.0,
            omega_mass: 2.0,
            domain_volume: 1.0,
            dual_l1: 2.0,
        }
    }

    #[test]
    fn embedding_constant_exponent_arithmetic() {
        let g = unit_inputs();
        // 1 - (5/3)(1/3) = 4/9; 1/p - (1/p)(1/3) = 4/9
        let expected = 1f64.powf(4.0 / 9.0) * 2f64.powf(1.0 / 3.0) / 2f64.powf(4.0 / 9.0);
        assert!((embedding_constant(&g) - expected).abs() < 1e-12);
        let a = embedding_constant(&g);
        let dv = embedding_constant(&GeometryInputs { v_mass: 4.0, ..g });
        assert!((dv / a - 2f64.powf(1.0 / 3.0)).abs() < 1e-12);
        let dw = embedding_constant(&GeometryInputs { omega_mass: 4.0, ..g });
        assert!((dw / a - 2f64.powf(-4.0 / 9.0)).abs() < 1e-12);
    }

    #[test]
    fn mp_radius_balances_and_matches_root_finding() {
        let g = unit_inputs();
        let a = embedding_constant(&g);
        let rho = mp_radius(&g).unwrap();
        assert!((a.powf(3.0) * rho.powf(1.5) / 3.0 - 1.0 / 6.0).abs() < 1e-10);
        // bisection on (1/q) A^q r^{q-p} = 1/(4p)
        let f = |r: f64| a.powf(3.0) * r.powf(1.5) / 3.0 - 1.0 / 6.0;
        let (mut lo, mut hi) = (0.0, 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid
            } else {
                lo = mid
            }
        }
        assert!((rho - lo).abs() < 1e-10);
        assert!(mp_radius(&GeometryInputs { v_mass: 3.0, ..g }).unwrap() < rho);
        assert!(mp_radius(&GeometryInputs { q: 1.5, ..g }).is_err());
    }

    #[test]
    fn sphere_bound_and_lambda_closed_forms() {
        let g = unit_inputs();
        let rho = mp_radius(&g).unwrap();
        let sb = sphere_bound(&g).unwrap();
        assert!((sb - rho.powf(1.5) / 3.0).abs() < 1e-10 * sb);
        assert!(sb > 0.0);
        let base = (3.0f64 / 6.0).powf(1.0 / 3.0) / embedding_constant(&g);
        let lam = base.powf(3.0 * 0.5 / 1.5) * 1f64.powf(1.3 / 2.0 - 1.0) * 2f64.powf(-1.3 / 3.0);
        assert!((lambda_threshold(&g).unwrap() - lam).abs() < 1e-12);
        assert_eq!(lambda_threshold(&g).unwrap().to_bits(), lambda_threshold(&g).unwrap().to_bits());
        let inf = GeometryInputs { dual_l1: f64::INFINITY, ..g };
        assert!(matches!(lambda_threshold(&inf), Err(Error::Divergence(_))));
    }

    #[test]
    fn geometry_inputs_for_unit_cube() {
        let pr = Problem::new(
            Grid::cube(2, 1, 0.0, 1.0, 5).unwrap(),
            Weight::constant(1.0),
            Weight::constant(1.0),
            Params { p: 2.0, q: 4.0, gamma: 1.3, mu: 0.01, n: 2, m: 1 },
        )
        .unwrap();
        let r = pr.grid.circumradius();
        let g = geometry_inputs(&pr, 1.0, r, &pr.grid.x_center(), 256).unwrap();
        assert!((g.omega_mass - std::f64::consts::PI * r * r).abs() < 0.01);
        assert_eq!(g.dual_l1, 2.0);
        let c = geometry_constants(&g).unwrap();
        assert!((c.lambda - 2f64.powf(-0.65)).abs() < 1e-12);
    }
}
