//! Tensor-product grids on boxes of R^{n+m}, zero-boundary nodal fields and
//! the averaged cell gradient.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weights::Weight;

/// Box domain with `counts[a]` nodes along axis `a`; the first `n` axes
/// are the degenerate `x` directions, the last `m` the `y` directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: usize,
    pub m: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
    pub h: Vec<f64>,
    /// Cell-index -> interior index of each of the `2^N` corners.
    corners: Vec<Vec<Option<usize>>>,
}

impl Grid {
    pub fn new(n: usize, m: usize, lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        let dim = n + m;
        let cfg = |key: &str, msg: String| Error::Config { key: key.into(), line: 0, msg };
        if n == 0 || m == 0 {
            return Err(cfg("domain", format!("need n >= 1 and m >= 1, got n = {n}, m = {m}")));
        }
        if lo.len() != dim || hi.len() != dim {
            return Err(cfg("bounds", format!("expected {dim} intervals, got {} / {}", lo.len(), hi.len())));
        }
        if counts.len() != dim {
            return Err(cfg("counts", format!("expected {dim} node counts, got {}", counts.len())));
        }
        for a in 0..dim {
            if counts[a] < 3 {
                return Err(cfg("counts", format!("axis {a} has {} nodes, need at least 3", counts[a])));
            }
            if !(hi[a] > lo[a]) || !lo[a].is_finite() || !hi[a].is_finite() {
                return Err(cfg("bounds", format!("axis {a} interval [{}, {}] is degenerate", lo[a], hi[a])));
            }
        }
        let h = (0..dim).map(|a| (hi[a] - lo[a]) / (counts[a] - 1) as f64).collect();
        let mut g = Grid { n, m, lo, hi, counts, h, corners: Vec::new() };
        g.corners = (0..g.num_cells())
            .map(|c| {
                let base = g.cell_multi(c);
                (0..1usize << dim)
                    .map(|mask| {
                        let node: Vec<usize> = (0..dim).map(|a| base[a] + ((mask >> (dim - 1 - a)) & 1)).collect();
                        g.interior_index(&node)
                    })
                    .collect()
            })
            .collect();
        Ok(g)
    }

    /// Uniform grid with `count` nodes per axis on `[lo, hi]^{n+m}`.
    pub fn cube(n: usize, m: usize, lo: f64, hi: f64, count: usize) -> Result<Self> {
        let d = n + m;
        Self::new(n, m, vec![lo; d], vec![hi; d], vec![count; d])
    }

    pub fn dim(&self) -> usize {
        self.n + self.m
    }

    pub fn num_interior(&self) -> usize {
        self.counts.iter().map(|c| c - 2).product()
    }

    pub fn num_cells(&self) -> usize {
        self.counts.iter().map(|c| c - 1).product()
    }

    pub fn num_nodes(&self) -> usize {
        self.counts.iter().product()
    }

    /// Product of spacings.
    pub fn cell_volume(&self) -> f64 {
        self.h.iter().product()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    /// Euclidean circumradius of the box.
    pub fn circumradius(&self) -> f64 {
        0.5 * self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l) * (h - l)).sum::<f64>().sqrt()
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.circumradius()
    }

    /// x-part of the box center.
    pub fn x_center(&self) -> Vec<f64> {
        (0..self.n).map(|a| 0.5 * (self.lo[a] + self.hi[a])).collect()
    }

    /// Interior index of a full node multi-index, `None` on the boundary.
    pub fn interior_index(&self, node: &[usize]) -> Option<usize> {
        let mut idx = 0;
        for a in 0..self.dim() {
            if node[a] == 0 || node[a] + 1 >= self.counts[a] {
                return None;
            }
            idx = idx * (self.counts[a] - 2) + (node[a] - 1);
        }
        Some(idx)
    }

    /// Full node multi-index of an interior index.
    pub fn interior_multi(&self, mut idx: usize) -> Vec<usize> {
        let d = self.dim();
        let mut out = vec![0; d];
        for a in (0..d).rev() {
            let k = self.counts[a] - 2;
            out[a] = idx % k + 1;
            idx /= k;
        }
        out
    }

    fn cell_multi(&self, mut c: usize) -> Vec<usize> {
        let d = self.dim();
        let mut out = vec![0; d];
        for a in (0..d).rev() {
            let k = self.counts[a] - 1;
            out[a] = c % k;
            c /= k;
        }
        out
    }

    pub fn node_coord(&self, node: &[usize]) -> Vec<f64> {
        node.iter().enumerate().map(|(a, &i)| self.lo[a] + i as f64 * self.h[a]).collect()
    }

    pub fn interior_coord(&self, idx: usize) -> Vec<f64> {
        self.node_coord(&self.interior_multi(idx))
    }

    pub fn cell_center(&self, c: usize) -> Vec<f64> {
        self.cell_multi(c)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.lo[a] + (i as f64 + 0.5) * self.h[a])
            .collect()
    }

    /// Interior indices of the `2^N` corners of cell `c`; bit `N-1-a` of the
    /// position selects the upper node along axis `a`.
    pub fn cell_corners(&self, c: usize) -> &[Option<usize>] {
        &self.corners[c]
    }

    /// Field built from a function of the node coordinates.
    pub fn field_from(&self, f: impl Fn(&[f64]) -> f64) -> Field {
        Field::new((0..self.num_interior()).map(|i| f(&self.interior_coord(i))).collect())
    }

    pub fn zeros(&self) -> Field {
        Field::new(vec![0.0; self.num_interior()])
    }
}

/// Nodal values at interior nodes; the boundary trace is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(values: Vec<f64>) -> Self {
        Field { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scale(&self, t: f64) -> Field {
        Field::new(self.values.iter().map(|v| t * v).collect())
    }

    /// `self + t * other`.
    pub fn axpy(&self, t: f64, other: &Field) -> Field {
        Field::new(self.values.iter().zip(&other.values).map(|(a, b)| a + t * b).collect())
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.axpy(-1.0, other)
    }

    pub fn dot(&self, other: &Field) -> f64 {
        crate::sum::pairwise_sum_by(self.len(), &|i| self.values[i] * other.values[i])
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub fn positive_part(u: &Field) -> Field {
    Field::new(u.values.iter().map(|v| v.max(0.0)).collect())
}

pub fn negative_part(u: &Field) -> Field {
    Field::new(u.values.iter().map(|v| (-v).max(0.0)).collect())
}

/// Per-cell gradients at cell centers.
#[derive(Clone, Debug, PartialEq)]
pub struct CellGradient {
    pub n: usize,
    pub m: usize,
    /// `n` entries per cell.
    pub gx: Vec<f64>,
    /// `m` entries per cell.
    pub gy: Vec<f64>,
    /// `omega` at the cell-center x coordinates.
    pub omega: Vec<f64>,
    /// `omega^{2/p}` per cell.
    pub wfac: Vec<f64>,
}

impl CellGradient {
    pub fn num_cells(&self) -> usize {
        self.omega.len()
    }

    /// `(omega^{2/p} |g_x|^2 + |g_y|^2)^{1/2}` in cell `c`.
    pub fn modulus(&self, c: usize) -> f64 {
        let sx: f64 = self.gx[c * self.n..(c + 1) * self.n].iter().map(|g| g * g).sum();
        let sy: f64 = self.gy[c * self.m..(c + 1) * self.m].iter().map(|g| g * g).sum();
        (self.wfac[c] * sx + sy).sqrt()
    }
}

/// Forward differences along axis `a` averaged over the `2^{N-1}` parallel
/// cell edges, for every axis, written into `out` (length `N`).
pub fn cell_differences(grid: &Grid, values: &[f64], c: usize, out: &mut [f64]) {
    let d = grid.dim();
    let corners = grid.cell_corners(c);
    let scale = 1.0 / (1usize << (d - 1)) as f64;
    for (a, o) in out.iter_mut().enumerate().take(d) {
        let bit = 1usize << (d - 1 - a);
        let mut s = 0.0;
        for (mask, corner) in corners.iter().enumerate() {
            if let Some(i) = corner {
                if mask & bit != 0 {
                    s += values[*i];
                } else {
                    s -= values[*i];
                }
            }
        }
        *o = s * scale / grid.h[a];
    }
}

/// One-sided differences at each of the `2^N` cell corners: for corner
/// `k` and axis `a`, the difference along the cell edge through `k`
/// parallel to axis `a`. Written into `out` as `N` entries per corner, so
/// `out.len() == N << N`. Their mean over corners is [`cell_differences`].
pub fn corner_differences(grid: &Grid, values: &[f64], c: usize, out: &mut [f64]) {
    let d = grid.dim();
    let corners = grid.cell_corners(c);
    let val = |k: usize| corners[k].map_or(0.0, |i| values[i]);
    for k in 0..1usize << d {
        for a in 0..d {
            let bit = 1usize << (d - 1 - a);
            out[k * d + a] = (val(k | bit) - val(k & !bit)) / grid.h[a];
        }
    }
}

/// `omega` at every cell center, with the half-cell shift at singular points.
pub fn cell_omega(grid: &Grid, omega: &Weight) -> Vec<f64> {
    let hx = &grid.h[..grid.n];
    (0..grid.num_cells())
        .map(|c| omega.eval_node(&grid.cell_center(c)[..grid.n], hx))
        .collect()
}

pub fn weighted_gradient(grid: &Grid, u: &Field, omega: &Weight, p: f64) -> CellGradient {
    let omega_c = cell_omega(grid, omega);
    let (n, m, d) = (grid.n, grid.m, grid.dim());
    let per_cell: Vec<Vec<f64>> = (0..grid.num_cells())
        .into_par_iter()
        .map(|c| {
            let mut g = vec![0.0; d];
            cell_differences(grid, &u.values, c, &mut g);
            g
        })
        .collect();
    let mut gx = Vec::with_capacity(per_cell.len() * n);
    let mut gy = Vec::with_capacity(per_cell.len() * m);
    for g in &per_cell {
        gx.extend_from_slice(&g[..n]);
        gy.extend_from_slice(&g[n..]);
    }
    CellGradient {
        n,
        m,
        gx,
        gy,
        wfac: omega_c.iter().map(|w| w.powf(2.0 / p)).collect(),
        omega: omega_c,
    }
}

/// One CSV row per grid node (boundary included): coordinates, then value.
pub fn write_field_csv<W: Write>(grid: &Grid, u: &Field, mut w: W) -> Result<()> {
    let d = grid.dim();
    let header: Vec<String> = (0..d).map(|a| format!("z{}", a + 1)).chain(["value".to_string()]).collect();
    writeln!(w, "{}", header.join(","))?;
    let mut node = vec![0usize; d];
    for _ in 0..grid.num_nodes() {
        let z = grid.node_coord(&node);
        let val = grid.interior_index(&node).map_or(0.0, |i| u.values[i]);
        let mut row: Vec<String> = z.iter().map(|v| format!("{v:.16e}")).collect();
        row.push(format!("{val:.16e}"));
        writeln!(w, "{}", row.join(","))?;
        for a in (0..d).rev() {
            node[a] += 1;
            if node[a] < grid.counts[a] {
                break;
            }
            node[a] = 0;
        }
    }
    Ok(())
}

/// Inverse of [`write_field_csv`].
pub fn read_field_csv<R: BufRead>(grid: &Grid, r: R) -> Result<Field> {
    let d = grid.dim();
    let bad = |line: usize, msg: String| Error::Config { key: "field_csv".into(), line, msg };
    let mut values = vec![0.0; grid.num_interior()];
    let mut node = vec![0usize; d];
    let mut rows = 0;
    for (ln, line) in r.lines().enumerate().skip(1) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if rows >= grid.num_nodes() {
            return Err(bad(ln + 1, "more rows than grid nodes".into()));
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != d + 1 {
            return Err(bad(ln + 1, format!("expected {} columns, got {}", d + 1, cols.len())));
        }
        let val: f64 = cols[d].trim().parse().map_err(|e| bad(ln + 1, format!("{e}")))?;
        if let Some(i) = grid.interior_index(&node) {
            values[i] = val;
        }
        rows += 1;
        for a in (0..d).rev() {
            node[a] += 1;
            if node[a] < grid.counts[a] {
                break;
            }
            node[a] = 0;
        }
    }
    if rows != grid.num_nodes() {
        return Err(bad(rows + 1, format!("expected {} rows, got {rows}", grid.num_nodes())));
    }
    Ok(Field::new(values))
}
