//! Two positive solutions: a local minimizer with negative energy inside
//! the small ball and a mountain-pass point above the sphere bound.

use std::time::Instant;

use wplap::functional::{geometry_constants, geometry_inputs, Params, Problem};
use wplap::grid::Grid;
use wplap::solver::{solve, Contracts, SolverConfig};
use wplap::weights::Weight;

fn main() -> wplap::Result<()> {
    let grid = Grid::cube(1, 1, -1.0, 1.0, 17)?;
    let params = Params { p: 1.5, q: 3.0, gamma: 1.3, mu: 0.01, n: 1, m: 1 };
    let pr = Problem::new(grid, Weight::power(0.3), Weight::power(0.2), params)?;

    let inputs = geometry_inputs(&pr, 1.0, pr.grid.circumradius(), &pr.grid.x_center(), 64)?;
    let geom = geometry_constants(&inputs)?;
    println!("A = {:.5}  rho = {:.5}  Lambda = {:.5}  sphere bound = {:.5}", geom.embedding_a, geom.mp_radius, geom.lambda, geom.sphere_bound);

    let clock = Instant::now();
    let res = solve(&pr, &geom, &SolverConfig::default())?;
    println!("solved in {:.1?}", clock.elapsed());

    if let Some(u1) = &res.u1 {
        println!("u1: I = {:.3e}, |u1|_E = {:.3e}, {} descent steps", u1.energy.i, u1.norm, u1.log.len());
    }
    if let Some(u0) = &res.u0 {
        println!(
            "u0: I = {:.5}, |u0|_E = {:.5}, {} path iterations, {} restarts",
            u0.energy.i,
            u0.norm,
            u0.path_log.len(),
            u0.restarts
        );
    }
    println!("residuals {:?} {:?}", res.residual_u1, res.residual_u0);
    println!("|u0 - u1|_E = {:?}", res.distinctness);

    let report = res.contracts(&Contracts { residual: 1e-5, ..Contracts::default() });
    println!("contracts: {}", if report.all() { "all hold".to_string() } else { report.failures().join(", ") });
    Ok(())
}
