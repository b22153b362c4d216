//! Sign structure of `t -> I(t u)` along a positive direction.

use wplap::functional::{geometry_constants, geometry_inputs, Params, Problem};
use wplap::grid::Grid;
use wplap::solver::seed_bump;
use wplap::verify::{fibering_direction, fibering_scan, log_grid};
use wplap::weights::Weight;

fn main() -> wplap::Result<()> {
    let one = Weight::constant(1.0);
    let params = Params { p: 2.0, q: 4.0, gamma: 1.3, mu: 0.01, n: 2, m: 1 };
    let pr = Problem::new(Grid::cube(2, 1, 0.0, 1.0, 17)?, one.clone(), one, params)?;
    let geom = geometry_constants(&geometry_inputs(&pr, 1.0, pr.grid.circumradius(), &pr.grid.x_center(), 64)?)?;

    let u = fibering_direction(&pr, &seed_bump(&pr, geom.mp_radius))?;
    let prof = fibering_scan(&pr, &u, &log_grid(1e-3, 1e3, 200), geom.mp_radius)?;
    for b in &prof.bands {
        println!("{} on [{:.3e}, {:.3e}]", if b.positive { "I > 0" } else { "I < 0" }, b.t_start, b.t_end);
    }
    println!("sphere |t u|_E = rho at t = {:.4}, inside a positive band: {}", prof.sphere_t, prof.sphere_in_positive_band);
    println!("max gap to the t-polynomial: {:.1e}", prof.identity_error);
    for s in prof.points.iter().step_by(25) {
        println!("  t = {:>10.4e}  I = {:>12.5e}", s.t, s.energy);
    }
    Ok(())
}
