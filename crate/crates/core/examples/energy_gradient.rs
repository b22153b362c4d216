//! The discrete energy, its exact gradient and a finite-difference check.

use wplap::functional::{Params, Problem};
use wplap::grid::{negative_part, positive_part, Grid};
use wplap::solver::seed_bump;
use wplap::verify::gradient_check;
use wplap::weights::Weight;

fn main() -> wplap::Result<()> {
    let grid = Grid::cube(1, 1, 0.0, 1.0, 17)?;
    let params = Params { p: 1.5, q: 3.0, gamma: 1.3, mu: 0.05, n: 1, m: 1 };
    let pr = Problem::new(grid, Weight::constant(1.0), Weight::constant(1.0), params)?;

    let u = seed_bump(&pr, 1.0);
    let e = pr.energy(&u);
    println!("bump with |u|_E = {:.6}", pr.e_norm(&u));
    println!("  I1 = {:.6}  I2 = {:.6}  I3 = {:.6}  I = {:.6}", e.i1, e.i2, e.i3, e.i);

    let g = pr.residual(&u)?;
    let phi = u.scale(-1.0).axpy(1.0, &pr.grid.field_from(|z| z[0] * (1.0 - z[0]) * z[1]));
    for h in [1e-2, 1e-3, 1e-4] {
        let fd = (pr.energy(&u.axpy(h, &phi)).i - pr.energy(&u.axpy(-h, &phi)).i) / (2.0 * h);
        println!("  h = {h:.0e}: central difference {fd:.12}  <I'(u), phi> {:.12}", g.dot(&phi));
    }

    let w = u.axpy(-0.5, &pr.grid.field_from(|z| z[0]));
    let (pos, neg) = (positive_part(&w), negative_part(&w));
    let back = pos.sub(&neg);
    println!("u = u+ - u-: max error {:.1e}", back.sub(&w).sup_norm());

    let check = gradient_check(&pr, 20, &[1e-2, 1e-3, 1e-4], 0)?;
    println!("20 random pairs: observed order {:.3}, relative error at 1e-4 {:.2e}", check.aggregate_slope, check.max_relative_error);
    Ok(())
}
