//! Empirical constant of the weighted Sobolev-Poincare inequality, the
//! closed-form radius identities and the lower bound on the sphere.

use wplap::cli::geometry_identities;
use wplap::functional::{geometry_inputs, GeometryInputs, Params, Problem};
use wplap::grid::Grid;
use wplap::verify::{poincare_check, sphere_bound_check, PoincareSetup};
use wplap::weights::Weight;

fn main() -> wplap::Result<()> {
    let one = Weight::constant(1.0);
    let params = Params { p: 1.5, q: 3.0, gamma: 1.3, mu: 0.05, n: 1, m: 1 };

    let setup = PoincareSetup::new(&one, &one, params, vec![0.0, 0.0], vec![1.0, 1.0]);
    let report = poincare_check(&setup)?;
    for t in &report.trend {
        println!("{:>3} nodes per axis: max ratio {:.5}", t.resolution, t.max_ratio);
    }
    println!("empirical C0 = {:.5}, stable under doubling: {:?}", report.max_ratio, report.stable);

    let pr = Problem::new(Grid::cube(1, 1, 0.0, 1.0, 17)?, one.clone(), one, params)?;
    let inputs = geometry_inputs(&pr, 1.0, pr.grid.circumradius(), &pr.grid.x_center(), 64)?;
    let ids = geometry_identities(&inputs)?;
    println!("radius balance error {:.1e}, sphere bound error {:.1e}", ids.radius_balance_error, ids.sphere_bound_error);

    for c0 in [1.0, report.max_ratio] {
        let s = sphere_bound_check(&pr, &GeometryInputs { c0, ..inputs }, 100, 6, 0)?;
        println!(
            "C0 = {c0:.4}: rho = {:.4}, bound = {:.4e}, min I on sphere = {:.4e}, max bound/I = {:.3}",
            s.radius, s.bound, s.min_energy, s.report.max_ratio
        );
    }
    Ok(())
}
