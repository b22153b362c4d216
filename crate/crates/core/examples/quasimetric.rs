//! The quasi-metric built from `h(x, t)` and its quasi-triangle constant.

use wplap::quasimetric::QuasiMetricSpace;
use wplap::verify::h_power_at_origin;
use wplap::weights::Weight;

fn main() -> wplap::Result<()> {
    let diameter = 2.0 * 2f64.sqrt();
    let space = QuasiMetricSpace::new(Weight::power(0.5), 2.0, 1, 1, diameter)?;

    println!("h(0, t) for omega = |x|^0.5, p = 2");
    for t in [0.05, 0.2, 0.5, 1.0] {
        let h = space.h(&[0.0], t)?;
        println!("  t = {t:<5} h = {h:.8}  closed form {:.8}", h_power_at_origin(0.5, 2.0, t));
    }

    let mut worst: f64 = 0.0;
    for k in 0..200 {
        let x = -1.0 + 2.0 * k as f64 / 199.0;
        let t = 0.01 + 0.9 * ((k * 37) % 200) as f64 / 200.0;
        let w = space.h(&[x], t)?;
        worst = worst.max((space.h_inv(&[x], w)? - t).abs() / t);
    }
    println!("max relative h_inv(h(t)) error over 200 points: {worst:.2e}");

    let a = [0.1, 0.2];
    let b = [0.6, -0.3];
    println!("rho({a:?}, {b:?}) = {:.6}", space.rho(&a, &b)?);

    let lo = [-1.0, -1.0];
    let hi = [1.0, 1.0];
    for (name, w) in [("unit", Weight::constant(1.0)), ("|x|^0.5", Weight::power(0.5))] {
        let s = QuasiMetricSpace::new(w, 2.0, 1, 1, diameter)?;
        let r = s.quasi_triangle_constant(10_000, &lo, &hi, 0)?;
        println!("K0 estimate, {name}: {:.6} over {} triples", r.k0_estimate, r.samples);
    }
    Ok(())
}
