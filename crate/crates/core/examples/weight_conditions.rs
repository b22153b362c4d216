//! Muckenhoupt, doubling and balance constants of power weights.

use wplap::verify::ap_brute_force;
use wplap::weights::{
    ap_constant, validate_exponents, weight_report, AinfProbes, BallFamily, Refinement, Weight, WeightSetup,
};

fn main() -> wplap::Result<()> {
    let family = BallFamily::dyadic(&[0.0], 1.0, 33, 5)?;
    println!("A_2 of |x|^alpha on the line");
    println!("{:>6} {:>12} {:>12} {:>9}", "alpha", "dyadic", "intervals", "diverged");
    for alpha in [-1.0, -0.5, 0.0, 0.3, 0.5, 0.9, 1.5] {
        let est = ap_constant(&Weight::power(alpha), 2.0, &family, &Refinement::default())?;
        let brute = ap_brute_force(alpha, 2.0, 141);
        println!("{alpha:>6} {:>12.5} {:>12.5} {:>9}", est.value, brute, est.diverged);
    }

    let omega = Weight::power(0.3);
    let v = Weight::power(0.2);
    let family = BallFamily::standard(&[0.0], 1.0)?;
    let profile = BallFamily::dyadic(&[0.0], 1.0, 32, 16)?;
    let report = weight_report(&WeightSetup {
        omega: &omega,
        v: &v,
        p: 1.5,
        q: 3.0,
        n: 1,
        m: 1,
        family: &family,
        profile_family: &profile,
        refine: Refinement::default(),
        probes: AinfProbes::default(),
        profile_fraction: 0.1,
    })?;
    println!("\nomega = |x|^0.3, v = |x|^0.2, p = 1.5, q = 3");
    println!("A_p        {:.5}", report.ap_constant);
    println!("A_1        {:?}", report.a1_constant);
    println!("A_inf      C = {:.3}, delta = {:.3}", report.ainf_c, report.ainf_delta);
    println!("doubling   {:.5}", report.doubling_constant);
    println!("balance    {:.5} (refined ladder {:.5})", report.balance_constant, report.balance_refined);
    let (r0, b0) = report.compactness_profile[0];
    let (r1, b1) = *report.compactness_profile.last().unwrap();
    println!("profile    {b0:.4} at r = {r0} -> {b1:.4} at r = {r1:.2e}, vanishes: {}", report.compactness_vanishes);
    println!("passes     {}", report.passes(0.1));

    let verdict = validate_exponents(1.5, 3.0, 1.3, 0.01, 1, 1, false);
    for c in &verdict.conditions {
        println!("  [{}] {}: {}", if c.holds { "ok" } else { "--" }, c.name, c.detail);
    }
    Ok(())
}
