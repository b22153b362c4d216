//! Estimators against their brute-force and closed-form references.

fn main() -> wplap::Result<()> {
    let table = wplap::verify::oracle_suite(0)?;
    for r in &table.rows {
        println!(
            "{:<20} {:<4} value {:<12.6} reference {:<12.6} {}",
            r.name,
            if r.passed { "ok" } else { "FAIL" },
            r.value,
            r.reference,
            r.detail
        );
    }
    println!("all passed: {}", table.all_passed);
    Ok(())
}
