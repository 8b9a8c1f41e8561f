use elliptic_kappa::selftest::{run, SelftestOptions};

fn main() -> elliptic_kappa::Result<()> {
    let report = run(SelftestOptions::default())?;
    for s in &report.suites {
        println!("{:<20} {:>6} checks  worst {:.2e}  tol {:.0e}  {}", s.name, s.checks, s.worst, s.tolerance, if s.passed { "ok" } else { "FAIL" });
    }
    println!("overall: {}", if report.passed() { "pass" } else { "FAIL" });
    Ok(())
}
