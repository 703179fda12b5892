//! Finite-difference check of every backward rule and of the full training
//! objectives, then the same suite with a deliberately broken softmax
//! backward to show fault attribution.

use fairfuse::gradsuite::{run_grad_suite, SuiteOptions};

fn main() -> fairfuse::Result<()> {
    let report = run_grad_suite(&SuiteOptions::default())?;
    print!("{}", report.summary());
    println!("passed: {} over {} points\n", report.passed(), report.total_points());

    let faulty = run_grad_suite(&SuiteOptions {
        fault: Some("softmax"),
        ..SuiteOptions::default()
    })?;
    let failing: Vec<&str> = faulty.cases.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    println!("with a faulty softmax backward, failing cases: {}", failing.join(", "));
    println!("suspects: {:?}", faulty.suspect_ops());
    Ok(())
}
