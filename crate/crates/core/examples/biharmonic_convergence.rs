//! Biharmonic problem on the unit cube with `u = Π sin³(πx_i)`.
//!
//! ```text
//! cargo run --release --example biharmonic_convergence -- 4 8 16
//! ```

use decoupled_feec::harness::{run_convergence, ConvergenceReport, Problem};
use decoupled_feec::system::SolverConfig;

pub fn run_example() -> decoupled_feec::Result<ConvergenceReport> {
    run_with_levels(&[2, 4])
}

pub fn run_with_levels(levels: &[usize]) -> decoupled_feec::Result<ConvergenceReport> {
    let report = run_convergence(Problem::Biharmonic, 3, 1, levels, &SolverConfig::default())?;
    println!("{}", report.to_markdown());
    for level in &report.levels {
        println!("n={:<3} multipliers/‖u_h‖ = {:.2e}  ({:.1} s)", level.n, level.mult_norm_max, level.seconds);
    }
    Ok(report)
}

#[allow(dead_code)]
fn main() -> decoupled_feec::Result<()> {
    let levels: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if levels.is_empty() {
        run_example()?;
    } else {
        run_with_levels(&levels)?;
    }
    Ok(())
}
