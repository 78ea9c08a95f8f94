//! Quad-curl problem with `u = curl(ψ(1,1,1))`, `ψ = Π sin³(πx_i)`.

use decoupled_feec::harness::{run_convergence, ConvergenceReport, Problem};
use decoupled_feec::system::SolverConfig;

pub fn run_example() -> decoupled_feec::Result<ConvergenceReport> {
    let report = run_convergence(Problem::QuadCurl, 3, 1, &[2, 4], &SolverConfig::default())?;
    println!("{}", report.to_markdown());
    Ok(report)
}

#[allow(dead_code)]
fn main() -> decoupled_feec::Result<()> {
    let levels: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if levels.is_empty() {
        run_example()?;
    } else {
        let report = run_convergence(Problem::QuadCurl, 3, 1, &levels, &SolverConfig::default())?;
        println!("{}", report.to_markdown());
    }
    Ok(())
}
