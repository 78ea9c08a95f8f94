use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use decoupled_feec::harness::{run_audits, run_convergence, Problem};
use decoupled_feec::mesh::box_mesh;
use decoupled_feec::system::{SolverConfig, SolverKind};
use decoupled_feec::FeecError;

#[derive(Parser)]
#[command(name = "feec", about = "Decoupled finite element solver for fourth-order exterior problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a convergence study on uniformly refined Kuhn meshes of the unit box.
    Solve(SolveArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProblemArg {
    Biharmonic,
    Quadcurl,
    Fourthdiv,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Auto,
    Direct,
    Iterative,
}

#[derive(clap::Args)]
struct SolveArgs {
    #[arg(long, value_enum)]
    problem: ProblemArg,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(2..=3))]
    dim: u8,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    k: u8,
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 8, 16])]
    levels: Vec<usize>,
    /// Append the n = 32 level.
    #[arg(long)]
    deep: bool,
    #[arg(long, value_enum, default_value = "auto")]
    solver: SolverArg,
    #[arg(long, default_value_t = 1e-10)]
    rtol: f64,
    /// Solve the saddle systems with full mass matrices instead of eliminating multipliers.
    #[arg(long)]
    no_eliminate: bool,
    /// Write the convergence table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the finest mesh.
    #[arg(long)]
    mesh_dump: Option<PathBuf>,
    /// Run the structural audits before solving.
    #[arg(long)]
    audit: bool,
}

fn exit_code(e: &FeecError) -> ExitCode {
    match e {
        FeecError::SolverFailure(_) => ExitCode::from(2),
        FeecError::InvariantViolation(_) | FeecError::NotUnisolvent(_) | FeecError::RankDeficient { .. } => ExitCode::from(3),
        _ => ExitCode::from(1),
    }
}

fn solve(args: SolveArgs) -> Result<ExitCode, FeecError> {
    let problem = match args.problem {
        ProblemArg::Biharmonic => Problem::Biharmonic,
        ProblemArg::Quadcurl => Problem::QuadCurl,
        ProblemArg::Fourthdiv => Problem::FourthDiv,
    };
    let dim = args.dim as usize;
    let k = args.k as usize;
    let mut levels = args.levels.clone();
    if args.deep && !levels.contains(&32) {
        levels.push(32);
    }
    levels.sort_unstable();
    levels.dedup();
    let cfg = SolverConfig {
        solver: match args.solver {
            SolverArg::Auto => SolverKind::Auto,
            SolverArg::Direct => SolverKind::Direct,
            SolverArg::Iterative => SolverKind::Iterative,
        },
        rtol: args.rtol,
        eliminate: !args.no_eliminate,
        ..SolverConfig::default()
    };
    cfg.validate()?;

    if args.audit {
        let mut all_ok = true;
        for line in run_audits(dim, k)? {
            println!("[{}] {}: {}", if line.ok { "ok" } else { "FAIL" }, line.name, line.detail);
            all_ok &= line.ok;
        }
        if !all_ok {
            eprintln!("structural audit failed");
            return Ok(ExitCode::from(3));
        }
    }
    if let (Some(path), Some(&n)) = (&args.mesh_dump, levels.last()) {
        box_mesh(dim, n)?.dump_to_path(path)?;
    }

    let report = run_convergence(problem, dim, k, &levels, &cfg)?;
    println!("{}", report.to_markdown());
    if let Some(path) = &args.out {
        std::fs::write(path, report.to_csv())?;
    }
    let ratio = report.max_multiplier_ratio();
    if ratio > cfg.tol_mult {
        eprintln!("multiplier norm ratio {ratio:.3e} exceeds {:.1e}", cfg.tol_mult);
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(args) => solve(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
