use std::process::ExitCode;

use clap::{Parser, Subcommand};
use invex_topo::{exit, execute, merge_config, Command, Params};

#[derive(Parser)]
#[command(name = "invex-topo", version, about = "Landscape topology checks for scalar fields, minimax problems and continuous games")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Components of a sublevel (or superlevel) set across resolutions.
    Sublevel(Params),
    /// α-PL, block PL or two-sided PL certificate on a grid.
    CertifyPl(Params),
    /// β-growth certificate on a grid.
    CertifyGrowth(Params),
    /// Every stationary point found is a global minimum.
    CertifyInvex(Params),
    /// Shell minima exceed a level from some radius on.
    IncreasingAtInfinity(Params),
    /// String method with climbing image between two points.
    MountainPass(Params),
    /// Integrate the PL gradient flow and compare with the time bound.
    PlFlow(Params),
    /// Saddle, minimax and maximin sets of a minimax problem.
    MinimaxClassify(Params),
    /// Inner Lipschitz, Hölder or error-bound modulus of a best response.
    MinimaxModulus(Params),
    /// Nash equilibria of a game on per-player grids.
    GameNash(Params),
    /// Strategic compactness and the rationalizable iteration from K.
    GameRationalize(Params),
    /// Potential consistency and Nash set against argmax of the potential.
    GamePotential(Params),
}

fn split(sub: Sub) -> (Command, Params) {
    match sub {
        Sub::Sublevel(p) => (Command::Sublevel, p),
        Sub::CertifyPl(p) => (Command::CertifyPl, p),
        Sub::CertifyGrowth(p) => (Command::CertifyGrowth, p),
        Sub::CertifyInvex(p) => (Command::CertifyInvex, p),
        Sub::IncreasingAtInfinity(p) => (Command::IncreasingAtInfinity, p),
        Sub::MountainPass(p) => (Command::MountainPass, p),
        Sub::PlFlow(p) => (Command::PlFlow, p),
        Sub::MinimaxClassify(p) => (Command::MinimaxClassify, p),
        Sub::MinimaxModulus(p) => (Command::MinimaxModulus, p),
        Sub::GameNash(p) => (Command::GameNash, p),
        Sub::GameRationalize(p) => (Command::GameRationalize, p),
        Sub::GamePotential(p) => (Command::GamePotential, p),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE as u8 } else { 0 });
        }
    };
    let (command, params) = split(cli.command);
    let outcome = merge_config(command, params).and_then(|p| execute(command, p));
    match outcome {
        Ok(o) => {
            for c in &o.report.checks {
                println!("{:<28} {}", c.name, c.verdict.as_str());
            }
            if let Some(x) = &o.report.expectation {
                println!("expect {} observed {} -> {}", x.expected, x.observed, if x.matched { "match" } else { "mismatch" });
            }
            println!("report: {}", o.report_path.display());
            ExitCode::from(o.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
