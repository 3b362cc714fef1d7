use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use koopman_clf::pipeline::{self, LoopKind};
use koopman_clf::{Error, RunConfig};

/// Koopman eigenfunction lifting and CLF feedback design.
#[derive(Parser)]
#[command(name = "koopctl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate snapshots, fit EDMD and write the lifted bilinear model.
    Identify(Common),
    /// Search for a quadratic CLF over the γ schedule.
    Design(Common),
    /// Simulate closed-loop, open-loop and LQR runs.
    Simulate(Common),
    /// Summarize a finished simulation.
    Report(Common),
    /// All four stages in order.
    Run(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit 0 even when closed-loop trajectories diverged.
    #[arg(long)]
    lenient: bool,
}

const DIVERGENCE_EXIT: u8 = 4;

fn init_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("KOOPCTL_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("KOOPCTL_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn report_divergence(diverged: &[usize], lenient: bool) -> u8 {
    if diverged.is_empty() {
        return 0;
    }
    eprintln!("warning: closed-loop trajectories diverged: {diverged:?}");
    if lenient {
        0
    } else {
        DIVERGENCE_EXIT
    }
}

fn execute(command: &Command) -> Result<u8, Error> {
    let (Command::Identify(c) | Command::Design(c) | Command::Simulate(c) | Command::Report(c) | Command::Run(c)) =
        command;
    init_threads()?;
    let cfg = RunConfig::load(&c.config)?;
    let out = pipeline::output_dir(&cfg, c.out.as_deref());
    std::fs::create_dir_all(&out)?;
    match command {
        Command::Identify(_) => {
            let o = pipeline::identify(&cfg, &out)?;
            println!(
                "identified {} lifted coordinates from {} samples (EDMD residual {:.3e}, {} B, span residual {:.3e})",
                o.model.dim(),
                o.koopman.samples,
                o.koopman.residual,
                if o.least_squares { "least-squares" } else { "exact" },
                o.model.span_residual
            );
            Ok(0)
        }
        Command::Design(_) => {
            let f = pipeline::design(&cfg, &out)?;
            print_design(&f);
            Ok(0)
        }
        Command::Simulate(_) => {
            let o = pipeline::simulate(&cfg, &out)?;
            println!(
                "simulated {} runs into {}",
                o.file.records.len(),
                out.join(pipeline::TRAJ_DIR).display()
            );
            Ok(report_divergence(&o.diverged, c.lenient))
        }
        Command::Report(_) => {
            let s = pipeline::report(&cfg, &out)?;
            print_summary(&out, &s);
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            Ok(0)
        }
        Command::Run(_) => {
            pipeline::identify(&cfg, &out)?;
            print_design(&pipeline::design(&cfg, &out)?);
            pipeline::simulate(&cfg, &out)?;
            let s = pipeline::report(&cfg, &out)?;
            print_summary(&out, &s);
            let diverged = s
                .loops
                .get(&LoopKind::Closed)
                .map(|l| l.diverged.clone())
                .unwrap_or_default();
            Ok(report_divergence(&diverged, c.lenient))
        }
    }
}

fn print_design(f: &pipeline::ClfFile) {
    println!(
        "CLF found with γ = {} after {} attempt(s): t* = {:.6e}, certificate {}",
        f.gamma,
        f.attempts.len(),
        f.t_opt,
        f.certificate
    );
}

fn print_summary(out: &Path, s: &pipeline::Summary) {
    for (kind, l) in &s.loops {
        let t = l
            .max_convergence_time
            .map_or_else(|| "n/a".to_string(), |t| format!("{t:.3} s"));
        println!(
            "{:>6}: {}/{} converged, worst convergence time {t}, max final ‖x‖ {:.3e}, V violations {}",
            kind.label(),
            l.converged,
            l.runs,
            l.max_final_norm,
            l.v_violations
        );
    }
    if let Some(d) = s.clf_vs_lqr {
        println!("CLF worst convergence time minus LQR: {d:+.3} s");
    }
    println!("summary written to {}", out.join(pipeline::SUMMARY_FILE).display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
