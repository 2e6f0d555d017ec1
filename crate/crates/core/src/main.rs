use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lightcone_vlasov::cli_io::{
    audit_document, diagnostics_document, emit_report, execute_run, jacobian_document, output_directory, parse_config,
    parse_jacobian_config, read_history, AuditSource, JacobianConfig, ReportDocument,
};
use lightcone_vlasov::constraint_audit::EmbedSpec;
use lightcone_vlasov::diagnostics::{diagnose, DiagnoseOptions, Tolerances};
use lightcone_vlasov::Result;

#[derive(Parser)]
#[command(
    name = "lightcone",
    version,
    about = "Spherically symmetric Vlasov-Maxwell on past light cones"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve a config and write series.csv, history.bin and the config echo.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output.directory`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also run the diagnostics and write report.json next to the outputs.
        #[arg(long)]
        diagnose: bool,
    },
    /// Check the conservation laws and bounds on a recorded history.
    Diagnose {
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Last advanced time checked; surfaces inside the window that cannot be closed fail.
        #[arg(long)]
        window_end: Option<f64>,
    },
    /// Finite-difference audit of the constraint equations on a gridded field set.
    AuditConstraints(AuditArgs),
    /// Flow-map Jacobian determinant against its closed form on Coulomb orbits.
    JacobianTest {
        /// TOML with charge, orbits, v_span, dv, h_fd, tolerance, scheme.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Args)]
struct AuditArgs {
    /// Field set in the VMLCGRID binary format.
    #[arg(long, conflicts_with = "from_history", required_unless_present = "from_history")]
    input: Option<PathBuf>,
    /// Embed a slice of a recorded history instead.
    #[arg(long, requires = "v")]
    from_history: Option<PathBuf>,
    #[arg(long)]
    v: Option<f64>,
    #[arg(long, default_value_t = 65)]
    nodes: usize,
    /// Defaults to half the grid radius of the history.
    #[arg(long)]
    half_width: Option<f64>,
    #[arg(long)]
    smoothing: Option<f64>,
    #[arg(long)]
    r_cut: Option<f64>,
    /// Threshold for the constraint-set verdict.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Also fail unless the constraints hold to `tol`.
    #[arg(long)]
    require_satisfied: bool,
    #[arg(long)]
    report: PathBuf,
}

fn finish(doc: &ReportDocument, path: &std::path::Path) -> Result<bool> {
    emit_report(doc, path)?;
    print!("{}", doc.render_text());
    Ok(doc.summary.passed)
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            config,
            out,
            diagnose: check,
        } => {
            let cfg = parse_config(&config)?;
            let dir = output_directory(&cfg, &config, out.as_deref());
            let (outcome, art) = execute_run(&cfg, &dir)?;
            eprintln!(
                "{} slices to v = {} written to {}",
                outcome.history.slices.len(),
                outcome.history.v_max(),
                art.directory.display()
            );
            if check {
                let rep = diagnose(&outcome, &DiagnoseOptions::default())?;
                return finish(&diagnostics_document(&cfg, &rep), &dir.join("report.json"));
            }
            Ok(true)
        }
        Command::Diagnose {
            history,
            report,
            window_end,
        } => {
            let (cfg, outcome) = read_history(&history)?;
            let opts = DiagnoseOptions {
                tolerances: Tolerances::default(),
                window_end,
            };
            let rep = diagnose(&outcome, &opts)?;
            finish(&diagnostics_document(&cfg, &rep), &report)
        }
        Command::AuditConstraints(a) => {
            let source = match (a.input, a.from_history) {
                (Some(p), _) => AuditSource::Grid(p),
                (None, Some(path)) => {
                    let half_width = match a.half_width {
                        Some(w) => w,
                        None => 0.5 * read_history(&path)?.1.history.grid().r_max,
                    };
                    AuditSource::History {
                        path,
                        v: a.v.unwrap_or(0.0),
                        spec: EmbedSpec {
                            nodes: a.nodes,
                            half_width,
                            r_cut: a.r_cut,
                            smoothing: a.smoothing,
                        },
                    }
                }
                (None, None) => unreachable!("clap requires one source"),
            };
            finish(&audit_document(&source, a.tol, a.require_satisfied)?, &a.report)
        }
        Command::JacobianTest { config, report } => {
            let cfg = match config {
                Some(p) => parse_jacobian_config(&p)?,
                None => JacobianConfig::default(),
            };
            finish(&jacobian_document(&cfg)?, &report)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
