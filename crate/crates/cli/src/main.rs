use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use graphweight::MSelection;
use graphweight_cli::{
    cmd_graph, cmd_report, cmd_sweep, cmd_synth, cmd_train, default_c_grid, default_k_grid,
    load_synth_spec, parse_list, CliError, CliResult, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "graphweight",
    version,
    about = "Factor-graph sample weighting for longitudinal classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort and its ground-truth noise groups.
    Synth {
        /// key = value spec file; defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build the factor graph and report its spectrum.
    Graph {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        k: usize,
        #[arg(long, default_value = "auto")]
        m: String,
        /// Also write A, L, E and the kept eigenvalues as CSV.
        #[arg(long)]
        dump_graph: bool,
    },
    /// Cross-validated training.
    Train {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Evaluation report for a finished training run.
    Report {
        /// Output directory of a `train` run.
        #[arg(long)]
        run: PathBuf,
    },
    /// Sweep neighbour count and centering weight.
    Sweep {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated K values.
        #[arg(long)]
        k_list: Option<String>,
        /// Comma-separated c values.
        #[arg(long)]
        c_list: Option<String>,
        #[command(flatten)]
        settings: Settings,
    },
}

/// Training settings; each overrides the `--config` entry of the same name.
#[derive(Args)]
struct Settings {
    /// key = value file with any of the settings below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// none, spectral, only_graph or jtt.
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    c: Option<String>,
    /// Basis size or "auto".
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr_model: Option<String>,
    #[arg(long)]
    lr_a: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    folds: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    jtt_lambda: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    hidden2: Option<String>,
}

impl Settings {
    fn resolve(&self) -> CliResult<RunConfig> {
        let flags = [
            ("scheme", &self.scheme),
            ("k", &self.k),
            ("c", &self.c),
            ("m", &self.m),
            ("epochs", &self.epochs),
            ("lr-model", &self.lr_model),
            ("lr-a", &self.lr_a),
            ("batch", &self.batch),
            ("folds", &self.folds),
            ("seed", &self.seed),
            ("jtt-lambda", &self.jtt_lambda),
            ("hidden", &self.hidden),
            ("hidden2", &self.hidden2),
        ];
        let overrides: Vec<(&str, String)> = flags
            .into_iter()
            .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
            .collect();
        RunConfig::build(self.config.as_deref(), &overrides)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth { spec, out, seed } => {
            let spec = load_synth_spec(spec.as_deref(), seed)?;
            let cohort = cmd_synth(&spec, &out)?;
            println!(
                "wrote {} subjects to {}",
                cohort.dataset.len(),
                out.display()
            );
        }
        Command::Graph {
            cohort,
            out,
            k,
            m,
            dump_graph,
        } => {
            let m: MSelection = m.parse()?;
            let g = cmd_graph(&cohort, k, m, &out, dump_graph)?;
            if let Some(w) = g.warning() {
                eprintln!("warning: {w}");
            }
            println!(
                "n = {}, k = {}, m = {}, null eigenvalues = {}",
                g.n_samples, g.k_neighbors, g.m_used, g.null_dim
            );
        }
        Command::Train {
            cohort,
            out,
            settings,
        } => {
            let cfg = settings.resolve()?;
            let record = cmd_train(&cohort, &cfg, &out)?;
            for f in &record.folds {
                println!("fold {}: bacc {:.4} f1 {:.4}", f.fold, f.bacc, f.f1);
            }
        }
        Command::Report { run } => {
            let r = cmd_report(&run)?;
            println!(
                "scheme {}: BACC {} F1 {}",
                r.scheme, r.bacc_summary, r.f1_summary
            );
            let m = &r.median_split;
            if m.degenerate {
                println!("median split: degenerate");
            } else {
                println!(
                    "median split gap: {:.2} points ({:.2}%)",
                    m.gap_points, m.gap_percent
                );
            }
        }
        Command::Sweep {
            cohort,
            out,
            k_list,
            c_list,
            settings,
        } => {
            let cfg = settings.resolve()?;
            let ks = parse_list(k_list.as_deref(), &default_k_grid(), "k")?;
            let cs = parse_list(c_list.as_deref(), &default_c_grid(), "c")?;
            let cells = cmd_sweep(&cohort, &ks, &cs, &cfg, &out)?;
            for c in &cells {
                println!("k {:>3} c {:<5} gap {:.2}%", c.k, c.c, c.gap_percent);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_byte(&e))
        }
    }
}

fn exit_byte(e: &CliError) -> u8 {
    e.exit_code() as u8
}
