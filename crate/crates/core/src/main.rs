use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use karakasa::experiments::{
    exp_attack, exp_replication, exp_storage, exp_utxo_build, write_csv, write_reports,
    AttackParams, ExperimentError, ResultRow, StorageParams, UtxoBuildParams,
};
use karakasa::metrics::Mode;

#[derive(Parser)]
#[command(
    name = "karakasa",
    version,
    about = "Sharded blockchain storage experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-node storage as the cluster grows.
    Storage {
        #[arg(long, default_value = "500:1000:100", value_parser = parse_usize_range)]
        nodes: Values<usize>,
        #[arg(long, default_value_t = 512_000)]
        block_count: u64,
        #[arg(long, default_value = "0", value_parser = parse_replicas)]
        replicas: Values<usize>,
        #[arg(long, value_enum, default_value_t = CliMode::Placement)]
        mode: CliMode,
        #[command(flatten)]
        common: Common,
    },
    /// Per-node storage as the replica count grows.
    Replication {
        #[arg(long, default_value_t = 1000)]
        nodes: usize,
        #[arg(long, default_value_t = 50_000)]
        block_count: u64,
        #[arg(long, default_value = "0:4", value_parser = parse_replicas)]
        replicas: Values<usize>,
        #[arg(long, value_enum, default_value_t = CliMode::Placement)]
        mode: CliMode,
        #[command(flatten)]
        common: Common,
    },
    /// Messages a joining node needs to rebuild its UTXO set (full content).
    UtxoBuild {
        #[arg(long, default_value_t = 1000)]
        nodes: usize,
        #[arg(long, default_value = "1000:5000:1000", value_parser = parse_u64_range)]
        block_count: Values<u64>,
        #[arg(long, default_value_t = 0)]
        replicas: usize,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Transaction-rewriting campaigns against a fraction of the cluster.
    Attack {
        #[arg(long, default_value_t = 100)]
        nodes: usize,
        #[arg(long, default_value_t = 2)]
        replicas: usize,
        #[arg(long, default_value_t = 4)]
        stack_depth: usize,
        /// Comma-separated fractions of compromised nodes.
        #[arg(long, default_value = "0,0.25,0.5,0.75,1", value_delimiter = ',')]
        fractions: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Also write one CSV line per campaign here.
        #[arg(long)]
        reports: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, env = "KARAKASA_SEED", default_value_t = 42)]
    seed: u64,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    Placement,
    Full,
}

impl From<CliMode> for Mode {
    fn from(m: CliMode) -> Mode {
        match m {
            CliMode::Placement => Mode::PlacementOnly,
            CliMode::Full => Mode::FullContent,
        }
    }
}

/// A parsed value list, kept as one clap argument.
#[derive(Clone, Debug)]
struct Values<T>(Vec<T>);

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.trim().parse().map_err(|_| format!("not a number: {s:?}"))
}

/// `n` or `lo:hi:step` (inclusive).
fn parse_stepped(s: &str) -> Result<Vec<u64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [n] => Ok(vec![parse_num(n)?]),
        [lo, hi, step] => {
            let (lo, hi, step): (u64, u64, u64) =
                (parse_num(lo)?, parse_num(hi)?, parse_num(step)?);
            if step == 0 || lo > hi {
                return Err(format!("bad range {s:?}: need lo <= hi and step > 0"));
            }
            Ok((lo..=hi).step_by(step as usize).collect())
        }
        _ => Err(format!("expected n or lo:hi:step, got {s:?}")),
    }
}

fn parse_u64_range(s: &str) -> Result<Values<u64>, String> {
    parse_stepped(s).map(Values)
}

fn parse_usize_range(s: &str) -> Result<Values<usize>, String> {
    Ok(Values(
        parse_stepped(s)?.into_iter().map(|v| v as usize).collect(),
    ))
}

/// `n` or `lo:hi` (inclusive).
fn parse_replicas(s: &str) -> Result<Values<usize>, String> {
    match s.split_once(':') {
        None => Ok(Values(vec![parse_num(s)?])),
        Some((lo, hi)) => {
            let (lo, hi): (usize, usize) = (parse_num(lo)?, parse_num(hi)?);
            if lo > hi {
                return Err(format!("bad range {s:?}"));
            }
            Ok(Values((lo..=hi).collect()))
        }
    }
}

fn print_summary<W: Write>(rows: &[ResultRow], mut w: W) -> io::Result<()> {
    writeln!(
        w,
        "{:<28} {:>6} {:>8} {:>3} {:>5} {:>14} {:>14} {:>9}",
        "metric", "N", "blocks", "R", "trial", "measured", "estimated", "rel.err"
    )?;
    for r in rows {
        writeln!(
            w,
            "{:<28} {:>6} {:>8} {:>3} {:>5} {:>14.3} {:>14.3} {:>8.2}%",
            r.metric,
            r.n_nodes,
            r.block_count,
            r.replicas,
            r.trial,
            r.measured,
            r.estimated,
            100.0 * r.relative_error()
        )?;
    }
    w.flush()
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    let (rows, common, reports) = match cli.command {
        Command::Storage {
            nodes,
            block_count,
            replicas,
            mode,
            common,
        } => {
            let p = StorageParams {
                nodes: nodes.0,
                block_count,
                replicas: replicas.0,
                seed: common.seed,
                mode: mode.into(),
            };
            (exp_storage(&p)?, common, None)
        }
        Command::Replication {
            nodes,
            block_count,
            replicas,
            mode,
            common,
        } => {
            let p = StorageParams {
                nodes: vec![nodes],
                block_count,
                replicas: replicas.0,
                seed: common.seed,
                mode: mode.into(),
            };
            (exp_replication(&p)?, common, None)
        }
        Command::UtxoBuild {
            nodes,
            block_count,
            replicas,
            trials,
            common,
        } => {
            let p = UtxoBuildParams {
                n_nodes: nodes,
                block_counts: block_count.0,
                trials,
                replicas,
                seed: common.seed,
            };
            (exp_utxo_build(&p)?, common, None)
        }
        Command::Attack {
            nodes,
            replicas,
            stack_depth,
            fractions,
            trials,
            reports,
            common,
        } => {
            let p = AttackParams {
                n_nodes: nodes,
                replicas,
                stack_depth,
                fractions,
                trials,
                seed: common.seed,
            };
            let (rows, campaign) = exp_attack(&p)?;
            (rows, common, reports.map(|path| (path, campaign)))
        }
    };
    if let Some((path, campaign)) = reports {
        write_reports(&campaign, BufWriter::new(File::create(path)?))?;
    }
    match common.out {
        Some(path) => {
            write_csv(&rows, BufWriter::new(File::create(path)?))?;
            print_summary(&rows, io::stdout().lock())?;
        }
        None => {
            write_csv(&rows, io::stdout().lock())?;
            print_summary(&rows, io::stderr().lock())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
