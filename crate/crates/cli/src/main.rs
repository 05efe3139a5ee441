//! `hydroleak`: simulate, dataset, train, eval and detect.
//!
//! Exit codes: 0 ok, 2 usage, 3 data, 4 diverged. Failures print one line,
//! `error: code=<id> exit=<n>: <message>`, on stderr.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hydroleak::error::ErrorKind;
use hydroleak::LeakClass;

use commands::Pace;
use settings::{parse_override, Settings};

#[derive(Parser)]
#[command(
    name = "hydroleak",
    version,
    about = "Internal-leakage diagnosis for hydraulic cylinders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Config override, `key=value`; repeatable.
    #[arg(long = "set", value_parser = parse_override)]
    overrides: Vec<(String, String)>,
}

impl Common {
    fn settings(&self, extra: Vec<(String, String)>) -> anyhow::Result<Settings> {
        let mut overrides = self.overrides.clone();
        overrides.extend(extra);
        if let Some(seed) = self.seed {
            overrides.push(("seed".into(), seed.to_string()));
        }
        Settings::resolve(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate labelled pressure traces, one file per class and repeat.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// `all` or a comma-separated list of none, low, high.
        #[arg(long, default_value = "all")]
        classes: String,
        /// Round trips per trace (each is two strokes).
        #[arg(long)]
        cycles: Option<usize>,
    },
    /// Segment traces into strokes and write the train/test split.
    Dataset {
        #[command(flatten)]
        common: Common,
        /// Directory holding `trace_*.csv`.
        #[arg(long)]
        input: PathBuf,
    },
    /// Train the classifier on a dataset directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory written by `dataset`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a model on the test split, or derive metrics from a stored
    /// confusion matrix.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "confusion")]
        model: Option<PathBuf>,
        #[arg(long, required_unless_present = "confusion")]
        data: Option<PathBuf>,
        /// Three rows of comma-separated counts (true class by row).
        #[arg(long, conflicts_with_all = ["model", "data"])]
        confusion: Option<PathBuf>,
    },
    /// Replay a trace through the online detector.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Trace CSV in the `simulate` format.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "native")]
        pace: Pace,
        /// Run inference on a worker thread.
        #[arg(long)]
        threaded: bool,
    },
}

fn parse_classes(raw: &str) -> anyhow::Result<Vec<LeakClass>> {
    if raw == "all" {
        return Ok(LeakClass::ALL.to_vec());
    }
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<LeakClass>()
                .map_err(|e| hydroleak::Error::Config(format!("--classes: {e}")).into())
        })
        .collect()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate {
            common,
            classes,
            cycles,
        } => {
            let extra = cycles
                .map(|c| ("sim.cycles".to_string(), c.to_string()))
                .into_iter()
                .collect();
            let settings = common.settings(extra)?;
            let classes = parse_classes(&classes)?;
            println!("{}", settings.banner("simulate"));
            commands::simulate(&settings, &classes, &common.out)
        }
        Command::Dataset { common, input } => {
            let settings = common.settings(Vec::new())?;
            println!("{}", settings.banner("dataset"));
            commands::dataset(&settings, &input, &common.out)
        }
        Command::Train {
            common,
            data,
            epochs,
        } => {
            let extra = epochs
                .map(|e| ("train.epochs".to_string(), e.to_string()))
                .into_iter()
                .collect();
            let settings = common.settings(extra)?;
            println!("{}", settings.banner("train"));
            commands::train(&settings, &data, &common.out)
        }
        Command::Eval {
            common,
            model,
            data,
            confusion,
        } => {
            let settings = common.settings(Vec::new())?;
            println!("{}", settings.banner("eval"));
            match (confusion, model, data) {
                (Some(path), _, _) => commands::eval_confusion(&path, &common.out),
                (None, Some(model), Some(data)) => {
                    commands::eval(&settings, &model, &data, &common.out)
                }
                _ => unreachable!("clap enforces --model and --data without --confusion"),
            }
        }
        Command::Detect {
            common,
            model,
            input,
            pace,
            threaded,
        } => {
            let settings = common.settings(Vec::new())?;
            println!("{}", settings.banner("detect"));
            commands::detect(&settings, &model, &input, &common.out, pace, threaded)
        }
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 2,
        ErrorKind::Data => 3,
        ErrorKind::Diverged => 4,
    }
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version.
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("invalid arguments");
            let first = first.trim_start_matches("error: ");
            eprintln!("error: code=usage exit=2: {}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, exit) = match err
                .chain()
                .find_map(|e| e.downcast_ref::<hydroleak::Error>())
            {
                Some(core) => (core.code(), exit_code(core.kind())),
                None => ("io_error", 3),
            };
            eprintln!(
                "error: code={code} exit={exit}: {}",
                one_line(&format!("{err:#}"))
            );
            ExitCode::from(exit)
        }
    }
}
