use anyhow::{bail, Context, Result};
use ccache::ccbf::{combine, Ccbf, CcbfParams, InsertOutcome};
use ccache::metrics::{summary_table, write_csv};
use ccache::simnet::{run_parallel, run_with, RunOptions, RunResult, ScenarioConfig, Scheme};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;

/// Collaborative edge caching simulator.
///
/// Exit codes: 0 success, 1 configuration or input error, 2 a scheme did
/// not converge before the horizon. Set RUST_LOG for diagnostics.
#[derive(Parser)]
#[command(name = "ccache", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scheme or all three on a scenario.
    Run(RunArgs),
    /// Print the default scenario as JSON.
    Config,
    /// Inspect and edit serialized counting Bloom filters.
    #[command(subcommand)]
    Ccbf(CcbfCommand),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchemeArg {
    Ccache,
    Pcache,
    Centralized,
    All,
}

impl SchemeArg {
    fn schemes(self) -> Vec<Scheme> {
        match self {
            Self::Ccache => vec![Scheme::CCache],
            Self::Pcache => vec![Scheme::PCache],
            Self::Centralized => vec![Scheme::Centralized],
            Self::All => Scheme::ALL.to_vec(),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON; omitted keys take their defaults.
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    scheme: SchemeArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Directory for one `<scheme>.csv` per run.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides `scheme.horizon_s`.
    #[arg(long)]
    horizon: Option<f64>,
    /// Run schemes one after another instead of in parallel.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum CcbfCommand {
    /// Create an empty filter file.
    New {
        file: PathBuf,
        #[arg(long, default_value_t = CcbfParams::with_seeds(0, 0).m)]
        m: u32,
        #[arg(long, default_value_t = CcbfParams::with_seeds(0, 0).g)]
        g: u8,
        #[arg(long, default_value_t = CcbfParams::with_seeds(0, 0).k)]
        k: u8,
        #[arg(long, default_value_t = CcbfParams::with_seeds(0, 0).n)]
        n: u32,
        #[arg(long, default_value_t = 0)]
        hash_seed: u64,
        #[arg(long, default_value_t = 0)]
        matrix_seed: u64,
    },
    /// Insert keys and write the filter back.
    Insert {
        file: PathBuf,
        #[command(flatten)]
        keys: KeyArgs,
    },
    /// Print `<key> true|false` for each key.
    Query {
        file: PathBuf,
        #[command(flatten)]
        keys: KeyArgs,
    },
    /// Remove keys and write the filter back.
    Delete {
        file: PathBuf,
        #[command(flatten)]
        keys: KeyArgs,
    },
    /// OR two filters with identical parameters into a new file.
    Combine {
        a: PathBuf,
        b: PathBuf,
        out: PathBuf,
    },
    /// Print parameters, item count, column histogram and fill ratio.
    Inspect { file: PathBuf },
}

#[derive(Args)]
struct KeyArgs {
    #[arg(required = true)]
    keys: Vec<String>,
    /// Parse keys as decimal u64 values hashed as 8 little-endian bytes, the
    /// encoding the simulator uses.
    #[arg(long)]
    u64: bool,
}

impl KeyArgs {
    fn encoded(&self) -> Result<Vec<(String, Vec<u8>)>> {
        self.keys
            .iter()
            .map(|k| {
                let bytes = if self.u64 {
                    k.parse::<u64>()
                        .with_context(|| format!("key {k:?} is not a u64"))?
                        .to_le_bytes()
                        .to_vec()
                } else {
                    k.as_bytes().to_vec()
                };
                Ok((k.clone(), bytes))
            })
            .collect()
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Config => {
            println!("{}", ScenarioConfig::default().to_json());
            Ok(ExitCode::SUCCESS)
        }
        Command::Ccbf(cmd) => ccbf(cmd).map(|()| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(EXIT_CONFIG)
    })
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let mut cfg = match &args.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(h) = args.horizon {
        cfg.scheme.horizon_s = h;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;

    let schemes = args.scheme.schemes();
    let opts = RunOptions::default();
    let results: Vec<RunResult> = if args.sequential || schemes.len() == 1 {
        schemes
            .iter()
            .map(|&s| run_with(&cfg, s, args.seed, &opts))
            .collect::<Result<_, _>>()?
    } else {
        run_parallel(&cfg, &schemes, args.seed, &opts)?
    };

    for r in &results {
        write_csv(&r.series, &csv_path(&args.out, r.scheme))?;
        log::info!("{}: {:?}", r.scheme, r.counters);
    }
    let rows: Vec<(&str, _)> = results
        .iter()
        .map(|r| (r.scheme.name(), &r.series))
        .collect();
    print!("{}", summary_table(&rows));

    let stalled: Vec<&str> = results
        .iter()
        .filter(|r| !r.converged)
        .map(|r| r.scheme.name())
        .collect();
    if stalled.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "did not converge by t={}s: {}",
            cfg.scheme.horizon_s,
            stalled.join(", ")
        );
        Ok(ExitCode::from(EXIT_NOT_CONVERGED))
    }
}

fn csv_path(dir: &Path, scheme: Scheme) -> PathBuf {
    dir.join(format!("{}.csv", scheme.name()))
}

fn load(path: &Path) -> Result<Ccbf> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ccbf::from_bytes(&bytes).with_context(|| format!("{} is not a valid filter", path.display()))
}

fn save(path: &Path, f: &Ccbf) -> Result<()> {
    std::fs::write(path, f.to_bytes()).with_context(|| format!("cannot write {}", path.display()))
}

fn ccbf(cmd: CcbfCommand) -> Result<()> {
    match cmd {
        CcbfCommand::New {
            file,
            m,
            g,
            k,
            n,
            hash_seed,
            matrix_seed,
        } => {
            let f = Ccbf::new(CcbfParams {
                m,
                g,
                k,
                n,
                hash_seed,
                matrix_seed,
            })?;
            save(&file, &f)
        }
        CcbfCommand::Insert { file, keys } => {
            let mut f = load(&file)?;
            for (name, key) in keys.encoded()? {
                let outcome = f.insert(&key);
                match outcome {
                    InsertOutcome::Inserted | InsertOutcome::Duplicate => {}
                    InsertOutcome::CapacityExceeded | InsertOutcome::PositionOverflow => {
                        bail!("cannot insert {name:?}: {outcome:?}")
                    }
                }
                println!("{name} {outcome:?}");
            }
            save(&file, &f)
        }
        CcbfCommand::Query { file, keys } => {
            let f = load(&file)?;
            for (name, key) in keys.encoded()? {
                println!("{name} {}", f.query(&key));
            }
            Ok(())
        }
        CcbfCommand::Delete { file, keys } => {
            let mut f = load(&file)?;
            for (name, key) in keys.encoded()? {
                println!("{name} {:?}", f.delete(&key));
            }
            save(&file, &f)
        }
        CcbfCommand::Combine { a, b, out } => {
            let merged = combine(&load(&a)?, &load(&b)?)?;
            save(&out, &merged)
        }
        CcbfCommand::Inspect { file } => {
            let f = load(&file)?;
            let p = f.params();
            println!("m {}", p.m);
            println!("g {}", p.g);
            println!("k {}", p.k);
            println!("n {}", p.n);
            println!("hash_seed {}", p.hash_seed);
            println!("matrix_seed {}", p.matrix_seed);
            println!("item_count {}", f.item_count());
            println!("fill_ratio {:.6}", f.fill_ratio());
            for (count, cols) in f.column_histogram().iter().enumerate() {
                println!("columns_with_count_{count} {cols}");
            }
            Ok(())
        }
    }
}
