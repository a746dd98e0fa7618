use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use covermeans::bench::{self, SweepSpec, Tagged};
use covermeans::synth::BlobSpec;
use covermeans::{Algorithm, CsvOptions, Dataset, Error, HybridConfig, RunConfig, TreeConfig};

/// Exact k-means benchmark harness. Emits one metrics record per
/// (algorithm, seed, k) run.
#[derive(Parser, Debug)]
#[command(
    name = "covermeans",
    version,
    args_conflicts_with_subcommands = true,
    subcommand_negates_reqs = true
)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Summarize JSONL records as ratios against the standard algorithm.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["input", "synth"])))]
#[command(group(ArgGroup::new("ks").required(true).args(["k", "k_list"])))]
struct RunArgs {
    /// CSV file with one point per row.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value = ",", value_parser = parse_delimiter)]
    delimiter: u8,
    /// Skip the first line of the input.
    #[arg(long)]
    header: bool,
    /// Generated dataset, blobs:N,d,k_true,spread,seed.
    #[arg(long, value_parser = parse_blobs)]
    synth: Option<BlobSpec>,
    /// Comma-separated list runs every algorithm in turn.
    #[arg(long, value_delimiter = ',', required = true)]
    algorithm: Vec<Algorithm>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: Option<u64>,
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u64).range(1..))]
    k_list: Vec<u64>,
    #[arg(long, conflicts_with = "seeds", default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Cover tree base; must exceed 1.
    #[arg(long, default_value_t = 1.2, value_parser = parse_scale)]
    scale_factor: f64,
    /// Subtrees of at most this many points become leaves.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    leaf_size: u64,
    /// Tree iterations before the hybrid switches to Hamerly.
    #[arg(long, default_value_t = 7, value_parser = clap::value_parser!(u64).range(1..))]
    switch_iter: u64,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    max_iter: u64,
    /// Stop once no center moves farther; 0 waits for stable labels.
    #[arg(long, default_value_t = 0.0, value_parser = parse_tol)]
    tol: f64,
    /// Write records here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Jsonl)]
    format: Format,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// JSONL record files; each file is one dataset, named by its stem.
    #[arg(required = true)]
    records: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    format: ReportFormat,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

fn parse_delimiter(s: &str) -> Result<u8, String> {
    let s = if s == "\\t" { "\t" } else { s };
    match s.as_bytes() {
        [b] => Ok(*b),
        _ => Err("delimiter must be a single ASCII character".into()),
    }
}

fn parse_blobs(s: &str) -> Result<BlobSpec, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_scale(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    if v > 1.0 && v.is_finite() {
        Ok(v)
    } else {
        Err("scale factor must be a finite number greater than 1".into())
    }
}

fn parse_tol(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err("tolerance must be a finite number >= 0".into())
    }
}

/// Failure classes with their exit codes.
enum Failure {
    Usage(String),
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidK { .. } | Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn open(path: &Path) -> Result<File, Failure> {
    File::open(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load(args: &RunArgs) -> Result<Dataset, Failure> {
    if let Some(spec) = &args.synth {
        return Ok(spec.generate()?);
    }
    let path = args.input.as_deref().expect("clap enforces a source");
    let options = CsvOptions {
        delimiter: args.delimiter,
        has_header: args.header,
    };
    covermeans::load_dataset(BufReader::new(open(path)?), options)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let data = load(&args)?;
    let ks: Vec<usize> = match args.k {
        Some(k) => vec![k as usize],
        None => args.k_list.iter().map(|&k| k as usize).collect(),
    };
    let seeds = if args.seeds.is_empty() {
        vec![args.seed]
    } else {
        args.seeds.clone()
    };
    let spec = SweepSpec {
        algorithms: args.algorithm.clone(),
        seeds,
        ks: ks.clone(),
        config: RunConfig {
            k: ks[0],
            seed: 0,
            max_iter: args.max_iter as usize,
            tol: args.tol,
            tree: TreeConfig {
                base: args.scale_factor,
                leaf_threshold: args.leaf_size as usize,
            },
            hybrid: HybridConfig {
                t_switch: args.switch_iter as usize,
                ..Default::default()
            },
        },
    };
    let outcome = bench::run_sweep(&data, &spec)?;
    let mut out = sink(args.output.as_deref())?;
    match args.format {
        Format::Jsonl => bench::write_jsonl(&outcome.records, &mut out)?,
        Format::Csv => bench::write_csv(&outcome.records, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), Failure> {
    let mut sets = Vec::new();
    for path in &args.records {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let records = bench::read_jsonl(BufReader::new(open(path)?))
            .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        sets.push((name, records));
    }
    let tagged: Vec<Tagged<'_>> = sets
        .iter()
        .flat_map(|(name, rs)| {
            rs.iter().map(move |m| Tagged {
                dataset: name,
                metrics: m,
            })
        })
        .collect();
    let rows = bench::report(&tagged).map_err(|e| Failure::Data(e.to_string()))?;
    let text = match args.format {
        ReportFormat::Text => bench::render_text(&rows),
        ReportFormat::Json => bench::render_json(&rows)? + "\n",
    };
    let mut out = sink(args.output.as_deref())?;
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Some(Command::Report(args)) => report(args),
        None => run(cli.run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
