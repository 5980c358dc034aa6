use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use margbench::bench::{
    comparison_table, read_records, restricted_trend, run_matrix, summarise, summary_to_csv, summary_to_json_lines,
    BenchRecord, Format, Method, RecordSink, ResultWriter, RunSpec,
};
use margbench::oracle::run_checks;
use margbench::simulate::{find_scenario, generate, scenario_catalog, write_dataset, Scenario};
use margbench::{Error, Result};

#[derive(Parser)]
#[command(name = "margbench", version, about = "Full vs marginalised MCMC benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write simulated datasets, one file per (scenario, replicate)
    Simulate(SimulateArgs),
    /// Run the scenario × method × replicate matrix
    Run(RunArgs),
    /// Aggregate result files into per-cell box-plot statistics
    Summarise(SummariseArgs),
    /// Run the invariant and oracle self-checks
    Check(CheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario id; repeat for several. Defaults to all thirteen.
    #[arg(long)]
    scenario: Vec<String>,
    #[arg(long, default_value_t = 5)]
    replicates: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario id; repeat for several. Defaults to all thirteen.
    #[arg(long)]
    scenario: Vec<String>,
    /// Method; repeat for several. Defaults to every method applicable to
    /// each scenario.
    #[arg(long, value_parser = parse_method)]
    method: Vec<Method>,
    #[arg(long, default_value_t = 3)]
    chains: usize,
    /// Iterations per chain, warmup included
    #[arg(long, default_value_t = 3000)]
    iterations: usize,
    #[arg(long, default_value_t = 1500)]
    warmup: usize,
    #[arg(long, default_value_t = 5)]
    replicates: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Result file, appended to. Standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Records run concurrently
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Exit 0 even if some records failed
    #[arg(long)]
    keep_going: bool,
}

#[derive(Args)]
struct SummariseArgs {
    /// Result files (CSV or JSON lines)
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Summary file. Standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn scenarios(ids: &[String]) -> Result<Vec<Scenario>> {
    if ids.is_empty() {
        return Ok(scenario_catalog());
    }
    ids.iter().map(|id| find_scenario(id)).collect()
}

fn simulate(args: &SimulateArgs) -> Result<ExitCode> {
    if args.replicates == 0 {
        return Err(Error::InvalidArgument("zero replicates".into()));
    }
    let selected = scenarios(&args.scenario)?;
    fs::create_dir_all(&args.out)?;
    for s in &selected {
        for r in 1..=args.replicates {
            let d = generate(s, r, args.seed)?;
            let path = args.out.join(d.file_name());
            write_dataset(&d, io::BufWriter::new(fs::File::create(&path)?))?;
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

struct Progress<S> {
    inner: S,
    done: usize,
    total: usize,
}

impl<S: RecordSink> RecordSink for Progress<S> {
    fn accept(&mut self, r: &BenchRecord) -> Result<()> {
        self.done += 1;
        eprintln!("[{}/{}] {} {} r{}: {}", self.done, self.total, r.scenario_id, r.method, r.replicate, r.status);
        self.inner.accept(r)
    }
}

fn run(args: &RunArgs) -> Result<ExitCode> {
    let mut specs = Vec::new();
    for s in scenarios(&args.scenario)? {
        let methods = if args.method.is_empty() { Method::defaults_for(&s) } else { args.method.clone() };
        for m in methods {
            specs.push(RunSpec {
                scenario_id: s.id().to_string(),
                method: m,
                chains: args.chains,
                iterations: args.iterations,
                warmup: args.warmup,
                replicates: args.replicates,
                seed: args.seed,
            });
        }
    }
    let total = specs.len() * args.replicates;
    let format = Format::from(args.format);
    let records = match &args.out {
        Some(path) => {
            let mut sink = Progress { inner: ResultWriter::append(path, format)?, done: 0, total };
            run_matrix(&specs, args.parallel, &mut sink)?
        }
        None => {
            let mut sink = Progress { inner: ResultWriter::new(io::stdout(), format)?, done: 0, total };
            run_matrix(&specs, args.parallel, &mut sink)?
        }
    };
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        eprintln!("{failed} of {} records failed", records.len());
        if !args.keep_going {
            return Ok(ExitCode::from(1));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn summarise_cmd(args: &SummariseArgs) -> Result<ExitCode> {
    let mut records = Vec::new();
    for p in &args.inputs {
        records.extend(read_records(p)?);
    }
    let cells = summarise(&records);
    let text = match args.format {
        FormatArg::Csv => summary_to_csv(&cells)?,
        FormatArg::Json => summary_to_json_lines(&cells)?,
    };
    match &args.out {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    eprint!("{}", comparison_table(&cells));
    let (worse, compared) = restricted_trend(&cells);
    if compared > 0 {
        eprintln!("restricted full sampler slower than unrestricted on {worse} of {compared} two-component scenarios");
    }
    Ok(ExitCode::SUCCESS)
}

fn check(args: &CheckArgs) -> Result<ExitCode> {
    let mut all = true;
    for c in run_checks(args.seed) {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        all &= c.passed;
    }
    Ok(if all { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Run(a) => run(a),
        Command::Summarise(a) => summarise_cmd(a),
        Command::Check(a) => check(a),
    };
    match result {
        Ok(code) => code,
        Err(e @ (Error::InvalidArgument(_) | Error::InvalidParameter(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
