use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use capelin_core::demo::{write_demo, PORTFOLIO_FILE};
use capelin_core::phenomena::{colocation_records, mine_interference_groups, save_interference_groups};
use capelin_core::portfolio::{export_results, load_portfolio, recommend_plan, run_portfolio, Recommendation, RunResults};
use capelin_core::topology::{enumerate_candidates, ScalingConstants, Topology};
use capelin_core::trace::{
    load_azure_trace, load_private_trace, read_placement_file, sample_multiple_traces_with, sample_trace,
    truncate_workload, write_canonical_trace, Workload, DEFAULT_ASSUMED_CLOCK_MHZ, PRIVATE_PREFIX, PUBLIC_PREFIX,
    PUBLIC_PRESAMPLE_FRACTION,
};
use capelin_core::Error;
use capelin_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "capelin", version, about = "Trace-driven capacity planning for virtualized datacenters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a portfolio and export results.csv and summary.csv.
    Run(RunArgs),
    /// Derive the 12 candidate topologies of a base topology.
    Candidates(CandidatesArgs),
    /// Sample a trace down to a load fraction, optionally mixing in a public trace.
    Sample(SampleArgs),
    /// Mine interference groups from historical placements.
    Interference(InterferenceArgs),
    /// Write the bundled demo portfolio and its inputs.
    Demo {
        #[arg(long)]
        out: PathBuf,
    },
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    portfolio: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override the portfolio's repetition count.
    #[arg(long)]
    repetitions: Option<u32>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Args)]
struct CandidatesArgs {
    #[arg(long)]
    topology: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = ScalingConstants::default().horizontal_cores)]
    horizontal_cores: u32,
    #[arg(long, default_value_t = ScalingConstants::default().vertical_cores)]
    vertical_cores: u32,
    #[arg(long, default_value_t = ScalingConstants::default().velocity_factor)]
    velocity_factor: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Canonical,
    Azure,
}

#[derive(Args)]
struct TraceArgs {
    /// Trace directory.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Canonical)]
    format: Format,
    /// Clock used to convert Azure utilization to MHz.
    #[arg(long, default_value_t = DEFAULT_ASSUMED_CLOCK_MHZ)]
    assumed_clock_mhz: f64,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    input: TraceArgs,
    #[arg(long)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Cut traces to this many seconds first.
    #[arg(long)]
    duration: Option<i64>,
    /// Mix a sample of a public trace into the private sample.
    #[arg(long, requires_all = ["public", "public_fraction"])]
    mix: bool,
    #[arg(long, requires = "mix")]
    public: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Azure)]
    public_format: Format,
    #[arg(long, requires = "mix")]
    public_fraction: Option<f64>,
    #[arg(long, default_value_t = PUBLIC_PRESAMPLE_FRACTION)]
    presample_fraction: f64,
}

#[derive(Args)]
struct InterferenceArgs {
    /// placement.csv with a cpu_ready_fraction column.
    #[arg(long)]
    placement: PathBuf,
    #[command(flatten)]
    input: TraceArgs,
    #[arg(long)]
    topology: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Minimum observations (slices) per group.
    #[arg(long, default_value_t = 1)]
    min_occurrences: usize,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    addr: IpAddr,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "capelin-data")]
    data_dir: PathBuf,
    /// Directory that relative paths in portfolios resolve against.
    #[arg(long, default_value = ".")]
    base_dir: PathBuf,
    /// Built UI bundle to serve under /ui.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
}

fn default_parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn load_trace(args: &TraceArgs, path: &Path, format: Format) -> Result<Workload, Error> {
    match format {
        Format::Canonical => load_private_trace(path),
        Format::Azure => load_azure_trace(path, args.assumed_clock_mhz),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Error> {
    let mut body = serde_json::to_string_pretty(value).expect("serializable");
    body.push('\n');
    fs::write(path, body).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn create_dir(path: &Path) -> Result<(), Error> {
    fs::create_dir_all(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn print_summary(results: &RunResults, metrics: &[&str], rec: &Recommendation) {
    let id_width = results.aggregates.iter().map(|a| a.scenario_id.len()).max().unwrap_or(0).max(8);
    let col = |m: &str| m.len().max(12);
    print!("{:<id_width$}", "scenario");
    for m in metrics {
        print!("  {:>w$}", m, w = col(m));
    }
    println!();
    for agg in &results.aggregates {
        print!("{:<id_width$}", agg.scenario_id);
        for m in metrics {
            let median = agg.get(m).map_or(f64::NAN, |a| a.median);
            print!("  {:>w$.4e}", median, w = col(m));
        }
        println!();
    }
    println!();
    if rec.best_effort {
        println!("no scenario meets every SLO; best effort ranking:");
    } else {
        println!("recommended ranking (meets all SLOs, fewest cores first):");
    }
    for (i, r) in rec.ranked.iter().enumerate() {
        println!(
            "  {}. {} ({} cores, median power {:.4e} Wh, {} SLO violations)",
            i + 1,
            r.scenario_id,
            r.total_cores,
            r.median_power_wh,
            r.violated
        );
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Error> {
    let mut resolved = load_portfolio(&args.portfolio)?;
    if let Some(r) = args.repetitions {
        resolved = resolved.with_repetitions(r)?;
    }
    let parallelism = args.parallelism.unwrap_or_else(default_parallelism);
    if parallelism == 0 {
        return Err(Error::Argument("--parallelism must be >= 1".into()));
    }
    log::info!(
        "running {} scenarios x {} repetitions on {parallelism} threads",
        resolved.scenarios.len(),
        resolved.repetitions()
    );
    let progress = |done: usize, total: usize| log::debug!("{done}/{total} runs complete");
    let results = run_portfolio(&resolved, parallelism, Some(&progress))?;
    let rec = recommend_plan(&results, &resolved)?;
    export_results(&results, &args.out)?;
    write_json(&args.out.join("recommendation.json"), &rec)?;
    print_summary(&results, &resolved.portfolio.targets.metrics(), &rec);
    println!("\nwrote {}", args.out.display());
    Ok(())
}

fn cmd_candidates(args: CandidatesArgs) -> Result<(), Error> {
    let topology = Topology::load(&args.topology)?;
    let constants = ScalingConstants {
        horizontal_cores: args.horizontal_cores,
        vertical_cores: args.vertical_cores,
        velocity_factor: args.velocity_factor,
    };
    let candidates = enumerate_candidates(&topology, &constants, args.seed)?;
    create_dir(&args.out)?;
    let mut index = Vec::new();
    for (dims, candidate) in &candidates {
        let file = format!("{}.json", candidate.name);
        write_json(&args.out.join(&file), candidate)?;
        index.push(json!({
            "file": file,
            "label": dims.label(),
            "dimensions": dims,
            "machines": candidate.machine_count(),
            "total_cores": candidate.total_cores(),
            "total_memory_mb": candidate.total_memory_mb(),
        }));
        println!("{:<16} {:>5} machines {:>7} cores  {file}", dims.label(), candidate.machine_count(), candidate.total_cores());
    }
    write_json(&args.out.join("index.json"), &index)?;
    Ok(())
}

fn cmd_sample(args: SampleArgs) -> Result<(), Error> {
    let mut private = load_trace(&args.input, &args.input.trace, args.input.format)?;
    if let Some(d) = args.duration {
        private = truncate_workload(&private, d)?;
    }
    let total = private.total_load_mflop();
    let sample = if args.mix {
        let path = args.public.as_deref().expect("clap requires --public");
        let mut public = load_trace(&args.input, path, args.public_format)?;
        if let Some(d) = args.duration {
            public = truncate_workload(&public, d)?;
        }
        let public_fraction = args.public_fraction.expect("clap requires --public-fraction");
        sample_multiple_traces_with(&private, args.fraction, &public, public_fraction, args.presample_fraction, args.seed)?
    } else {
        if !(0.0..=1.0).contains(&args.fraction) {
            return Err(Error::Argument(format!("fraction {} outside [0, 1]", args.fraction)));
        }
        if total <= 0.0 {
            return Err(Error::Argument("the trace has no load to sample from".into()));
        }
        sample_trace(&private, args.fraction, total, args.seed)?
    };
    write_canonical_trace(&sample, &args.out)?;
    let share = |prefix: &str| {
        let (n, load) = sample
            .vms()
            .iter()
            .filter(|vm| vm.vm_id.starts_with(prefix))
            .fold((0, 0.0), |(n, load), vm| (n + 1, load + vm.total_load_mflop()));
        (n, if total > 0.0 { load / total } else { 0.0 })
    };
    if args.mix {
        let (n_pri, f_pri) = share(PRIVATE_PREFIX);
        let (n_pub, f_pub) = share(PUBLIC_PREFIX);
        println!("selected {} VMs: {n_pri} private (load fraction {f_pri:.6}), {n_pub} public (load fraction {f_pub:.6})", sample.len());
    } else {
        let (n, f) = share("");
        println!("selected {n} VMs, load fraction {f:.6}");
    }
    Ok(())
}

fn cmd_interference(args: InterferenceArgs) -> Result<(), Error> {
    let workload = load_trace(&args.input, &args.input.trace, args.input.format)?;
    let topology = Topology::load(&args.topology)?;
    let placements = read_placement_file(&args.placement)?;
    let records = colocation_records(&workload, &topology, &placements)?;
    let groups = mine_interference_groups(&records, args.min_occurrences)?;
    save_interference_groups(&groups, &args.out)?;
    println!("{} observations, {} groups", records.len(), groups.len());
    Ok(())
}

fn cmd_demo(out: PathBuf) -> Result<(), Error> {
    write_demo(&out)?;
    println!("wrote {}", out.join(PORTFOLIO_FILE).display());
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> Result<(), Error> {
    let config = ServiceConfig {
        data_dir: args.data_dir,
        base_dir: args.base_dir,
        ui_dir: args.ui_dir,
        parallelism: args.parallelism.unwrap_or_else(default_parallelism),
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Io { path: PathBuf::new(), source: e })?;
    runtime
        .block_on(capelin_service::serve(config, SocketAddr::new(args.addr, args.port)))
        .map_err(|e| Error::Io { path: PathBuf::from(format!("{}:{}", args.addr, args.port)), source: e })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CAPELIN_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Candidates(a) => cmd_candidates(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Interference(a) => cmd_interference(a),
        Command::Demo { out } => cmd_demo(out),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
