//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 checker
//! violations, 3 simulator oracle mismatch or deadlock.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use neat::arch::ArchConfig;
use neat::checker::{check, CheckProtocol, CheckRequest};
use neat::neat::Mutation;
use neat::signature::SignatureMode;
use neat::sim::stats::CSV_HEADER;
use neat::sim::trace::Trace;
use neat::sim::{run_simulation, SimError, SimOptions, SimProtocol};
use neat::sweep::{sweep, to_csv};
use neat::workload::{generate, verify_drf, WorkloadKind, WorkloadSpec};

#[derive(Parser)]
#[command(name = "neatsim", version, about = "Coherence protocol checker and trace-driven simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Exhaustively explore a tiny configuration.
    Check(CheckArgs),
    /// Simulate one trace on one protocol.
    Sim(SimArgs),
    /// Generate a synthetic trace.
    Gen(GenArgs),
    /// Simulate workloads x protocols and write one CSV.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CheckArgs {
    /// neat-base, neat-pi, neat-full or mesi
    #[arg(long)]
    protocol: String,
    #[arg(long, default_value_t = 1)]
    lines: usize,
    #[arg(long, default_value_t = 1)]
    bytes: usize,
    /// Inject a registry bug (skip-commit, silent-dirty-evict, no-self-invalidate, skip-ws-insert, early-cm-exit).
    #[arg(long)]
    mutate: Option<String>,
    #[arg(long)]
    max_states: Option<usize>,
    /// Keep exploring after this many violations.
    #[arg(long, default_value_t = 1)]
    max_violations: usize,
    #[arg(long)]
    no_drf_filter: bool,
    #[arg(long)]
    si_waits_putacks: bool,
    #[arg(long)]
    strict_empty_episode: bool,
    /// Worker threads; 0 uses every CPU.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Also write the key=value report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sigs {
    Bloom,
    Exact,
}

#[derive(Args)]
struct MachineArgs {
    /// Flat `key = value` file overriding the desk-scale machine.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single override, applied after --config. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Start from the full-size cache capacities instead of desk scale.
    #[arg(long)]
    full_scale: bool,
    /// Write signature flavour for neat-full.
    #[arg(long, value_enum, default_value_t = Sigs::Bloom)]
    signatures: Sigs,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    protocol: String,
    #[arg(long)]
    trace: PathBuf,
    #[command(flatten)]
    machine: MachineArgs,
    /// Write a CSV header and one result row here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Neat protocols only: inject a registry bug.
    #[arg(long)]
    mutate: Option<String>,
}

#[derive(Args)]
struct GenArgs {
    /// Print every workload and its parameters.
    #[arg(long)]
    list: bool,
    #[arg(long, required_unless_present = "list")]
    workload: Option<String>,
    #[arg(long)]
    cores: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lines: Option<usize>,
    #[arg(long)]
    nops: Option<u32>,
    #[arg(long, default_value_t = 64)]
    line_size: usize,
    #[arg(long, required_unless_present = "list")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated protocols; all five by default.
    #[arg(long, value_delimiter = ',')]
    protocols: Vec<String>,
    /// Comma-separated workloads; all five by default.
    #[arg(long, value_delimiter = ',')]
    workloads: Vec<String>,
    /// Output file; stdout when absent.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Override every workload's core count.
    #[arg(long)]
    cores: Option<usize>,
    /// Override every workload's iteration count.
    #[arg(long)]
    iterations: Option<usize>,
    #[command(flatten)]
    machine: MachineArgs,
    /// Parallel jobs; 0 uses every CPU.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

/// A failure with its exit code.
struct Failure(u8, String);

fn usage(msg: impl Into<String>) -> Failure {
    Failure(1, msg.into())
}

fn sim_failure(e: SimError) -> Failure {
    Failure(if e.is_functional() { 3 } else { 1 }, e.to_string())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn parse_mutation(name: Option<&str>) -> Result<Option<Mutation>, Failure> {
    name.map(|n| {
        Mutation::parse(n).ok_or_else(|| {
            let known: Vec<_> = Mutation::ALL.iter().map(|m| m.name()).collect();
            usage(format!("unknown mutation `{n}` (known: {})", known.join(", ")))
        })
    })
    .transpose()
}

fn sim_protocol(name: &str) -> Result<SimProtocol, Failure> {
    SimProtocol::parse(name).ok_or_else(|| {
        let known: Vec<_> = SimProtocol::ALL.iter().map(|p| p.name()).collect();
        usage(format!("unknown protocol `{name}` (known: {})", known.join(", ")))
    })
}

fn machine(args: &MachineArgs) -> Result<(ArchConfig, SimOptions), Failure> {
    let mut cfg = if args.full_scale { ArchConfig::full_scale() } else { ArchConfig::desk_scale() };
    if let Some(p) = &args.config {
        cfg.apply_text(&read(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?;
    }
    for kv in &args.sets {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| usage(e.to_string()))?;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let signatures = match args.signatures {
        Sigs::Bloom => SignatureMode::Bloom,
        Sigs::Exact => SignatureMode::Exact,
    };
    Ok((cfg, SimOptions { signatures, mutation: None }))
}

fn run_check(a: CheckArgs) -> Result<(), Failure> {
    let protocol = CheckProtocol::parse(&a.protocol)
        .ok_or_else(|| usage(format!("unknown protocol `{}` (known: neat-base, neat-pi, neat-full, mesi)", a.protocol)))?;
    let mut req = CheckRequest::new(protocol, a.lines, a.bytes);
    req.mutation = parse_mutation(a.mutate.as_deref())?;
    req.si_waits_putacks = a.si_waits_putacks;
    req.strict_empty_episode = a.strict_empty_episode;
    req.options.drf_filter = !a.no_drf_filter;
    req.options.workers = a.workers;
    req.options.max_violations = a.max_violations;
    if let Some(m) = a.max_states {
        req.options.max_states = m;
    }
    let report = check(&req).map_err(|e| usage(e.to_string()))?;
    println!("{}", report.summary());
    print!("{}", report.to_kv());
    print!("{}", report.render_violations());
    if let Some(p) = &a.report {
        write(p, &report.to_kv())?;
    }
    if report.violations.is_empty() {
        Ok(())
    } else {
        Err(Failure(2, format!("{} violation(s) found", report.violations.len())))
    }
}

fn run_sim(a: SimArgs) -> Result<(), Failure> {
    let protocol = sim_protocol(&a.protocol)?;
    let (cfg, mut opts) = machine(&a.machine)?;
    opts.mutation = parse_mutation(a.mutate.as_deref())?;
    if opts.mutation.is_some() && protocol.neat_variant().is_none() {
        return Err(usage("--mutate applies to the neat protocols only"));
    }
    let trace = Trace::parse(&read(&a.trace)?).map_err(|e| usage(format!("{}: {e}", a.trace.display())))?;
    let stats = run_simulation(&trace, protocol, &cfg, &opts).map_err(sim_failure)?;
    println!("{stats}");
    if let Some(p) = &a.csv {
        let name = a.trace.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        write(p, &format!("{CSV_HEADER}\n{}\n", stats.csv_row(&name, 0)))?;
    }
    Ok(())
}

fn run_gen(a: GenArgs) -> Result<(), Failure> {
    if a.list {
        for k in WorkloadKind::ALL {
            let d = WorkloadSpec::new(k);
            println!("{k}");
            println!("    {}", k.describe());
            println!(
                "    defaults: cores={} iterations={} lines={} nops={}",
                d.cores, d.iterations, d.lines, d.nops
            );
        }
        return Ok(());
    }
    let name = a.workload.expect("required by clap");
    let kind = WorkloadKind::parse(&name).ok_or_else(|| usage(format!("unknown workload `{name}`; see gen --list")))?;
    let mut spec = WorkloadSpec::new(kind);
    spec.seed = a.seed;
    spec.line_size = a.line_size;
    spec.cores = a.cores.unwrap_or(spec.cores);
    spec.iterations = a.iterations.unwrap_or(spec.iterations);
    spec.lines = a.lines.unwrap_or(spec.lines);
    spec.nops = a.nops.unwrap_or(spec.nops);
    let trace = generate(&spec).map_err(|e| usage(e.to_string()))?;
    verify_drf(&trace).map_err(|r| Failure(3, format!("generated trace is racy: {r}")))?;
    let out = a.out.expect("required by clap");
    write(&out, &trace.to_text())?;
    eprintln!("wrote {} events for {} cores to {}", trace.events(), spec.cores, out.display());
    Ok(())
}

fn run_sweep(a: SweepArgs) -> Result<(), Failure> {
    let protocols = if a.protocols.is_empty() {
        SimProtocol::ALL.to_vec()
    } else {
        a.protocols.iter().map(|p| sim_protocol(p.trim())).collect::<Result<_, _>>()?
    };
    let kinds = if a.workloads.is_empty() {
        WorkloadKind::ALL.to_vec()
    } else {
        a.workloads
            .iter()
            .map(|w| WorkloadKind::parse(w.trim()).ok_or_else(|| usage(format!("unknown workload `{w}`"))))
            .collect::<Result<_, _>>()?
    };
    let specs: Vec<WorkloadSpec> = kinds
        .into_iter()
        .map(|k| {
            let mut s = WorkloadSpec::new(k);
            s.seed = a.seed;
            s.cores = a.cores.unwrap_or(s.cores);
            s.iterations = a.iterations.unwrap_or(s.iterations);
            s
        })
        .collect();
    let (cfg, opts) = machine(&a.machine)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(a.workers).build().map_err(|e| usage(e.to_string()))?;
    let rows = pool.install(|| sweep(&specs, &protocols, &cfg, &opts)).map_err(sim_failure)?;
    let csv = to_csv(&rows);
    match &a.csv {
        Some(p) => {
            write(p, &csv)?;
            for r in &rows {
                eprintln!("{:<17} {:<11} max_cycles={}", r.workload.kind.name(), r.protocol.name(), r.stats.max_cycles());
            }
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Check(a) => run_check(a),
        Cmd::Sim(a) => run_sim(a),
        Cmd::Gen(a) => run_gen(a),
        Cmd::Sweep(a) => run_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("neatsim: {msg}");
            ExitCode::from(code)
        }
    }
}
