//! `hmmu`: run the hybrid-memory simulator over traces or synthetic
//! workloads, sweep a parameter, or price the HMMU metadata.

mod output;
mod plan;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hmmu::config::DEFAULT_CACHE_ZONE_BYTES;
use hmmu::meter::{metadata_cost, MetadataGeometry};
use hmmu::{format_size, parse_size, PolicyKind, RecencyMode, SimConfig, WorkloadKind};

use crate::output::Format;
use crate::plan::{RunPlan, Sweep, TraceSource};

#[derive(Parser)]
#[command(
    name = "hmmu",
    version,
    about = "Hybrid DRAM/NVM memory management unit simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more policies over a trace.
    Run(RunArgs),
    /// Run every policy at every value of one configuration parameter.
    Sweep(RunArgs),
    /// Print the page-table and cache-zone metadata cost.
    Metacost(MetacostArgs),
    /// Write a synthetic trace to a file.
    Gen(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Sequential,
    Strided,
    Zipfian,
    SparseWide,
    StreamingStore,
}

#[derive(Args, Clone)]
struct WorkloadArgs {
    /// Synthetic workload to generate instead of reading a trace.
    #[arg(long = "gen", value_enum)]
    gen: Option<GenKind>,
    /// Footprint of the generated workload, in pages.
    #[arg(long, default_value_t = 4096)]
    pages: u64,
    #[arg(long, default_value_t = 1_000_000)]
    requests: u64,
    /// First byte of the footprint [default: fast memory capacity, so the
    /// workload starts out in slow memory].
    #[arg(long, value_parser = parse_size)]
    base: Option<u64>,
    #[arg(long, default_value_t = 0.3)]
    write_fraction: f64,
    #[arg(long, default_value_t = 64)]
    request_size: u32,
    /// Byte stride for `strided` [default: one page plus one block].
    #[arg(long, value_parser = parse_size)]
    stride: Option<u64>,
    /// Zipf exponent for `zipfian`.
    #[arg(long, default_value_t = 0.99)]
    zipf_s: f64,
    /// Workload generator seed [default: the simulator seed].
    #[arg(long)]
    gen_seed: Option<u64>,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// `key = value` configuration file applied before other flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_size)]
    fast_size: Option<u64>,
    #[arg(long, value_parser = parse_size)]
    slow_size: Option<u64>,
    #[arg(long, value_parser = parse_size)]
    page_size: Option<u64>,
    #[arg(long, value_parser = parse_size)]
    block_size: Option<u64>,
    /// Cache zone for the combined policies [default: 16MiB].
    #[arg(long, value_parser = parse_size)]
    cache_size: Option<u64>,
    #[arg(long)]
    threshold: Option<u32>,
    /// Promotions per adaptation window for adpcomb (0 disables adaptation).
    #[arg(long)]
    adaptive: Option<u32>,
    #[arg(long)]
    bloom_window: Option<u32>,
    /// Use an exact recency queue instead of the bloom filter.
    #[arg(long)]
    exact_recency: bool,
    /// DMA bandwidth in bytes per ns.
    #[arg(long)]
    dma_bw: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Any other configuration key, as KEY=VALUE. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Trace file (plain or gzip).
    #[arg(long, conflicts_with = "gen")]
    trace: Option<PathBuf>,
    #[command(flatten)]
    workload: WorkloadArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated policies.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "alldram,static,pagemove,statcomb,adpcomb"
    )]
    policy: Vec<PolicyKind>,
    /// Configuration key to sweep.
    #[arg(long, requires = "values")]
    param: Option<String>,
    /// Comma-separated values for `--param`.
    #[arg(long, value_delimiter = ',', requires = "param")]
    values: Vec<String>,
    /// Report file [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct MetacostArgs {
    /// Address space covered by the page table.
    #[arg(long, value_parser = parse_size, default_value = "2GiB")]
    space: u64,
    #[arg(long, value_parser = parse_size, default_value = "4KiB")]
    page: u64,
    #[arg(long, value_parser = parse_size, default_value = "128")]
    block: u64,
    /// Cache-zone sets.
    #[arg(long, default_value_t = 1 << 16)]
    sets: u64,
    /// Statistics bits per page-table entry.
    #[arg(long, default_value_t = 5)]
    stat_bits: u32,
    /// Tag bits per cache way.
    #[arg(long, default_value_t = 8)]
    tag_bits: u32,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

fn base_config(a: &ConfigArgs) -> Result<(SimConfig, u64)> {
    let mut cfg = match &a.config {
        Some(p) => SimConfig::from_file(p)?,
        None => SimConfig::default(),
    };
    let file_zone = cfg.cache_zone_bytes;
    macro_rules! apply {
        ($($flag:ident => $field:expr),* $(,)?) => {
            $(if let Some(v) = a.$flag { $field = v; })*
        };
    }
    apply! {
        fast_size => cfg.fast_capacity_bytes,
        slow_size => cfg.slow_capacity_bytes,
        page_size => cfg.page_size_bytes,
        block_size => cfg.block_size_bytes,
        threshold => cfg.promotion_threshold,
        adaptive => cfg.adaptive.window_pages,
        bloom_window => cfg.bloom_window,
        dma_bw => cfg.dma_bandwidth_bytes_per_ns,
        seed => cfg.rng_seed,
    }
    if a.exact_recency {
        cfg.recency = RecencyMode::Exact;
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        cfg.set(k, v)?;
    }
    let zone = a.cache_size.unwrap_or(if file_zone > 0 {
        file_zone
    } else {
        DEFAULT_CACHE_ZONE_BYTES
    });
    Ok((cfg, zone))
}

fn workload_kind(w: &WorkloadArgs, cfg: &SimConfig) -> Option<WorkloadKind> {
    Some(match w.gen? {
        GenKind::Sequential => WorkloadKind::Sequential,
        GenKind::Strided => WorkloadKind::Strided {
            stride: w
                .stride
                .unwrap_or(cfg.page_size_bytes + cfg.block_size_bytes),
        },
        GenKind::Zipfian => WorkloadKind::Zipfian { s: w.zipf_s },
        GenKind::SparseWide => WorkloadKind::SparseWide,
        GenKind::StreamingStore => WorkloadKind::StreamingStore,
    })
}

fn trace_source(trace: Option<PathBuf>, w: &WorkloadArgs, cfg: &SimConfig) -> Result<TraceSource> {
    if let Some(path) = trace {
        return Ok(TraceSource::File(path));
    }
    let Some(kind) = workload_kind(w, cfg) else {
        bail!("give either --trace FILE or --gen KIND");
    };
    Ok(TraceSource::Generated {
        kind,
        pages: w.pages,
        requests: w.requests,
        base: w.base,
        write_fraction: w.write_fraction,
        request_bytes: w.request_size,
        seed: w.gen_seed,
    })
}

fn cmd_run(args: RunArgs, require_sweep: bool) -> Result<bool> {
    if require_sweep && args.param.is_none() {
        bail!("sweep needs --param NAME --values V1,V2,...");
    }
    if args.policy.is_empty() {
        bail!("--policy needs at least one policy");
    }
    let (base, cache_zone) = base_config(&args.config)?;
    let source = trace_source(args.trace, &args.workload, &base)?;
    let plan = RunPlan {
        base,
        cache_zone,
        source,
        policies: args.policy,
        sweep: args.param.map(|param| Sweep {
            param,
            values: args.values,
        }),
    };
    let doc = plan.execute()?;
    let ok = doc.all_ok();
    output::emit(&doc, args.out.as_deref(), args.format)?;
    Ok(ok)
}

fn cmd_metacost(a: MetacostArgs) -> Result<()> {
    let g = MetadataGeometry {
        space_bytes: a.space,
        page_bytes: a.page,
        block_bytes: a.block,
        sets: a.sets,
        stat_bits: a.stat_bits,
        tag_bits: a.tag_bits,
    };
    let r = metadata_cost(&g)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&r)?);
        return Ok(());
    }
    println!(
        "page table:  {} bits/entry, {} bytes/entry, {} total ({} entries)",
        r.bits_per_page_entry,
        r.bytes_per_page_entry,
        format_size(r.total_page_table_bytes),
        r.entries
    );
    println!(
        "cache zone:  {} bits/set, ≈{} total ({} sets)",
        r.bits_per_cache_set,
        format_size(r.total_cache_meta_bytes),
        r.sets
    );
    let f = r.functional;
    println!(
        "functional:  {} bits/entry, {} bytes/entry, {} total; {}-bit tags, {} bits/set, ≈{} total",
        f.bits_per_page_entry,
        f.bytes_per_page_entry,
        format_size(f.total_page_table_bytes),
        f.tag_bits,
        f.bits_per_cache_set,
        format_size(f.total_cache_meta_bytes)
    );
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let (base, cache_zone) = base_config(&a.config)?;
    let source = trace_source(None, &a.workload, &base)?;
    let plan = RunPlan {
        base,
        cache_zone,
        source,
        policies: PolicyKind::ALL.to_vec(),
        sweep: None,
    };
    let trace = plan.trace_for(&plan.base)?;
    output::write_atomically(&a.out, |w| Ok(hmmu::trace::write_trace(w, &trace)?))?;
    eprintln!("wrote {} requests to {}", trace.len(), a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a, false),
        Command::Sweep(a) => cmd_run(a, true),
        Command::Metacost(a) => cmd_metacost(a).map(|()| true),
        Command::Gen(a) => cmd_gen(a).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("hmmu: some runs failed; see the report");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("hmmu: {e:#}");
            ExitCode::from(2)
        }
    }
}
