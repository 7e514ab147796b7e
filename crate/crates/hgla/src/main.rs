//! Command-line entry point: verification, oracle equivalence, cost tables,
//! benchmarking, the detail-loss metric and demo forward passes.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or environment
//! error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use hgla::bench::{bench, BenchError, CostReport};
use hgla::config::RunConfig;
use hgla::exec::ThreadsExecutor;
use hgla::io::{read_tensor, write_tensor};
use hgla::report::{fmt_sig6, CostRow, CSV_HEADER};
use hgla::verify::run_verification;

use hgla_core::block::{model_forward_ctx, BlockParams, ForwardCtx, ModelLayer};
use hgla_core::cost::{
    analytic_map_cost, analytic_total, counted_flops, speedup, Branch, FlopCounter,
};
use hgla_core::metrics::hd_mse;
use hgla_core::oracle::{
    assert_degenerate_equivalence, full_attention_counted, ORACLE_TOKEN_LIMIT,
};
use hgla_core::rng::SplitMix64;
use hgla_core::{random_latent, VideoLatent};

#[derive(Parser)]
#[command(
    name = "hgla",
    about = "Hierarchical global-local window attention over video latents",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; explicit flags override file values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Emit machine-readable JSON instead of text where supported.
    #[arg(long, global = true)]
    json: bool,

    /// Seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Tolerance override.
    #[arg(long, global = true)]
    tolerance: Option<f64>,

    /// Timed repeats for bench (first run is warm-up).
    #[arg(long, global = true)]
    repeats: Option<usize>,

    /// Worker threads for window-level parallelism; never changes numerics.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output path (tensor file for demo, CSV for flops/bench).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Sweep specification for flops, e.g. `K=1..8`.
    #[arg(long, global = true, value_name = "SPEC")]
    sweep: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the invariant suite and print one pass/fail line per check.
    Verify {
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Compare the degenerate block against the full-attention oracle.
    Equiv,
    /// Emit the analytic/counted cost table as CSV.
    Flops,
    /// Measure wall-clock medians of the decomposed block vs full attention.
    Bench,
    /// Detail-loss metric of a tensor file.
    Hdmse {
        /// Input tensor in the UGT1 format with dims (B, T, H, W, C).
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// Metric name; only hd-mse is computable without pretrained nets.
        #[arg(long, default_value = "hd-mse")]
        metric: String,
    },
    /// Random-init model forward on a random latent; writes a tensor file.
    Demo,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

/// Usage/environment failures; rendered to stderr with exit code 2.
type UsageError = String;

fn load_config(cli: &Cli) -> Result<RunConfig, UsageError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path).map_err(|e| e.to_string())?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(tolerance) = cli.tolerance {
        cfg.tolerance = tolerance;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode, UsageError> {
    match &cli.command {
        Command::Verify { inject_fault } => cmd_verify(&cli, *inject_fault),
        Command::Equiv => cmd_equiv(&cli),
        Command::Flops => cmd_flops(&cli),
        Command::Bench => cmd_bench(&cli),
        Command::Hdmse { input, metric } => cmd_hdmse(&cli, input, metric),
        Command::Demo => cmd_demo(&cli),
    }
}

fn cmd_verify(cli: &Cli, inject_fault: bool) -> Result<ExitCode, UsageError> {
    let checks = run_verification(inject_fault);
    let all_pass = checks.iter().all(|c| c.pass);
    if cli.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&checks).map_err(|e| e.to_string())?
        );
    } else {
        for check in &checks {
            let status = if check.pass { "PASS" } else { "FAIL" };
            println!("{status}  {:<32} {}", check.name, check.detail);
        }
        println!(
            "{} of {} checks passed",
            checks.iter().filter(|c| c.pass).count(),
            checks.len()
        );
    }
    Ok(if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

#[derive(Serialize)]
struct EquivJson {
    description: String,
    max_abs_diff: f64,
    max_rel_diff: f64,
    tolerance: f64,
    pass: bool,
}

fn cmd_equiv(cli: &Cli) -> Result<ExitCode, UsageError> {
    let cfg = load_config(cli)?;
    cfg.validate().map_err(|e| e.to_string())?;
    let tokens = cfg.t * cfg.h * cfg.w;
    if tokens > ORACLE_TOKEN_LIMIT {
        return Err(format!(
            "resource limit: {tokens} tokens exceed the oracle guard of {ORACLE_TOKEN_LIMIT}"
        ));
    }
    let dims = [1, cfg.t, cfg.h, cfg.w, cfg.d];
    let report =
        assert_degenerate_equivalence(cfg.seed, dims, cfg.tolerance).map_err(|e| e.to_string())?;
    if cli.json {
        let json = EquivJson {
            description: report.description.clone(),
            max_abs_diff: report.max_abs_diff,
            max_rel_diff: report.max_rel_diff,
            tolerance: report.tolerance,
            pass: report.pass,
        };
        println!(
            "{}",
            serde_json::to_string_pretty(&json).map_err(|e| e.to_string())?
        );
    } else {
        println!("{}", report.description);
        println!("max abs diff: {}", fmt_sig6(report.max_abs_diff));
        println!("max rel diff: {}", fmt_sig6(report.max_rel_diff));
        println!(
            "{} (tolerance {})",
            if report.pass { "PASS" } else { "FAIL" },
            fmt_sig6(report.tolerance)
        );
    }
    Ok(if report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

/// Parses `K=a..b` (inclusive).
fn parse_sweep(spec: &str) -> Result<(usize, usize), UsageError> {
    let rest = spec
        .strip_prefix("K=")
        .or_else(|| spec.strip_prefix("k="))
        .ok_or_else(|| format!("sweep spec must look like K=1..8, got '{spec}'"))?;
    let (lo, hi) = rest
        .split_once("..")
        .ok_or_else(|| format!("sweep spec must look like K=1..8, got '{spec}'"))?;
    let lo: usize = lo
        .parse()
        .map_err(|_| format!("bad sweep lower bound '{lo}'"))?;
    let hi: usize = hi
        .parse()
        .map_err(|_| format!("bad sweep upper bound '{hi}'"))?;
    if lo < 1 || hi < lo {
        return Err(format!(
            "sweep bounds must satisfy 1 <= lo <= hi, got {lo}..{hi}"
        ));
    }
    Ok((lo, hi))
}

/// Rows for one `(config, K)`: full, local, global, hierarchical, then the
/// decomposed total. Cells whose formula does not apply stay empty; the
/// closed-form speedup lands on the total row.
fn analytic_rows(cfg: &RunConfig, k: usize) -> Result<Vec<CostRow>, UsageError> {
    if !cfg.h.is_multiple_of(k) || !cfg.w.is_multiple_of(k) {
        return Err(format!(
            "analytic mode needs exact division: K = {k} must divide H = {} and W = {}",
            cfg.h, cfg.w
        ));
    }
    let (t, h, w, d) = (cfg.t, cfg.h, cfg.w, cfg.d);
    let base = CostRow {
        t,
        h,
        w,
        d,
        k,
        ..CostRow::default()
    };
    let mut rows = Vec::new();
    for branch in Branch::ALL {
        rows.push(CostRow {
            branch: branch.name(),
            analytic_map: analytic_map_cost(t, h, w, d, k, branch).ok(),
            ..base.clone()
        });
    }
    rows.push(CostRow {
        branch: "total",
        analytic_map: analytic_total(t, h, w, d, k).ok(),
        speedup: Some(speedup(k).map_err(|e| e.to_string())?.to_f64()),
        ..base
    });
    Ok(rows)
}

fn emit_csv(rows: &[CostRow], out: &Option<PathBuf>) -> Result<(), UsageError> {
    let mut text = String::from(CSV_HEADER);
    for row in rows {
        text.push('\n');
        text.push_str(&row.to_csv());
    }
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_flops(cli: &Cli) -> Result<ExitCode, UsageError> {
    let cfg = load_config(cli)?;
    cfg.validate().map_err(|e| e.to_string())?;

    let mut rows = Vec::new();
    if let Some(spec) = &cli.sweep {
        let (lo, hi) = parse_sweep(spec)?;
        for k in lo..=hi {
            rows.extend(analytic_rows(&cfg, k)?);
        }
    } else {
        let mut base = analytic_rows(&cfg, cfg.k)?;
        let tokens = cfg.t * cfg.h * cfg.w;
        if tokens <= ORACLE_TOKEN_LIMIT {
            let block_cfg = cfg.block_config(0).map_err(|e| e.to_string())?;
            let params = BlockParams::init(&block_cfg, cfg.seed).map_err(|e| e.to_string())?;
            let z = random_latent([1, cfg.t, cfg.h, cfg.w, cfg.d], cfg.seed)
                .map_err(|e| e.to_string())?;
            let counts = counted_flops(&z, &block_cfg, &params).map_err(|e| e.to_string())?;
            let counter = FlopCounter::new();
            full_attention_counted(
                &z,
                &params.base,
                &params.norm_attn,
                &params.norm_ffn,
                Some(&counter),
            )
            .map_err(|e| e.to_string())?;
            let full = counter.snapshot();
            for row in base.iter_mut() {
                let breakdown = match row.branch {
                    "full" => Some(full),
                    "total" => None,
                    name => Branch::ALL
                        .iter()
                        .find(|b| b.name() == name)
                        .and_then(|b| counts.branch(*b)),
                };
                if let Some(b) = breakdown {
                    row.counted_map = Some(b.map);
                    row.counted_total = Some(b.total());
                }
                if row.branch == "total" {
                    row.counted_map = Some(counts.map_total());
                    row.counted_total = Some(counts.total());
                }
            }
        }
        rows = base;
    }
    emit_csv(&rows, &cli.out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(cli: &Cli) -> Result<ExitCode, UsageError> {
    let cfg = load_config(cli)?;
    let repeats = cli.repeats.unwrap_or(5);
    let report = match bench(&cfg, repeats, cfg.seed) {
        Ok(report) => report,
        Err(BenchError::Usage(msg)) => return Err(msg),
        Err(BenchError::Run(e)) => return Err(e.to_string()),
    };
    let rows = report_rows(&report);
    emit_csv(&rows, &cli.out)?;
    if !report.full_timed {
        eprintln!(
            "note: full-attention timing skipped ({} tokens exceed the bench guard)",
            report.config.t * report.config.h * report.config.w
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn report_rows(report: &CostReport) -> Vec<CostRow> {
    let cfg = &report.config;
    let base = CostRow {
        t: cfg.t,
        h: cfg.h,
        w: cfg.w,
        d: cfg.d,
        k: cfg.k,
        ..CostRow::default()
    };
    let mut rows = Vec::new();
    for &(branch, analytic) in &report.analytic {
        let counted = match branch {
            Branch::Full => report.counted_full,
            other => report.counted.as_ref().and_then(|c| c.branch(other)),
        };
        let wall_ms = match branch {
            Branch::Full => report.wall.full_ms,
            Branch::Local => Some(report.wall.local_ms),
            Branch::Global => Some(report.wall.global_ms),
            Branch::Hierarchical => Some(report.wall.hierarchical_ms),
        };
        rows.push(CostRow {
            branch: branch.name(),
            analytic_map: analytic,
            counted_map: counted.map(|c| c.map),
            counted_total: counted.map(|c| c.total()),
            wall_ms,
            speedup: if branch == Branch::Full {
                report.measured_speedup
            } else {
                None
            },
            ..base.clone()
        });
    }
    rows.push(CostRow {
        branch: "total",
        analytic_map: report.analytic_decomposed_total,
        counted_map: report.counted.as_ref().map(|c| c.map_total()),
        counted_total: report.counted.as_ref().map(|c| c.total()),
        wall_ms: Some(report.wall.block_ms),
        speedup: Some(report.analytic_speedup.to_f64()),
        ..base
    });
    rows
}

#[derive(Serialize)]
struct HdMseJson {
    per_factor: Vec<FactorJson>,
    total: f64,
}

#[derive(Serialize)]
struct FactorJson {
    factor: usize,
    mse: f64,
}

fn cmd_hdmse(cli: &Cli, input: &Path, metric: &str) -> Result<ExitCode, UsageError> {
    if metric != "hd-mse" {
        return Err(format!(
            "unsupported metric '{metric}': hd-fvd and hd-lpips need pretrained video/perceptual \
             encoders and are not computable here; only hd-mse is supported"
        ));
    }
    let z: VideoLatent = read_tensor(input).map_err(|e| e.to_string())?;
    let result = hd_mse(&z).map_err(|e| e.to_string())?;
    if cli.json {
        let json = HdMseJson {
            per_factor: result
                .per_factor
                .iter()
                .map(|&(factor, mse)| FactorJson { factor, mse })
                .collect(),
            total: result.total,
        };
        println!(
            "{}",
            serde_json::to_string_pretty(&json).map_err(|e| e.to_string())?
        );
    } else {
        for &(factor, mse) in &result.per_factor {
            println!("factor {factor}: {}", fmt_sig6(mse));
        }
        println!("total: {}", fmt_sig6(result.total));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_demo(cli: &Cli) -> Result<ExitCode, UsageError> {
    let cfg = load_config(cli)?;
    cfg.validate().map_err(|e| e.to_string())?;
    let out = cli
        .out
        .as_ref()
        .ok_or_else(|| "demo needs --out PATH for the output tensor".to_string())?;

    // Layer parameters derive from one root stream, so a (config, seed) pair
    // fixes every byte of the output.
    let root = SplitMix64::new(cfg.seed);
    let mut layers = Vec::with_capacity(cfg.layers);
    for i in 0..cfg.layers {
        let block_cfg = cfg.block_config(i).map_err(|e| e.to_string())?;
        let layer_seed = root.derive(100 + i as u64).next_u64();
        let params = BlockParams::random(&block_cfg, layer_seed).map_err(|e| e.to_string())?;
        layers.push(ModelLayer {
            cfg: block_cfg,
            params,
        });
    }
    let z = random_latent([1, cfg.t, cfg.h, cfg.w, cfg.d], cfg.seed).map_err(|e| e.to_string())?;

    let threads = cli.threads.unwrap_or(1);
    let exec = ThreadsExecutor::new(threads);
    let ctx = ForwardCtx::with_executor(&exec);
    let result = model_forward_ctx(&z, cfg.timestep, &layers, &ctx).map_err(|e| e.to_string())?;
    write_tensor(out, &result).map_err(|e| e.to_string())?;
    eprintln!(
        "wrote {} ({:?}, {} layers, seed {})",
        out.display(),
        result.dims(),
        cfg.layers,
        cfg.seed
    );
    Ok(ExitCode::SUCCESS)
}
