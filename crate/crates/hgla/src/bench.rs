//! Wall-clock benchmarking of the decomposed block against full attention.

use std::fmt;
use std::time::Instant;

use hgla_core::block::{
    block_forward, global_branch, hierarchical_branch, local_branch, BlockParams,
};
use hgla_core::cost::{
    analytic_map_cost, analytic_total, counted_flops, speedup, Branch, CountedFlops, FlopBreakdown,
    FlopCounter, Rational,
};
use hgla_core::oracle::{full_attention_counted, full_attention_unguarded, ORACLE_TOKEN_LIMIT};
use hgla_core::{random_latent, Error};

use crate::config::RunConfig;

/// Timing full attention beyond this many tokens is skipped (and flagged);
/// memory stays linear but a run would take hours.
pub const BENCH_TOKEN_LIMIT: usize = 1 << 18;

/// Counted instrumentation is skipped above this size to keep `bench` from
/// doubling its runtime; the analytic model still covers the config.
const COUNT_TOKEN_LIMIT: usize = 1 << 14;

/// Medians of one benchmark run, in milliseconds.
#[derive(Debug, Clone, Default)]
pub struct WallTimes {
    pub local_ms: f64,
    pub hierarchical_ms: f64,
    pub global_ms: f64,
    pub block_ms: f64,
    pub full_ms: Option<f64>,
}

/// Analytic costs, counted FLOPs and wall-clock medians for one config.
#[derive(Debug, Clone)]
pub struct CostReport {
    pub config: RunConfig,
    /// Exact analytic map cost per branch; `None` where the formula does not
    /// apply to the config.
    pub analytic: Vec<(Branch, Option<u128>)>,
    pub analytic_decomposed_total: Option<u128>,
    pub counted: Option<CountedFlops>,
    pub counted_full: Option<FlopBreakdown>,
    pub wall: WallTimes,
    pub analytic_speedup: Rational,
    /// Measured full time over measured block time, when full was timed.
    pub measured_speedup: Option<f64>,
    /// False when the full-attention timing was skipped by the size guard.
    pub full_timed: bool,
}

#[derive(Debug)]
pub enum BenchError {
    /// Bad arguments (repeats, config).
    Usage(String),
    /// Forward-pass failure.
    Run(Error),
}

impl fmt::Display for BenchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchError::Usage(msg) => write!(f, "{msg}"),
            BenchError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for BenchError {}

impl From<Error> for BenchError {
    fn from(e: Error) -> Self {
        BenchError::Run(e)
    }
}

/// Median of `repeats` timed executions of `f`, discarding the first run as
/// warm-up. Returns milliseconds.
fn median_ms<T>(repeats: usize, mut f: impl FnMut() -> T) -> f64 {
    let mut samples = Vec::with_capacity(repeats.saturating_sub(1));
    for run in 0..repeats {
        let start = Instant::now();
        let out = f();
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        drop(out);
        if run > 0 {
            samples.push(elapsed);
        }
    }
    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let mid = samples.len() / 2;
    if samples.len() % 2 == 1 {
        samples[mid]
    } else {
        (samples[mid - 1] + samples[mid]) / 2.0
    }
}

/// Runs the benchmark: numeric outputs are deterministic in `(config, seed)`;
/// timings are environment measurements and excluded from any determinism
/// guarantee.
pub fn bench(config: &RunConfig, repeats: usize, seed: u64) -> Result<CostReport, BenchError> {
    if repeats < 3 {
        return Err(BenchError::Usage(format!(
            "repeats must be >= 3, got {repeats}"
        )));
    }
    config
        .validate()
        .map_err(|e| BenchError::Usage(e.to_string()))?;
    let cfg = config
        .block_config(0)
        .map_err(|e| BenchError::Usage(e.to_string()))?;
    let params = BlockParams::init(&cfg, seed)?;
    let z = random_latent([1, config.t, config.h, config.w, config.d], seed)?;
    let tokens = config.t * config.h * config.w;

    let (t, h, w, d, k) = (config.t, config.h, config.w, config.d, config.k);
    let exact = h % k == 0 && w % k == 0;
    let analytic: Vec<(Branch, Option<u128>)> = Branch::ALL
        .iter()
        .map(|&b| (b, analytic_map_cost(t, h, w, d, k, b).ok()))
        .collect();
    let analytic_decomposed_total = if exact {
        analytic_total(t, h, w, d, k).ok()
    } else {
        None
    };

    let (counted, counted_full) = if tokens <= COUNT_TOKEN_LIMIT {
        let counts = counted_flops(&z, &cfg, &params)?;
        let full = if tokens <= ORACLE_TOKEN_LIMIT {
            let counter = FlopCounter::new();
            full_attention_counted(
                &z,
                &params.base,
                &params.norm_attn,
                &params.norm_ffn,
                Some(&counter),
            )?;
            Some(counter.snapshot())
        } else {
            None
        };
        (Some(counts), full)
    } else {
        (None, None)
    };

    let mut wall = WallTimes {
        local_ms: median_ms(repeats, || {
            local_branch(&z, &cfg, &params).expect("validated")
        }),
        hierarchical_ms: median_ms(repeats, || {
            hierarchical_branch(&z, &cfg, &params).expect("validated")
        }),
        global_ms: median_ms(repeats, || {
            global_branch(&z, &cfg, &params).expect("validated")
        }),
        block_ms: median_ms(repeats, || {
            block_forward(&z, config.timestep, &cfg, &params).expect("validated")
        }),
        full_ms: None,
    };

    let full_timed = tokens <= BENCH_TOKEN_LIMIT;
    if full_timed {
        wall.full_ms = Some(median_ms(repeats, || {
            full_attention_unguarded(&z, &params.base, &params.norm_attn, &params.norm_ffn)
                .expect("validated")
        }));
    }

    let measured_speedup = wall.full_ms.map(|f| f / wall.block_ms);
    Ok(CostReport {
        config: config.clone(),
        analytic,
        analytic_decomposed_total,
        counted,
        counted_full,
        wall,
        analytic_speedup: speedup(k).map_err(BenchError::Run)?,
        measured_speedup,
        full_timed,
    })
}
