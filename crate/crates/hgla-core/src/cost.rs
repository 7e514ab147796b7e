//! Attention-map cost accounting.
//!
//! The analytic model prices an `N`-token attention at `N^2 * D` map cost
//! and evaluates each branch of the decomposition in exact integer
//! arithmetic. Instrumented counters track the matrix multiplies the
//! implementation actually performs (multiply-add = 2 FLOPs), with the
//! attention-map products (`Q Kᵀ` and `A V`) bucketed separately from
//! projections and feed-forward work, so the counted map FLOPs relate to the
//! analytic cost by an exact factor of 4: two map matmuls, 2 FLOPs per
//! multiply-add.

use core::cell::Cell;
use core::fmt;

use crate::block::{
    global_branch_ctx, hierarchical_branch_ctx, local_branch_ctx, BlockConfig, BlockParams,
    ForwardCtx,
};
use crate::error::invalid;
use crate::latent::VideoLatent;
use crate::Result;

/// Attention flavor being priced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Full,
    Local,
    Global,
    Hierarchical,
}

impl Branch {
    pub const ALL: [Branch; 4] = [
        Branch::Full,
        Branch::Local,
        Branch::Global,
        Branch::Hierarchical,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Branch::Full => "full",
            Branch::Local => "local",
            Branch::Global => "global",
            Branch::Hierarchical => "hierarchical",
        }
    }
}

/// Analytic attention-map cost of one branch, exact integers.
///
/// With `q = T*H*W / K^2` tokens per unit: full `= (T*H*W)^2 * D`, local
/// `= K^2 * q^2 * D`, global `= q^2 * D`, hierarchical `= (K/2)^2 * q^2 * D`.
/// Requires `K | H` and `K | W`; the hierarchical branch additionally
/// requires `K` even.
pub fn analytic_map_cost(
    t: usize,
    h: usize,
    w: usize,
    d: usize,
    k: usize,
    branch: Branch,
) -> Result<u128> {
    if k == 0 {
        return Err(invalid!("K must be >= 1, got 0"));
    }
    if !h.is_multiple_of(k) || !w.is_multiple_of(k) {
        return Err(invalid!(
            "analytic mode needs exact division: K = {k} must divide H = {h} and W = {w}"
        ));
    }
    if branch == Branch::Hierarchical && !k.is_multiple_of(2) {
        return Err(invalid!(
            "hierarchical analytic cost needs an even K, got {k}"
        ));
    }
    let tokens = (t as u128) * (h as u128) * (w as u128);
    let d = d as u128;
    let k2 = (k as u128) * (k as u128);
    let per_window = tokens / k2; // exact: K | H and K | W
    Ok(match branch {
        Branch::Full => tokens * tokens * d,
        Branch::Local => k2 * per_window * per_window * d,
        Branch::Global => per_window * per_window * d,
        Branch::Hierarchical => {
            let half = (k as u128 / 2) * (k as u128 / 2);
            half * per_window * per_window * d
        }
    })
}

/// Sum of the three decomposed branches.
pub fn analytic_total(t: usize, h: usize, w: usize, d: usize, k: usize) -> Result<u128> {
    if !k.is_multiple_of(2) {
        return Err(invalid!("analytic totals need an even K, got {k}"));
    }
    Ok(analytic_map_cost(t, h, w, d, k, Branch::Local)?
        + analytic_map_cost(t, h, w, d, k, Branch::Global)?
        + analytic_map_cost(t, h, w, d, k, Branch::Hierarchical)?)
}

/// Exact nonnegative rational, kept in lowest terms.
#[derive(Debug, Clone, Copy, Eq)]
pub struct Rational {
    num: u128,
    den: u128,
}

impl Rational {
    pub fn new(num: u128, den: u128) -> Result<Self> {
        if den == 0 {
            return Err(invalid!("rational denominator must be nonzero"));
        }
        if num == 0 {
            return Ok(Self { num: 0, den: 1 });
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn numerator(&self) -> u128 {
        self.num
    }

    pub fn denominator(&self) -> u128 {
        self.den
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl PartialEq for Rational {
    fn eq(&self, other: &Self) -> bool {
        self.num == other.num && self.den == other.den
    }
}

impl PartialOrd for Rational {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Rational {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Closed-form speedup of the decomposition over full attention:
/// `4 K^4 / (5 K^2 + 4)`.
pub fn speedup(k: usize) -> Result<Rational> {
    if k < 1 {
        return Err(invalid!("K must be >= 1, got {k}"));
    }
    let k = k as u128;
    Rational::new(4 * k * k * k * k, 5 * k * k + 4)
}

/// Matrix-multiply FLOP accumulator for one evaluation context. Interior
/// mutability keeps the forward-pass signatures immutable; the counter is
/// deliberately not `Sync`, so counted runs stay single-threaded.
#[derive(Debug, Default)]
pub struct FlopCounter {
    map: Cell<u64>,
    proj: Cell<u64>,
    ffn: Cell<u64>,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_map(&self, flops: u64) {
        self.map.set(self.map.get() + flops);
    }

    pub fn add_proj(&self, flops: u64) {
        self.proj.set(self.proj.get() + flops);
    }

    pub fn add_ffn(&self, flops: u64) {
        self.ffn.set(self.ffn.get() + flops);
    }

    pub fn snapshot(&self) -> FlopBreakdown {
        FlopBreakdown {
            map: self.map.get(),
            proj: self.proj.get(),
            ffn: self.ffn.get(),
        }
    }
}

/// Counted matrix-multiply FLOPs of one forward computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlopBreakdown {
    /// Attention-map products: scores and their application to values.
    pub map: u64,
    /// Q/K/V/O projections.
    pub proj: u64,
    /// Feed-forward matmuls.
    pub ffn: u64,
}

impl FlopBreakdown {
    pub fn total(&self) -> u64 {
        self.map + self.proj + self.ffn
    }
}

/// Per-branch counted FLOPs for one block forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountedFlops {
    pub local: FlopBreakdown,
    pub global: FlopBreakdown,
    pub hierarchical: FlopBreakdown,
}

impl CountedFlops {
    pub fn map_total(&self) -> u64 {
        self.local.map + self.global.map + self.hierarchical.map
    }

    pub fn total(&self) -> u64 {
        self.local.total() + self.global.total() + self.hierarchical.total()
    }

    pub fn branch(&self, branch: Branch) -> Option<FlopBreakdown> {
        match branch {
            Branch::Local => Some(self.local),
            Branch::Global => Some(self.global),
            Branch::Hierarchical => Some(self.hierarchical),
            Branch::Full => None,
        }
    }
}

/// Runs each branch of one block forward with instrumented counters and
/// returns the per-branch matmul FLOPs. Counted runs execute serially.
pub fn counted_flops(
    z: &VideoLatent,
    cfg: &BlockConfig,
    params: &BlockParams,
) -> Result<CountedFlops> {
    let run = |f: &dyn Fn(&ForwardCtx<'_>) -> Result<VideoLatent>| -> Result<FlopBreakdown> {
        let counter = FlopCounter::new();
        f(&ForwardCtx::counted(&counter))?;
        Ok(counter.snapshot())
    };
    Ok(CountedFlops {
        local: run(&|ctx| local_branch_ctx(z, cfg, params, ctx))?,
        global: run(&|ctx| global_branch_ctx(z, cfg, params, ctx))?,
        hierarchical: run(&|ctx| hierarchical_branch_ctx(z, cfg, params, ctx))?,
    })
}

/// Exact-ratio check used by verification: `full * b == decomposed * a`
/// decides whether `full / decomposed` equals `a / b` as rationals.
pub fn ratio_equals(full: u64, decomposed: u64, expect: Rational) -> bool {
    if decomposed == 0 {
        return false;
    }
    (full as u128) * expect.denominator() == (decomposed as u128) * expect.numerator()
}
