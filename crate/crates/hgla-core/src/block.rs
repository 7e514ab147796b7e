//! The decomposed transformer block: a cross-window local branch, a
//! hierarchical coarse-window branch, a spatially compressed global branch,
//! and two timestep-conditioned fusion gates, plus the stacked multi-layer
//! model with layer-parity window alternation.

use alloc::vec;
use alloc::vec::Vec;

use crate::attention::{apply_lora, attention_tokens, ffn_tokens, AttentionWeights, LoRAAdapter};
use crate::cost::FlopCounter;
use crate::error::{invalid, shape_err};
use crate::latent::{aggregate, make_partition, partition, VideoLatent};
use crate::ops::{
    bilinear_resample_raw, conv3d_raw, depthwise_compress_raw, layer_norm_rows, mlp_forward,
    sigmoid64, sin_encode, DepthwiseKernel2D, Kernel3D, LayerNorm, Mlp2,
};
use crate::rng::SplitMix64;
use crate::Result;

/// Static configuration of one block.
///
/// `K` is the base window count per axis; the local branch partitions into
/// `K + (layer_index mod 2)` windows per axis, the hierarchical branch into
/// `K/2 + (layer_index mod 2)` coarse windows. The global compression factor
/// equals `K` so the compressed global token count matches one local window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockConfig {
    k: usize,
    compress: usize,
    hier_compress: usize,
    rank: usize,
    dim: usize,
    dim_ff: usize,
    heads: usize,
    layer_index: usize,
}

impl BlockConfig {
    /// Standard configuration: requires `K` even and `>= 2`; the global
    /// compression factor is pinned to `K` and the hierarchical one to 2.
    pub fn new(
        k: usize,
        rank: usize,
        dim: usize,
        dim_ff: usize,
        heads: usize,
        layer_index: usize,
    ) -> Result<Self> {
        if k < 2 || !k.is_multiple_of(2) {
            return Err(invalid!("window count K must be even and >= 2, got {k}"));
        }
        Self::validate_common(rank, dim, dim_ff, heads)?;
        Ok(Self {
            k,
            compress: k,
            hier_compress: 2,
            rank,
            dim,
            dim_ff,
            heads,
            layer_index,
        })
    }

    /// Verification configuration that collapses every branch to plain full
    /// attention: one local window (`K = 1`), no global compression, no
    /// hierarchical compression. Used by the oracle equivalence harness.
    pub fn degenerate(
        rank: usize,
        dim: usize,
        dim_ff: usize,
        heads: usize,
        layer_index: usize,
    ) -> Result<Self> {
        Self::validate_common(rank, dim, dim_ff, heads)?;
        Ok(Self {
            k: 1,
            compress: 1,
            hier_compress: 1,
            rank,
            dim,
            dim_ff,
            heads,
            layer_index,
        })
    }

    fn validate_common(rank: usize, dim: usize, dim_ff: usize, heads: usize) -> Result<()> {
        if dim == 0 || dim_ff == 0 {
            return Err(invalid!("D and D_ff must be >= 1, got {dim}/{dim_ff}"));
        }
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(invalid!("heads ({heads}) must divide D ({dim})"));
        }
        if rank == 0 || rank > dim.min(dim_ff) / 4 {
            return Err(invalid!(
                "rank must satisfy 1 <= r <= min(D, D_ff)/4 = {}, got {rank}",
                dim.min(dim_ff) / 4
            ));
        }
        Ok(())
    }

    /// Same configuration at a different depth; window parity follows.
    pub fn at_layer(&self, layer_index: usize) -> Self {
        Self {
            layer_index,
            ..self.clone()
        }
    }

    /// Overrides the compression factors; verification setups use factor 1
    /// to make a branch transparent while keeping its window structure.
    pub fn with_compression(self, global: usize, hierarchical: usize) -> Result<Self> {
        if global == 0 || hierarchical == 0 {
            return Err(invalid!(
                "compression factors must be >= 1, got {global}/{hierarchical}"
            ));
        }
        Ok(Self {
            compress: global,
            hier_compress: hierarchical,
            ..self
        })
    }

    /// Local partition count per axis: `K + (layer_index mod 2)`.
    pub fn local_parts(&self) -> usize {
        self.k + self.layer_index % 2
    }

    /// Coarse partition count per axis: `K/2 + (layer_index mod 2)`; the
    /// degenerate `K = 1` configuration keeps a single coarse window.
    pub fn hier_parts(&self) -> usize {
        if self.k == 1 {
            1
        } else {
            self.k / 2 + self.layer_index % 2
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn compress(&self) -> usize {
        self.compress
    }

    pub fn hier_compress(&self) -> usize {
        self.hier_compress
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dim_ff(&self) -> usize {
        self.dim_ff
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    /// Forward passes require the spatial extents to be divisible by `2K`.
    pub fn check_input_dims(&self, z: &VideoLatent) -> Result<()> {
        let need = 2 * self.k;
        if !z.height().is_multiple_of(need) {
            return Err(invalid!(
                "height {} must be divisible by 2K = {need}",
                z.height()
            ));
        }
        if !z.width().is_multiple_of(need) {
            return Err(invalid!(
                "width {} must be divisible by 2K = {need}",
                z.width()
            ));
        }
        if z.channels() != self.dim {
            return Err(shape_err!(
                "latent has {} channels, config expects {}",
                z.channels(),
                self.dim
            ));
        }
        Ok(())
    }
}

/// Timestep-conditioned per-channel gate.
///
/// `alpha(t) = sigmoid(MLP(SinEncode(t)))` with a 256-dimensional sinusoidal
/// encoding. The sigmoid is evaluated in double precision and nudged away
/// from the closed endpoints, so every channel satisfies `0 < alpha < 1` for
/// any finite timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGate {
    mlp: Mlp2,
}

impl FusionGate {
    pub const ENCODING_DIM: usize = 256;
    const HIDDEN: usize = 128;

    pub fn new(mlp: Mlp2) -> Result<Self> {
        if mlp.dim_in != Self::ENCODING_DIM {
            return Err(invalid!(
                "fusion gate MLP must take a {}-dim encoding, got {}",
                Self::ENCODING_DIM,
                mlp.dim_in
            ));
        }
        Ok(Self { mlp })
    }

    /// Neutral gate: the final MLP layer is zero-initialized, so
    /// `alpha(t) = 0.5` exactly for every timestep.
    pub fn neutral(dim: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let scale = 1.0 / libm::sqrtf(Self::ENCODING_DIM as f32);
        let w1 = (0..Self::ENCODING_DIM * Self::HIDDEN)
            .map(|_| rng.next_f32() * scale)
            .collect();
        let mlp = Mlp2 {
            dim_in: Self::ENCODING_DIM,
            dim_hidden: Self::HIDDEN,
            dim_out: dim,
            w1,
            b1: vec![0.0; Self::HIDDEN],
            w2: vec![0.0; Self::HIDDEN * dim],
            b2: vec![0.0; dim],
        };
        Self { mlp }
    }

    /// Gate with random parameters throughout.
    pub fn random(dim: usize, seed: u64) -> Self {
        let mut gate = Self::neutral(dim, seed);
        let mut rng = SplitMix64::new(seed ^ 0x6A7E);
        let scale = 1.0 / libm::sqrtf(Self::HIDDEN as f32);
        for v in gate.mlp.w2.iter_mut() {
            *v = rng.next_f32() * scale;
        }
        for v in gate.mlp.b2.iter_mut() {
            *v = rng.next_f32() * 0.5;
        }
        gate
    }

    pub fn dim(&self) -> usize {
        self.mlp.dim_out
    }

    pub fn mlp(&self) -> &Mlp2 {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp2 {
        &mut self.mlp
    }

    /// Per-channel fusion coefficients for timestep `t`, each in `(0, 1)`.
    pub fn alpha(&self, t: f32) -> Result<Vec<f64>> {
        let enc = sin_encode(t, Self::ENCODING_DIM)?;
        let pre = mlp_forward(&enc, &self.mlp)?;
        Ok(pre
            .iter()
            .map(|&x| sigmoid64(x as f64).clamp(1e-15, 1.0 - 1e-15))
            .collect())
    }
}

/// All learned state of one block. One base weight set serves the three
/// branches; the global and hierarchical branches specialize it with their
/// low-rank adapters, and both pre-normalizations are shared.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub base: AttentionWeights,
    pub global_adapter: LoRAAdapter,
    pub hier_adapter: LoRAAdapter,
    pub global_compress: DepthwiseKernel2D,
    pub global_decompress: Kernel3D,
    pub hier_compress: DepthwiseKernel2D,
    pub hier_decompress: Kernel3D,
    pub gate_global: FusionGate,
    pub gate_local: FusionGate,
    pub norm_attn: LayerNorm,
    pub norm_ffn: LayerNorm,
}

impl BlockParams {
    /// Default initialization: random base weights, zero-residual adapters,
    /// average-pooling compression, identity decompression, neutral gates.
    /// A freshly initialized block therefore computes the same function in
    /// every branch domain.
    pub fn init(cfg: &BlockConfig, seed: u64) -> Result<Self> {
        let root = SplitMix64::new(seed);
        let sub = |stream: u64| -> u64 {
            let mut s = root.derive(stream);
            s.next_u64()
        };
        Ok(Self {
            base: AttentionWeights::random(cfg.dim, cfg.dim_ff, cfg.heads, sub(1))?,
            global_adapter: LoRAAdapter::init(cfg.dim, cfg.dim_ff, cfg.rank, sub(2))?,
            hier_adapter: LoRAAdapter::init(cfg.dim, cfg.dim_ff, cfg.rank, sub(3))?,
            global_compress: DepthwiseKernel2D::averaging(cfg.compress, cfg.dim)?,
            global_decompress: Kernel3D::identity(3, 3, 3, cfg.dim)?,
            hier_compress: DepthwiseKernel2D::averaging(cfg.hier_compress, cfg.dim)?,
            hier_decompress: Kernel3D::identity(3, 3, 3, cfg.dim)?,
            gate_global: FusionGate::neutral(cfg.dim, sub(4)),
            gate_local: FusionGate::neutral(cfg.dim, sub(5)),
            norm_attn: LayerNorm::identity(cfg.dim),
            norm_ffn: LayerNorm::identity(cfg.dim),
        })
    }

    /// Trained-looking parameters: nonzero adapter residuals, perturbed
    /// compression/decompression kernels and random gates.
    pub fn random(cfg: &BlockConfig, seed: u64) -> Result<Self> {
        let mut params = Self::init(cfg, seed)?;
        let root = SplitMix64::new(seed ^ 0x00D1_CE00);
        params.global_adapter = LoRAAdapter::random(cfg.dim, cfg.dim_ff, cfg.rank, seed ^ 0xA1)?;
        params.hier_adapter = LoRAAdapter::random(cfg.dim, cfg.dim_ff, cfg.rank, seed ^ 0xA2)?;
        let perturb_2d = |kern: &DepthwiseKernel2D, stream: u64| -> Result<DepthwiseKernel2D> {
            let mut rng = root.derive(stream);
            let w: Vec<f32> = kern
                .weights()
                .iter()
                .map(|&v| v + rng.next_f32() * 0.05)
                .collect();
            DepthwiseKernel2D::new(kern.k(), kern.channels(), w, kern.bias().to_vec())
        };
        let perturb_3d = |kern: &Kernel3D, stream: u64| -> Result<Kernel3D> {
            let mut rng = root.derive(stream);
            let (kt, kh, kw) = kern.extents();
            let w: Vec<f32> = kern
                .weights()
                .iter()
                .map(|&v| v + rng.next_f32() * 0.02)
                .collect();
            Kernel3D::new(kt, kh, kw, kern.channels(), w, kern.bias().to_vec())
        };
        params.global_compress = perturb_2d(&params.global_compress, 11)?;
        params.hier_compress = perturb_2d(&params.hier_compress, 12)?;
        params.global_decompress = perturb_3d(&params.global_decompress, 13)?;
        params.hier_decompress = perturb_3d(&params.hier_decompress, 14)?;
        params.gate_global = FusionGate::random(cfg.dim, seed ^ 0xB1);
        params.gate_local = FusionGate::random(cfg.dim, seed ^ 0xB2);
        let mut rng = root.derive(15);
        for g in params
            .norm_attn
            .gain
            .iter_mut()
            .chain(&mut params.norm_ffn.gain)
        {
            *g = 1.0 + rng.next_f32() * 0.1;
        }
        for b in params
            .norm_attn
            .bias
            .iter_mut()
            .chain(&mut params.norm_ffn.bias)
        {
            *b = rng.next_f32() * 0.1;
        }
        Ok(params)
    }

    /// Base weights and pre-norms, the parts every branch touches.
    fn check_base(&self, cfg: &BlockConfig) -> Result<()> {
        if self.base.dim() != cfg.dim
            || self.base.dim_ff() != cfg.dim_ff
            || self.base.heads() != cfg.heads
        {
            return Err(shape_err!(
                "base weights ({}x{}, {} heads) do not match config ({}x{}, {} heads)",
                self.base.dim(),
                self.base.dim_ff(),
                self.base.heads(),
                cfg.dim,
                cfg.dim_ff,
                cfg.heads
            ));
        }
        if self.norm_attn.dim() != cfg.dim || self.norm_ffn.dim() != cfg.dim {
            return Err(shape_err!(
                "pre-norm parameters have {}/{} channels, config expects {}",
                self.norm_attn.dim(),
                self.norm_ffn.dim(),
                cfg.dim
            ));
        }
        Ok(())
    }
}

/// Window-level execution strategy. Windows are independent; any executor
/// must run `job` exactly once per window, and per-window work is serial, so
/// every schedule produces bitwise-identical results.
pub trait WindowExecutor: Sync {
    fn for_each_window(&self, windows: &mut [VideoLatent], job: &(dyn Fn(&mut VideoLatent) + Sync));
}

/// Runs windows one after another on the calling thread.
#[derive(Debug, Default, Clone, Copy)]
pub struct SerialExecutor;

impl WindowExecutor for SerialExecutor {
    fn for_each_window(
        &self,
        windows: &mut [VideoLatent],
        job: &(dyn Fn(&mut VideoLatent) + Sync),
    ) {
        for w in windows {
            job(w);
        }
    }
}

static SERIAL: SerialExecutor = SerialExecutor;

/// Execution context for a forward pass: the window executor and an optional
/// FLOP counter. Counted runs always execute serially.
#[derive(Clone, Copy)]
pub struct ForwardCtx<'a> {
    pub exec: &'a dyn WindowExecutor,
    pub counter: Option<&'a FlopCounter>,
}

impl Default for ForwardCtx<'_> {
    fn default() -> Self {
        Self {
            exec: &SERIAL,
            counter: None,
        }
    }
}

impl<'a> ForwardCtx<'a> {
    pub fn counted(counter: &'a FlopCounter) -> Self {
        Self {
            exec: &SERIAL,
            counter: Some(counter),
        }
    }

    pub fn with_executor(exec: &'a dyn WindowExecutor) -> Self {
        Self {
            exec,
            counter: None,
        }
    }
}

/// Pre-norm attention + residual, then pre-norm FFN + residual, over an
/// `n x D` token buffer in place. All three branches and the full-attention
/// oracle run exactly this function.
pub(crate) fn sub_block_tokens(
    x: &mut [f32],
    n: usize,
    w: &AttentionWeights,
    norm_attn: &LayerNorm,
    norm_ffn: &LayerNorm,
    counter: Option<&FlopCounter>,
) {
    let normed = layer_norm_rows(x, n, norm_attn).expect("validated shapes");
    let attn = attention_tokens(&normed, n, w, counter).expect("validated shapes");
    for (xv, av) in x.iter_mut().zip(&attn) {
        *xv += av;
    }
    let normed = layer_norm_rows(x, n, norm_ffn).expect("validated shapes");
    let f = ffn_tokens(&normed, n, w, counter).expect("validated shapes");
    for (xv, fv) in x.iter_mut().zip(&f) {
        *xv += fv;
    }
}

fn check_branch_inputs(z: &VideoLatent, cfg: &BlockConfig, p: &BlockParams) -> Result<()> {
    cfg.check_input_dims(z)?;
    p.check_base(cfg)
}

/// Cross-window local branch: partitions `(H, W)` into `P x P` windows with
/// `P = K + (layer_index mod 2)`, runs the attention sub-block over all
/// `T*h*w` tokens of each window independently, and reassembles.
pub fn local_branch(z: &VideoLatent, cfg: &BlockConfig, p: &BlockParams) -> Result<VideoLatent> {
    local_branch_ctx(z, cfg, p, &ForwardCtx::default())
}

pub fn local_branch_ctx(
    z: &VideoLatent,
    cfg: &BlockConfig,
    p: &BlockParams,
    ctx: &ForwardCtx<'_>,
) -> Result<VideoLatent> {
    check_branch_inputs(z, cfg, p)?;
    let spec = make_partition(z.height(), z.width(), cfg.local_parts())?;
    let mut windows = partition(z, &spec)?;
    let job = |win: &mut VideoLatent, counter: Option<&FlopCounter>| {
        let tokens = win.frames() * win.height() * win.width();
        for b in 0..win.batch() {
            sub_block_tokens(
                win.batch_tokens_mut(b),
                tokens,
                &p.base,
                &p.norm_attn,
                &p.norm_ffn,
                counter,
            );
        }
    };
    run_windows(&mut windows, ctx, &job);
    aggregate(&windows, &spec)
}

/// Hierarchical branch: coarse `P x P` windows with
/// `P = K/2 + (layer_index mod 2)`, each spatially compressed (stride-2
/// depthwise convolution, ceiling mode with edge replication for odd
/// extents), attended with the hierarchical adapter residuals, upsampled
/// back to the window size and refined by a 3D convolution.
pub fn hierarchical_branch(
    z: &VideoLatent,
    cfg: &BlockConfig,
    p: &BlockParams,
) -> Result<VideoLatent> {
    hierarchical_branch_ctx(z, cfg, p, &ForwardCtx::default())
}

pub fn hierarchical_branch_ctx(
    z: &VideoLatent,
    cfg: &BlockConfig,
    p: &BlockParams,
    ctx: &ForwardCtx<'_>,
) -> Result<VideoLatent> {
    if !cfg.k().is_multiple_of(2) && cfg.k() != 1 {
        return Err(invalid!(
            "hierarchical attention requires an even window count, got K = {}",
            cfg.k()
        ));
    }
    check_branch_inputs(z, cfg, p)?;
    if p.hier_compress.k() != cfg.hier_compress {
        return Err(invalid!(
            "hierarchical compression kernel has factor {}, config expects {}",
            p.hier_compress.k(),
            cfg.hier_compress
        ));
    }
    let weights = apply_lora(&p.base, &p.hier_adapter)?;
    let spec = make_partition(z.height(), z.width(), cfg.hier_parts())?;
    let mut windows = partition(z, &spec)?;
    let job = |win: &mut VideoLatent, counter: Option<&FlopCounter>| {
        compress_attend_restore(
            win,
            &p.hier_compress,
            &p.hier_decompress,
            &weights,
            p,
            counter,
        );
    };
    run_windows(&mut windows, ctx, &job);
    aggregate(&windows, &spec)
}

/// Global branch: the whole latent is spatially compressed by factor `k`,
/// attended as one token set with the global adapter residuals, bilinearly
/// upsampled back to `(H, W)` and refined by a 3D convolution.
pub fn global_branch(z: &VideoLatent, cfg: &BlockConfig, p: &BlockParams) -> Result<VideoLatent> {
    global_branch_ctx(z, cfg, p, &ForwardCtx::default())
}

pub fn global_branch_ctx(
    z: &VideoLatent,
    cfg: &BlockConfig,
    p: &BlockParams,
    ctx: &ForwardCtx<'_>,
) -> Result<VideoLatent> {
    check_branch_inputs(z, cfg, p)?;
    if p.global_compress.k() != cfg.compress {
        return Err(invalid!(
            "global compression kernel has factor {}, config expects {}",
            p.global_compress.k(),
            cfg.compress
        ));
    }
    let k = cfg.compress();
    if !z.height().is_multiple_of(k) {
        return Err(invalid!(
            "height {} is not divisible by the global compression factor {k}",
            z.height()
        ));
    }
    if !z.width().is_multiple_of(k) {
        return Err(invalid!(
            "width {} is not divisible by the global compression factor {k}",
            z.width()
        ));
    }
    let weights = apply_lora(&p.base, &p.global_adapter)?;
    let mut full = z.clone();
    compress_attend_restore(
        &mut full,
        &p.global_compress,
        &p.global_decompress,
        &weights,
        p,
        ctx.counter,
    );
    Ok(full)
}

/// Shared compressed-attention pipeline: depthwise compress, run the
/// sub-block over the compressed tokens, upsample to the original spatial
/// size, refine with the 3D kernel. Overwrites `win` with the result.
fn compress_attend_restore(
    win: &mut VideoLatent,
    compress: &DepthwiseKernel2D,
    decompress: &Kernel3D,
    weights: &AttentionWeights,
    p: &BlockParams,
    counter: Option<&FlopCounter>,
) {
    let dims = win.dims();
    let (mut cdata, cdims) = depthwise_compress_raw(
        win.data(),
        dims,
        compress.weights(),
        compress.bias(),
        compress.k(),
        true,
    );
    let [b_n, t_n, ch, cw, d_n] = cdims;
    let tokens = t_n * ch * cw;
    let stride = tokens * d_n;
    for b in 0..b_n {
        sub_block_tokens(
            &mut cdata[b * stride..(b + 1) * stride],
            tokens,
            weights,
            &p.norm_attn,
            &p.norm_ffn,
            counter,
        );
    }
    let (up, updims) = bilinear_resample_raw(&cdata, cdims, dims[2], dims[3]);
    let refined = conv3d_raw(
        &up,
        updims,
        decompress.weights(),
        decompress.bias(),
        decompress.extents().0,
        decompress.extents().1,
        decompress.extents().2,
    );
    win.data_mut().copy_from_slice(&refined);
}

fn run_windows(
    windows: &mut [VideoLatent],
    ctx: &ForwardCtx<'_>,
    job: &(dyn Fn(&mut VideoLatent, Option<&FlopCounter>) + Sync),
) {
    match ctx.counter {
        // FLOP counters are single-threaded accumulators; count serially.
        Some(counter) => {
            for w in windows {
                job(w, Some(counter));
            }
        }
        None => ctx.exec.for_each_window(windows, &|w| job(w, None)),
    }
}

/// Per-channel convex blend `alpha(t) * z_a + (1 - alpha(t)) * z_b` with the
/// gate coefficients broadcast over `(B, T, H, W)`.
pub fn fuse(
    z_a: &VideoLatent,
    z_b: &VideoLatent,
    t: f32,
    gate: &FusionGate,
) -> Result<VideoLatent> {
    if z_a.dims() != z_b.dims() {
        return Err(shape_err!(
            "fuse operands have dims {:?} and {:?}",
            z_a.dims(),
            z_b.dims()
        ));
    }
    if gate.dim() != z_a.channels() {
        return Err(shape_err!(
            "gate produces {} channels, latents have {}",
            gate.dim(),
            z_a.channels()
        ));
    }
    let alpha = gate.alpha(t)?;
    let d = z_a.channels();
    let data = z_a
        .data()
        .iter()
        .zip(z_b.data())
        .enumerate()
        .map(|(i, (&a, &b))| {
            let g = alpha[i % d];
            (g * a as f64 + (1.0 - g) * b as f64) as f32
        })
        .collect();
    VideoLatent::new(z_a.dims(), data)
}

/// One full block: the three branches, the local fusion
/// `z_l = alpha_local * z_hla + (1 - alpha_local) * z_cro`, then the
/// global-local fusion `alpha * z_g + (1 - alpha) * z_l`.
pub fn block_forward(
    z: &VideoLatent,
    t: f32,
    cfg: &BlockConfig,
    p: &BlockParams,
) -> Result<VideoLatent> {
    block_forward_ctx(z, t, cfg, p, &ForwardCtx::default())
}

pub fn block_forward_ctx(
    z: &VideoLatent,
    t: f32,
    cfg: &BlockConfig,
    p: &BlockParams,
    ctx: &ForwardCtx<'_>,
) -> Result<VideoLatent> {
    let z_cro = local_branch_ctx(z, cfg, p, ctx)?;
    let z_hla = hierarchical_branch_ctx(z, cfg, p, ctx)?;
    let z_g = global_branch_ctx(z, cfg, p, ctx)?;
    let z_l = fuse(&z_hla, &z_cro, t, &p.gate_local)?;
    let fused = fuse(&z_g, &z_l, t, &p.gate_global)?;
    if !fused.is_finite() {
        return Err(crate::Error::NonFinite(alloc::string::String::from(
            "block output contains NaN or infinity",
        )));
    }
    Ok(fused)
}

/// One layer of a stacked model.
#[derive(Debug, Clone)]
pub struct ModelLayer {
    pub cfg: BlockConfig,
    pub params: BlockParams,
}

/// Sequential application of blocks. Layer `i` must carry `layer_index == i`
/// so adjacent layers alternate between `K x K` and `(K+1) x (K+1)` local
/// partitions (and `K/2` / `K/2 + 1` coarse partitions).
pub fn model_forward(z: &VideoLatent, t: f32, layers: &[ModelLayer]) -> Result<VideoLatent> {
    model_forward_ctx(z, t, layers, &ForwardCtx::default())
}

pub fn model_forward_ctx(
    z: &VideoLatent,
    t: f32,
    layers: &[ModelLayer],
    ctx: &ForwardCtx<'_>,
) -> Result<VideoLatent> {
    if layers.is_empty() {
        return Err(invalid!("model must have at least one layer"));
    }
    for (i, layer) in layers.iter().enumerate() {
        if layer.cfg.layer_index() != i {
            return Err(invalid!(
                "layer {i} carries layer_index {}, expected {i}",
                layer.cfg.layer_index()
            ));
        }
    }
    let mut cur = z.clone();
    for layer in layers {
        cur = block_forward_ctx(&cur, t, &layer.cfg, &layer.params, ctx)?;
    }
    Ok(cur)
}
