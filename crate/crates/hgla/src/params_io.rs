//! Block parameter serialization: one tensor file per named parameter plus a
//! JSON manifest mapping name -> file -> shape.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use hgla_core::attention::{AttentionWeights, LoRAAdapter, LoraPair};
use hgla_core::block::{BlockConfig, BlockParams, FusionGate};
use hgla_core::ops::{DepthwiseKernel2D, Kernel3D, LayerNorm, Mlp2};
use hgla_core::Mat;

use crate::io::{read_raw, write_raw, TensorIoError};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct Manifest {
    pub params: Vec<ManifestEntry>,
}

#[derive(Debug)]
pub enum ParamsIoError {
    Tensor(TensorIoError),
    Io(std::io::Error),
    Json(serde_json::Error),
    /// Manifest and tensor contents disagree with each other or the config.
    Inconsistent(String),
}

impl fmt::Display for ParamsIoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamsIoError::Tensor(e) => write!(f, "{e}"),
            ParamsIoError::Io(e) => write!(f, "parameter I/O failed: {e}"),
            ParamsIoError::Json(e) => write!(f, "manifest parse failed: {e}"),
            ParamsIoError::Inconsistent(msg) => write!(f, "inconsistent parameters: {msg}"),
        }
    }
}

impl std::error::Error for ParamsIoError {}

impl From<TensorIoError> for ParamsIoError {
    fn from(e: TensorIoError) -> Self {
        ParamsIoError::Tensor(e)
    }
}

impl From<std::io::Error> for ParamsIoError {
    fn from(e: std::io::Error) -> Self {
        ParamsIoError::Io(e)
    }
}

impl From<serde_json::Error> for ParamsIoError {
    fn from(e: serde_json::Error) -> Self {
        ParamsIoError::Json(e)
    }
}

type PResult<T> = Result<T, ParamsIoError>;

fn named_tensors(p: &BlockParams) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    let mut out = Vec::new();
    let mut push = |name: &str, shape: Vec<usize>, data: &[f32]| {
        out.push((name.to_string(), shape, data.to_vec()));
    };

    let mat = |m: &Mat| vec![m.rows(), m.cols()];
    push("base.w_q", mat(&p.base.w_q), p.base.w_q.data());
    push("base.w_k", mat(&p.base.w_k), p.base.w_k.data());
    push("base.w_v", mat(&p.base.w_v), p.base.w_v.data());
    push("base.w_o", mat(&p.base.w_o), p.base.w_o.data());
    push("base.ffn_w1", mat(&p.base.ffn_w1), p.base.ffn_w1.data());
    push("base.ffn_b1", vec![p.base.ffn_b1.len()], &p.base.ffn_b1);
    push("base.ffn_w2", mat(&p.base.ffn_w2), p.base.ffn_w2.data());
    push("base.ffn_b2", vec![p.base.ffn_b2.len()], &p.base.ffn_b2);

    for (prefix, adapter) in [
        ("global_adapter", &p.global_adapter),
        ("hier_adapter", &p.hier_adapter),
    ] {
        for (part, pair) in [
            ("q", &adapter.q),
            ("k", &adapter.k),
            ("v", &adapter.v),
            ("ffn1", &adapter.ffn1),
            ("ffn2", &adapter.ffn2),
        ] {
            push(&format!("{prefix}.{part}.a"), mat(&pair.a), pair.a.data());
            push(&format!("{prefix}.{part}.b"), mat(&pair.b), pair.b.data());
        }
    }

    for (prefix, kern) in [
        ("global_compress", &p.global_compress),
        ("hier_compress", &p.hier_compress),
    ] {
        push(
            &format!("{prefix}.weights"),
            vec![kern.channels(), kern.k(), kern.k()],
            kern.weights(),
        );
        push(
            &format!("{prefix}.bias"),
            vec![kern.channels()],
            kern.bias(),
        );
    }

    for (prefix, kern) in [
        ("global_decompress", &p.global_decompress),
        ("hier_decompress", &p.hier_decompress),
    ] {
        let (kt, kh, kw) = kern.extents();
        push(
            &format!("{prefix}.weights"),
            vec![kern.channels(), kt, kh, kw],
            kern.weights(),
        );
        push(
            &format!("{prefix}.bias"),
            vec![kern.channels()],
            kern.bias(),
        );
    }

    for (prefix, gate) in [
        ("gate_global", &p.gate_global),
        ("gate_local", &p.gate_local),
    ] {
        let mlp = gate.mlp();
        push(
            &format!("{prefix}.w1"),
            vec![mlp.dim_in, mlp.dim_hidden],
            &mlp.w1,
        );
        push(&format!("{prefix}.b1"), vec![mlp.dim_hidden], &mlp.b1);
        push(
            &format!("{prefix}.w2"),
            vec![mlp.dim_hidden, mlp.dim_out],
            &mlp.w2,
        );
        push(&format!("{prefix}.b2"), vec![mlp.dim_out], &mlp.b2);
    }

    for (prefix, norm) in [("norm_attn", &p.norm_attn), ("norm_ffn", &p.norm_ffn)] {
        push(&format!("{prefix}.gain"), vec![norm.gain.len()], &norm.gain);
        push(&format!("{prefix}.bias"), vec![norm.bias.len()], &norm.bias);
    }
    out
}

/// Writes every named parameter as a tensor file under `dir` and a
/// `manifest.json` listing name, file and shape.
pub fn save_block_params(dir: &Path, params: &BlockParams) -> PResult<Manifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (name, shape, data) in named_tensors(params) {
        let file = format!("{name}.ugt");
        write_raw(&dir.join(&file), &shape, &data)?;
        entries.push(ManifestEntry { name, file, shape });
    }
    let manifest = Manifest { params: entries };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(manifest)
}

struct Loaded {
    tensors: HashMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Loaded {
    fn take(&mut self, name: &str) -> PResult<(Vec<usize>, Vec<f32>)> {
        self.tensors
            .remove(name)
            .ok_or_else(|| ParamsIoError::Inconsistent(format!("missing parameter '{name}'")))
    }

    fn mat(&mut self, name: &str) -> PResult<Mat> {
        let (shape, data) = self.take(name)?;
        if shape.len() != 2 {
            return Err(ParamsIoError::Inconsistent(format!(
                "parameter '{name}' must be a matrix, found shape {shape:?}"
            )));
        }
        Mat::new(shape[0], shape[1], data)
            .map_err(|e| ParamsIoError::Inconsistent(format!("{name}: {e}")))
    }

    fn vector(&mut self, name: &str) -> PResult<Vec<f32>> {
        let (shape, data) = self.take(name)?;
        if shape.len() != 1 {
            return Err(ParamsIoError::Inconsistent(format!(
                "parameter '{name}' must be a vector, found shape {shape:?}"
            )));
        }
        Ok(data)
    }

    fn pair(&mut self, prefix: &str) -> PResult<LoraPair> {
        Ok(LoraPair {
            a: self.mat(&format!("{prefix}.a"))?,
            b: self.mat(&format!("{prefix}.b"))?,
        })
    }

    fn adapter(&mut self, prefix: &str) -> PResult<LoRAAdapter> {
        LoRAAdapter::from_pairs(
            self.pair(&format!("{prefix}.q"))?,
            self.pair(&format!("{prefix}.k"))?,
            self.pair(&format!("{prefix}.v"))?,
            self.pair(&format!("{prefix}.ffn1"))?,
            self.pair(&format!("{prefix}.ffn2"))?,
        )
        .map_err(|e| ParamsIoError::Inconsistent(format!("{prefix}: {e}")))
    }

    fn kernel_2d(&mut self, prefix: &str) -> PResult<DepthwiseKernel2D> {
        let (shape, data) = self.take(&format!("{prefix}.weights"))?;
        if shape.len() != 3 || shape[1] != shape[2] {
            return Err(ParamsIoError::Inconsistent(format!(
                "'{prefix}.weights' must have shape [channels, k, k], found {shape:?}"
            )));
        }
        let bias = self.vector(&format!("{prefix}.bias"))?;
        DepthwiseKernel2D::new(shape[1], shape[0], data, bias)
            .map_err(|e| ParamsIoError::Inconsistent(format!("{prefix}: {e}")))
    }

    fn kernel_3d(&mut self, prefix: &str) -> PResult<Kernel3D> {
        let (shape, data) = self.take(&format!("{prefix}.weights"))?;
        if shape.len() != 4 {
            return Err(ParamsIoError::Inconsistent(format!(
                "'{prefix}.weights' must have shape [channels, kt, kh, kw], found {shape:?}"
            )));
        }
        let bias = self.vector(&format!("{prefix}.bias"))?;
        Kernel3D::new(shape[1], shape[2], shape[3], shape[0], data, bias)
            .map_err(|e| ParamsIoError::Inconsistent(format!("{prefix}: {e}")))
    }

    fn gate(&mut self, prefix: &str) -> PResult<FusionGate> {
        let w1 = self.take(&format!("{prefix}.w1"))?;
        let b1 = self.vector(&format!("{prefix}.b1"))?;
        let w2 = self.take(&format!("{prefix}.w2"))?;
        let b2 = self.vector(&format!("{prefix}.b2"))?;
        if w1.0.len() != 2 || w2.0.len() != 2 {
            return Err(ParamsIoError::Inconsistent(format!(
                "'{prefix}' MLP weights must be matrices"
            )));
        }
        let mlp = Mlp2::new(w1.0[0], w1.0[1], w2.0[1], w1.1, b1, w2.1, b2)
            .map_err(|e| ParamsIoError::Inconsistent(format!("{prefix}: {e}")))?;
        FusionGate::new(mlp).map_err(|e| ParamsIoError::Inconsistent(format!("{prefix}: {e}")))
    }

    fn norm(&mut self, prefix: &str) -> PResult<LayerNorm> {
        Ok(LayerNorm {
            gain: self.vector(&format!("{prefix}.gain"))?,
            bias: self.vector(&format!("{prefix}.bias"))?,
            eps: 1e-5,
        })
    }
}

/// Loads parameters saved by [`save_block_params`] and validates them
/// against the configuration they will run under.
pub fn load_block_params(dir: &Path, cfg: &BlockConfig) -> PResult<BlockParams> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let mut tensors = HashMap::new();
    for entry in &manifest.params {
        let (shape, data) = read_raw(&dir.join(&entry.file))?;
        if shape != entry.shape {
            return Err(ParamsIoError::Inconsistent(format!(
                "'{}': manifest says shape {:?}, file holds {:?}",
                entry.name, entry.shape, shape
            )));
        }
        tensors.insert(entry.name.clone(), (shape, data));
    }
    let mut loaded = Loaded { tensors };

    let base = AttentionWeights::new(
        cfg.heads(),
        loaded.mat("base.w_q")?,
        loaded.mat("base.w_k")?,
        loaded.mat("base.w_v")?,
        loaded.mat("base.w_o")?,
        loaded.mat("base.ffn_w1")?,
        loaded.vector("base.ffn_b1")?,
        loaded.mat("base.ffn_w2")?,
        loaded.vector("base.ffn_b2")?,
    )
    .map_err(|e| ParamsIoError::Inconsistent(format!("base weights: {e}")))?;

    let params = BlockParams {
        base,
        global_adapter: loaded.adapter("global_adapter")?,
        hier_adapter: loaded.adapter("hier_adapter")?,
        global_compress: loaded.kernel_2d("global_compress")?,
        global_decompress: loaded.kernel_3d("global_decompress")?,
        hier_compress: loaded.kernel_2d("hier_compress")?,
        hier_decompress: loaded.kernel_3d("hier_decompress")?,
        gate_global: loaded.gate("gate_global")?,
        gate_local: loaded.gate("gate_local")?,
        norm_attn: loaded.norm("norm_attn")?,
        norm_ffn: loaded.norm("norm_ffn")?,
    };
    if params.base.dim() != cfg.dim() {
        return Err(ParamsIoError::Inconsistent(format!(
            "parameters are {}-channel, config expects {}",
            params.base.dim(),
            cfg.dim()
        )));
    }
    if !loaded.tensors.is_empty() {
        let mut extra: Vec<&String> = loaded.tensors.keys().collect();
        extra.sort();
        return Err(ParamsIoError::Inconsistent(format!(
            "unrecognized parameters in manifest: {extra:?}"
        )));
    }
    Ok(params)
}
