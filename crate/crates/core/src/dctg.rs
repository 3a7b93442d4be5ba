//! Domain-conditioned text guidance: a cross-attention block that lets
//! bottleneck image tokens attend to precomputed text-token embeddings.
//!
//! Forward pass, per call (no batch axis):
//!
//! 1. text tokens `T (N_t×E)` are projected to `T̃ = T·W_text (N_t×d)`;
//! 2. the feature map `[C, H, W, D]` is flattened to image tokens `X (N_i×C)`;
//! 3. `X̃ = LN_pre(X·W_img + P)`;
//! 4. per head, `softmax(Q_h K_hᵀ / √(d/h)) V_h` with `Q = X̃·W_q`,
//!    `K = T̃·W_k`, `V = T̃·W_v`; heads are concatenated in order;
//! 5. `out = LN_final(X + Y·W_o)`, reshaped back to `[C, H, W, D]`.
//!
//! Everything is computed in `f64`.

use std::path::Path;

use ndarray::{s, Array1, Array2, Array4, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::vol1::{self, Vol1Tensor};

pub const DCTG_VERSION: u64 = 1;
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// `(x - mean) / sqrt(var + eps) * gain + bias`, population variance.
pub fn layer_norm(x: ArrayView1<f64>, gain: ArrayView1<f64>, bias: ArrayView1<f64>, epsilon: f64) -> Array1<f64> {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + epsilon).sqrt();
    let mut out = x.mapv(|v| (v - mean) * inv);
    out *= &gain;
    out += &bias;
    out
}

fn layer_norm_rows(x: &Array2<f64>, norm: &LayerNorm) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for (i, row) in x.outer_iter().enumerate() {
        out.row_mut(i)
            .assign(&layer_norm(row, norm.gain.view(), norm.bias.view(), norm.epsilon));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
    pub epsilon: f64,
}

impl LayerNorm {
    pub fn identity(width: usize, epsilon: f64) -> Self {
        Self {
            gain: Array1::ones(width),
            bias: Array1::zeros(width),
            epsilon,
        }
    }
}

/// Weights of one block. Matrices act on row vectors (`x · W`).
#[derive(Debug, Clone, PartialEq)]
pub struct DctgParams {
    /// `E × d`
    pub w_text: Array2<f64>,
    /// `C × d`
    pub w_img: Array2<f64>,
    /// `N_i × d` positional embedding
    pub pos: Array2<f64>,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    /// `d × C`
    pub w_o: Array2<f64>,
    /// Over `d`, applied to image tokens before attention.
    pub pre_norm: LayerNorm,
    /// Over `C`, applied after the residual.
    pub final_norm: LayerNorm,
    pub heads: usize,
}

impl DctgParams {
    pub fn d(&self) -> usize {
        self.w_q.nrows()
    }

    pub fn channels(&self) -> usize {
        self.w_img.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d();
        let c = self.channels();
        if self.heads == 0 || !d.is_multiple_of(self.heads) {
            return Err(Error::HeadDivisibility { d, heads: self.heads });
        }
        let shape = |name: &str, m: &Array2<f64>, rows: Option<usize>, cols: usize| -> Result<()> {
            if rows.is_some_and(|r| m.nrows() != r) || m.ncols() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "{name} is {}x{}, expected {}x{cols}",
                    m.nrows(),
                    m.ncols(),
                    rows.map_or("*".to_string(), |r| r.to_string())
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name.to_string()));
            }
            Ok(())
        };
        shape("w_text", &self.w_text, None, d)?;
        shape("w_img", &self.w_img, Some(c), d)?;
        shape("pos", &self.pos, None, d)?;
        shape("w_q", &self.w_q, Some(d), d)?;
        shape("w_k", &self.w_k, Some(d), d)?;
        shape("w_v", &self.w_v, Some(d), d)?;
        shape("w_o", &self.w_o, Some(d), c)?;
        for (name, n, width) in [("pre_norm", &self.pre_norm, d), ("final_norm", &self.final_norm, c)] {
            if n.gain.len() != width || n.bias.len() != width {
                return Err(Error::ShapeMismatch(format!("{name} must have width {width}")));
            }
            if !(n.epsilon.is_finite() && n.epsilon >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} epsilon {}", n.epsilon)));
            }
        }
        Ok(())
    }
}

/// Precomputed text-token embeddings, `N_t × E`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub tokens: Array2<f64>,
}

impl TextEmbedding {
    pub fn new(tokens: Array2<f64>) -> Result<Self> {
        if tokens.nrows() == 0 {
            return Err(Error::ShapeMismatch("text embedding needs at least one token".into()));
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("text embedding".into()));
        }
        Ok(Self { tokens })
    }
}

/// Bottleneck feature map `[C, H, W, D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckFeatures {
    pub data: Array4<f64>,
}

impl BottleneckFeatures {
    pub fn new(data: Array4<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::ShapeMismatch("feature map is empty".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map".into()));
        }
        Ok(Self { data })
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn token_count(&self) -> usize {
        self.data.shape()[1..].iter().product()
    }

    /// `N_i × C`, token order = C-order over `(H, W, D)`.
    pub fn tokens(&self) -> Array2<f64> {
        let c = self.channels();
        let n = self.token_count();
        self.data
            .to_shape((c, n))
            .expect("contiguous reshape")
            .t()
            .to_owned()
    }

    fn from_tokens(tokens: &Array2<f64>, spatial: [usize; 3]) -> Self {
        let c = tokens.ncols();
        let data = tokens
            .t()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((c, spatial[0], spatial[1], spatial[2]))
            .expect("token count matches spatial dims");
        Self { data }
    }
}

fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Per-head attention weights `N_i × N_t` for already projected `q` and `k`.
pub fn attention_weights(q: ArrayView2<f64>, k: ArrayView2<f64>, heads: usize) -> Result<Vec<Array2<f64>>> {
    let d = q.ncols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::HeadDivisibility { d, heads });
    }
    if k.ncols() != d {
        return Err(Error::ShapeMismatch(format!("query width {d} vs key width {}", k.ncols())));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    Ok((0..heads)
        .map(|h| {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut a = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            softmax_rows(&mut a);
            a
        })
        .collect())
}

/// Multi-head cross-attention: image-token queries over text-token keys/values.
pub fn mha_cross_attention(x_tilde: ArrayView2<f64>, t_tilde: ArrayView2<f64>, params: &DctgParams) -> Result<Array2<f64>> {
    let d = params.d();
    if params.heads == 0 || !d.is_multiple_of(params.heads) {
        return Err(Error::HeadDivisibility { d, heads: params.heads });
    }
    if x_tilde.ncols() != d || t_tilde.ncols() != d {
        return Err(Error::ShapeMismatch(format!(
            "attention inputs must have width {d}, got {} and {}",
            x_tilde.ncols(),
            t_tilde.ncols()
        )));
    }
    let q = x_tilde.dot(&params.w_q);
    let k = t_tilde.dot(&params.w_k);
    let v = t_tilde.dot(&params.w_v);
    let dh = d / params.heads;
    let weights = attention_weights(q.view(), k.view(), params.heads)?;
    let mut y = Array2::zeros((x_tilde.nrows(), d));
    for (h, a) in weights.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        y.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
    }
    Ok(y)
}

/// Image-side query tokens `X̃` (exposed for inspection and tests).
pub fn image_queries(f: &BottleneckFeatures, params: &DctgParams) -> Result<Array2<f64>> {
    check_inputs(f, None, params)?;
    let x = f.tokens();
    let proj = x.dot(&params.w_img) + &params.pos;
    Ok(layer_norm_rows(&proj, &params.pre_norm))
}

fn check_inputs(f: &BottleneckFeatures, text: Option<&TextEmbedding>, params: &DctgParams) -> Result<()> {
    params.validate()?;
    if f.channels() != params.channels() {
        return Err(Error::ShapeMismatch(format!(
            "feature map has {} channels, block expects {}",
            f.channels(),
            params.channels()
        )));
    }
    if params.pos.nrows() != f.token_count() {
        return Err(Error::ShapeMismatch(format!(
            "positional embedding has {} rows for {} image tokens",
            params.pos.nrows(),
            f.token_count()
        )));
    }
    if let Some(t) = text {
        if t.tokens.ncols() != params.w_text.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "text embedding width {} vs projection input {}",
                t.tokens.ncols(),
                params.w_text.nrows()
            )));
        }
    }
    Ok(())
}

pub fn dctg_forward(f: &BottleneckFeatures, text: &TextEmbedding, params: &DctgParams) -> Result<BottleneckFeatures> {
    check_inputs(f, Some(text), params)?;
    let x = f.tokens();
    let x_tilde = layer_norm_rows(&(x.dot(&params.w_img) + &params.pos), &params.pre_norm);
    let t_tilde = text.tokens.dot(&params.w_text);
    let y = mha_cross_attention(x_tilde.view(), t_tilde.view(), params)?;
    let residual = x + y.dot(&params.w_o);
    let out = layer_norm_rows(&residual, &params.final_norm);
    let sh = f.data.shape();
    Ok(BottleneckFeatures::from_tokens(&out, [sh[1], sh[2], sh[3]]))
}

/// Prompt text describing lesion type and available modalities.
pub fn build_prompt<S: AsRef<str>>(lesion_type: &str, modalities: &[S]) -> Result<String> {
    let lesion = lesion_type.trim();
    if lesion.is_empty() || modalities.is_empty() {
        return Err(Error::InvalidConfig(
            "prompt needs a lesion type and at least one modality".into(),
        ));
    }
    let names: Vec<&str> = modalities.iter().map(|m| m.as_ref().trim()).collect();
    Ok(format!(
        "A {lesion} case acquired with modalities: {}.",
        names.join(", ")
    ))
}

// ---- on-disk parameters -------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DctgTensorFiles {
    pub w_text: String,
    pub w_img: String,
    pub pos: String,
    pub w_q: String,
    pub w_k: String,
    pub w_v: String,
    pub w_o: String,
    pub pre_gain: String,
    pub pre_bias: String,
    pub final_gain: String,
    pub final_bias: String,
}

impl Default for DctgTensorFiles {
    fn default() -> Self {
        let f = |n: &str| format!("{n}.vol");
        Self {
            w_text: f("w_text"),
            w_img: f("w_img"),
            pos: f("pos"),
            w_q: f("w_q"),
            w_k: f("w_k"),
            w_v: f("w_v"),
            w_o: f("w_o"),
            pre_gain: f("pre_gain"),
            pre_bias: f("pre_bias"),
            final_gain: f("final_gain"),
            final_bias: f("final_bias"),
        }
    }
}

/// `params.json` in a parameter directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DctgDescriptor {
    pub version: u64,
    pub d: usize,
    pub h: usize,
    #[serde(rename = "C")]
    pub c: usize,
    pub epsilon: f64,
    pub tensors: DctgTensorFiles,
}

pub const DESCRIPTOR_FILE: &str = "params.json";

fn matrix_from(t: &Vol1Tensor, name: &str) -> Result<Array2<f64>> {
    if t.dims.len() != 2 {
        return Err(Error::ShapeMismatch(format!("{name} must be 2-D, got {:?}", t.dims)));
    }
    Array2::from_shape_vec((t.dims[0], t.dims[1]), t.to_f64())
        .map_err(|e| Error::ShapeMismatch(format!("{name}: {e}")))
}

fn vector_from(t: &Vol1Tensor, name: &str) -> Result<Array1<f64>> {
    if t.dims.len() != 1 {
        return Err(Error::ShapeMismatch(format!("{name} must be 1-D, got {:?}", t.dims)));
    }
    Ok(Array1::from(t.to_f64()))
}

pub fn load_params(dir: &Path) -> Result<DctgParams> {
    let desc_path = dir.join(DESCRIPTOR_FILE);
    let text = std::fs::read_to_string(&desc_path).map_err(|e| Error::io(&desc_path, e))?;
    let desc: DctgDescriptor = serde_json::from_str(&text)?;
    if desc.version != DCTG_VERSION {
        return Err(Error::SchemaMismatch {
            document: "dctg params",
            found: desc.version,
            expected: DCTG_VERSION,
        });
    }
    let read = |name: &str| vol1::read_file(&dir.join(name));
    let t = &desc.tensors;
    let params = DctgParams {
        w_text: matrix_from(&read(&t.w_text)?, "w_text")?,
        w_img: matrix_from(&read(&t.w_img)?, "w_img")?,
        pos: matrix_from(&read(&t.pos)?, "pos")?,
        w_q: matrix_from(&read(&t.w_q)?, "w_q")?,
        w_k: matrix_from(&read(&t.w_k)?, "w_k")?,
        w_v: matrix_from(&read(&t.w_v)?, "w_v")?,
        w_o: matrix_from(&read(&t.w_o)?, "w_o")?,
        pre_norm: LayerNorm {
            gain: vector_from(&read(&t.pre_gain)?, "pre_gain")?,
            bias: vector_from(&read(&t.pre_bias)?, "pre_bias")?,
            epsilon: desc.epsilon,
        },
        final_norm: LayerNorm {
            gain: vector_from(&read(&t.final_gain)?, "final_gain")?,
            bias: vector_from(&read(&t.final_bias)?, "final_bias")?,
            epsilon: desc.epsilon,
        },
        heads: desc.h,
    };
    if params.d() != desc.d || params.channels() != desc.c {
        return Err(Error::ShapeMismatch(format!(
            "descriptor says d={} C={}, tensors give d={} C={}",
            desc.d,
            desc.c,
            params.d(),
            params.channels()
        )));
    }
    params.validate()?;
    Ok(params)
}

/// Write `params` as f32 tensors plus descriptor. Both norms must share epsilon.
pub fn save_params(dir: &Path, params: &DctgParams) -> Result<()> {
    params.validate()?;
    if params.pre_norm.epsilon != params.final_norm.epsilon {
        return Err(Error::InvalidConfig("descriptor stores a single epsilon".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = DctgTensorFiles::default();
    let m = |a: &Array2<f64>| Vol1Tensor::from_f64(vec![a.nrows(), a.ncols()], a.iter().copied());
    let v = |a: &Array1<f64>| Vol1Tensor::from_f64(vec![a.len()], a.iter().copied());
    for (name, t) in [
        (&files.w_text, m(&params.w_text)),
        (&files.w_img, m(&params.w_img)),
        (&files.pos, m(&params.pos)),
        (&files.w_q, m(&params.w_q)),
        (&files.w_k, m(&params.w_k)),
        (&files.w_v, m(&params.w_v)),
        (&files.w_o, m(&params.w_o)),
        (&files.pre_gain, v(&params.pre_norm.gain)),
        (&files.pre_bias, v(&params.pre_norm.bias)),
        (&files.final_gain, v(&params.final_norm.gain)),
        (&files.final_bias, v(&params.final_norm.bias)),
    ] {
        vol1::write_file(&dir.join(name), &t)?;
    }
    let desc = DctgDescriptor {
        version: DCTG_VERSION,
        d: params.d(),
        h: params.heads,
        c: params.channels(),
        epsilon: params.pre_norm.epsilon,
        tensors: files,
    };
    crate::io::write_json(&dir.join(DESCRIPTOR_FILE), &desc)
}

pub fn features_from_tensor(t: &Vol1Tensor) -> Result<BottleneckFeatures> {
    if t.dims.len() != 4 {
        return Err(Error::ShapeMismatch(format!("features must be 4-D [C,H,W,D], got {:?}", t.dims)));
    }
    let data = Array4::from_shape_vec((t.dims[0], t.dims[1], t.dims[2], t.dims[3]), t.to_f64())
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    BottleneckFeatures::new(data)
}

pub fn features_to_tensor(f: &BottleneckFeatures) -> Vol1Tensor {
    Vol1Tensor::from_f64(f.data.shape().to_vec(), f.data.iter().copied())
}

pub fn text_from_tensor(t: &Vol1Tensor) -> Result<TextEmbedding> {
    TextEmbedding::new(matrix_from(t, "text embedding")?)
}

/// Sum of each attention row, for diagnostics.
pub fn row_sums(a: &Array2<f64>) -> Array1<f64> {
    a.sum_axis(Axis(1))
}
