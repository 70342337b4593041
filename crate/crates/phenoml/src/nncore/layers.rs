use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor2D;
use crate::{Error, Result};

/// One layer in a feed-forward chain.
///
/// Shapes use (rows, cols). Dense layers treat rows as the batch axis;
/// `Conv1d` and `MaxOverTime` treat rows as the time axis (one chunk
/// embedding per row). `ConcatInput` appends an auxiliary activation
/// column-wise, which is how the fused head sees both latent vectors.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { in_dim: usize, out_dim: usize },
    Relu,
    Sigmoid,
    Conv1d { in_dim: usize, kernel_width: usize, n_filters: usize },
    MaxOverTime,
    ConcatInput { extra_dim: usize },
}

impl LayerSpec {
    pub fn n_param_tensors(&self) -> usize {
        match self {
            LayerSpec::Dense { .. } | LayerSpec::Conv1d { .. } => 2,
            _ => 0,
        }
    }
}

/// An ordered list of layers sharing one flat parameter list.
/// Parameter tensors appear in layer order, weights before biases.
#[derive(Clone, Debug)]
pub struct Chain {
    layers: Vec<LayerSpec>,
}

pub struct ChainGrads {
    pub params: Vec<Tensor2D>,
    pub input: Tensor2D,
    pub aux: Option<Tensor2D>,
}

impl Chain {
    pub fn new(layers: Vec<LayerSpec>) -> Self {
        Chain { layers }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn n_param_tensors(&self) -> usize {
        self.layers.iter().map(|l| l.n_param_tensors()).sum()
    }

    /// Checks layer compatibility for an input with `input_cols` columns
    /// (and optionally an aux input) and returns the output column count.
    pub fn validate(&self, input_cols: usize, aux_cols: Option<usize>) -> Result<usize> {
        let mut cols = input_cols;
        for (i, layer) in self.layers.iter().enumerate() {
            cols = match *layer {
                LayerSpec::Dense { in_dim, out_dim } => {
                    if cols != in_dim {
                        return Err(Error::DimMismatch(format!(
                            "layer {i}: dense expects {in_dim} cols, got {cols}"
                        )));
                    }
                    out_dim
                }
                LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::MaxOverTime => cols,
                LayerSpec::Conv1d { in_dim, n_filters, kernel_width } => {
                    if kernel_width == 0 || n_filters == 0 {
                        return Err(Error::InvalidConfig(format!(
                            "layer {i}: conv1d needs kernel_width and n_filters >= 1"
                        )));
                    }
                    if cols != in_dim {
                        return Err(Error::DimMismatch(format!(
                            "layer {i}: conv1d expects {in_dim} cols, got {cols}"
                        )));
                    }
                    n_filters
                }
                LayerSpec::ConcatInput { extra_dim } => {
                    let aux = aux_cols.ok_or_else(|| {
                        Error::DimMismatch(format!("layer {i}: concat_input without aux input"))
                    })?;
                    if aux != extra_dim {
                        return Err(Error::DimMismatch(format!(
                            "layer {i}: concat_input expects aux of {extra_dim} cols, got {aux}"
                        )));
                    }
                    cols + extra_dim
                }
            };
        }
        Ok(cols)
    }

    /// Glorot-uniform weights (limit sqrt(6/(fan_in+fan_out))), zero biases.
    /// Entries are drawn row-major in layer order so a fixed seed yields a
    /// fixed parameter list.
    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor2D> {
        let mut params = Vec::with_capacity(self.n_param_tensors());
        for layer in &self.layers {
            match *layer {
                LayerSpec::Dense { in_dim, out_dim } => {
                    params.push(glorot(rng, in_dim, out_dim, in_dim, out_dim));
                    params.push(Tensor2D::zeros(1, out_dim));
                }
                LayerSpec::Conv1d { in_dim, kernel_width, n_filters } => {
                    let fan_in = kernel_width * in_dim;
                    params.push(glorot(rng, fan_in, n_filters, fan_in, n_filters));
                    params.push(Tensor2D::zeros(1, n_filters));
                }
                _ => {}
            }
        }
        params
    }

    /// Runs the chain, returning every activation: index 0 is the input,
    /// index i+1 the output of layer i.
    pub fn forward(
        &self,
        params: &[Tensor2D],
        input: &Tensor2D,
        aux: Option<&Tensor2D>,
    ) -> Result<Vec<Tensor2D>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.clone());
        let mut p = 0;
        for layer in &self.layers {
            let x = acts.last().unwrap();
            let out = match *layer {
                LayerSpec::Dense { .. } => {
                    let w = &params[p];
                    let b = &params[p + 1];
                    p += 2;
                    let mut y = x.matmul(w);
                    y.add_row_broadcast(b);
                    y
                }
                LayerSpec::Relu => x.map(|v| if v > 0.0 { v } else { 0.0 }),
                LayerSpec::Sigmoid => x.map(sigmoid),
                LayerSpec::Conv1d { in_dim, kernel_width, n_filters } => {
                    let k = &params[p];
                    let b = &params[p + 1];
                    p += 2;
                    conv1d_forward(x, k, b, in_dim, kernel_width, n_filters)?
                }
                LayerSpec::MaxOverTime => max_over_time(x),
                LayerSpec::ConcatInput { .. } => {
                    let aux = aux.ok_or_else(|| {
                        Error::DimMismatch("concat_input without aux input".into())
                    })?;
                    x.concat_cols(aux)?
                }
            };
            acts.push(out);
        }
        Ok(acts)
    }

    pub fn output<'a>(&self, acts: &'a [Tensor2D]) -> &'a Tensor2D {
        acts.last().unwrap()
    }

    /// Reverse pass. `d_out` is dLoss/dOutput of the final layer. Returns
    /// parameter gradients (same order as `init_params`), the gradient
    /// w.r.t. the chain input, and w.r.t. the aux input when one was used.
    pub fn backward(
        &self,
        params: &[Tensor2D],
        acts: &[Tensor2D],
        d_out: &Tensor2D,
    ) -> ChainGrads {
        let mut param_grads: Vec<Option<Tensor2D>> = vec![None; self.n_param_tensors()];
        let mut d_aux: Option<Tensor2D> = None;
        let mut d = d_out.clone();

        // parameter cursor positioned past the end, walked backwards
        let mut p = self.n_param_tensors();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &acts[i];
            let y = &acts[i + 1];
            d = match *layer {
                LayerSpec::Dense { .. } => {
                    p -= 2;
                    let w = &params[p];
                    let dw = x.matmul_tn(&d);
                    let db = d.column_sums();
                    let dx = d.matmul_nt(w);
                    param_grads[p] = Some(dw);
                    param_grads[p + 1] = Some(db);
                    dx
                }
                LayerSpec::Relu => {
                    let mut dx = d;
                    for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                        if v <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    dx
                }
                LayerSpec::Sigmoid => {
                    let mut dx = d;
                    for (g, &a) in dx.data_mut().iter_mut().zip(y.data()) {
                        *g *= a * (1.0 - a);
                    }
                    dx
                }
                LayerSpec::Conv1d { in_dim, kernel_width, n_filters } => {
                    p -= 2;
                    let k = &params[p];
                    let (dk, db, dx) = conv1d_backward(x, k, &d, in_dim, kernel_width, n_filters);
                    param_grads[p] = Some(dk);
                    param_grads[p + 1] = Some(db);
                    dx
                }
                LayerSpec::MaxOverTime => {
                    let mut dx = Tensor2D::zeros(x.rows(), x.cols());
                    for c in 0..x.cols() {
                        let r = argmax_row(x, c);
                        dx.set(r, c, d.get(0, c));
                    }
                    dx
                }
                LayerSpec::ConcatInput { extra_dim } => {
                    let (dx, da) = d.split_cols(d.cols() - extra_dim);
                    d_aux = Some(da);
                    dx
                }
            };
        }
        ChainGrads {
            params: param_grads.into_iter().map(|g| g.unwrap()).collect(),
            input: d,
            aux: d_aux,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Tensor2D {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = Tensor2D::zeros(rows, cols);
    for v in t.data_mut() {
        *v = rng.gen_range(-limit..limit);
    }
    t
}

/// Valid convolution over the row (time) axis. Inputs shorter than the
/// kernel are zero-padded at the end so the output always has >= 1 row.
fn conv1d_forward(
    x: &Tensor2D,
    k: &Tensor2D,
    b: &Tensor2D,
    in_dim: usize,
    width: usize,
    n_filters: usize,
) -> Result<Tensor2D> {
    if x.cols() != in_dim {
        return Err(Error::DimMismatch(format!(
            "conv1d input has {} cols, expected {in_dim}",
            x.cols()
        )));
    }
    let patches = conv_patches(x, in_dim, width);
    let mut out = patches.matmul(k);
    debug_assert_eq!(out.cols(), n_filters);
    out.add_row_broadcast(b);
    Ok(out)
}

fn conv1d_backward(
    x: &Tensor2D,
    k: &Tensor2D,
    d_out: &Tensor2D,
    in_dim: usize,
    width: usize,
    _n_filters: usize,
) -> (Tensor2D, Tensor2D, Tensor2D) {
    let patches = conv_patches(x, in_dim, width);
    let dk = patches.matmul_tn(d_out);
    let db = d_out.column_sums();
    let d_patches = d_out.matmul_nt(k);
    // scatter patch gradients back onto (padded) input rows, then crop
    let mut dx = Tensor2D::zeros(x.rows(), in_dim);
    for j in 0..d_patches.rows() {
        let src = d_patches.row(j);
        for u in 0..width {
            let r = j + u;
            if r >= x.rows() {
                break; // gradient w.r.t. zero padding is dropped
            }
            let dst = dx.row_mut(r);
            for (dv, &sv) in dst.iter_mut().zip(&src[u * in_dim..(u + 1) * in_dim]) {
                *dv += sv;
            }
        }
    }
    (dk, db, dx)
}

/// Im2col: row j holds the `width` consecutive input rows starting at j,
/// flattened. Rows past the input read as zero.
fn conv_patches(x: &Tensor2D, in_dim: usize, width: usize) -> Tensor2D {
    let n = x.rows();
    let padded = n.max(width);
    let out_rows = padded - width + 1;
    let mut p = Tensor2D::zeros(out_rows, width * in_dim);
    for j in 0..out_rows {
        let dst = p.row_mut(j);
        for u in 0..width {
            let r = j + u;
            if r < n {
                dst[u * in_dim..(u + 1) * in_dim].copy_from_slice(x.row(r));
            }
        }
    }
    p
}

fn max_over_time(x: &Tensor2D) -> Tensor2D {
    let mut out = Tensor2D::zeros(1, x.cols());
    for c in 0..x.cols() {
        out.set(0, c, x.get(argmax_row(x, c), c));
    }
    out
}

/// First row attaining the column max, so ties route gradient one way only.
fn argmax_row(x: &Tensor2D, c: usize) -> usize {
    let mut best = 0;
    let mut best_v = x.get(0, c);
    for r in 1..x.rows() {
        let v = x.get(r, c);
        if v > best_v {
            best = r;
            best_v = v;
        }
    }
    best
}
