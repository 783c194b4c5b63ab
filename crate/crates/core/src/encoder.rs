//! Toy dual-encoder model: a token-based text encoder and a patch-grid image
//! encoder, both with learned positional embeddings, mean pooling, a linear
//! projection head and unit-normalized outputs. Positional tables can be
//! grown by (bi)linear interpolation to implement context and resolution
//! increases between training stages.

use crate::error::{Error, Result};
use crate::loss::Temperature;
use crate::rng::{derive_seed, stream};
use crate::tensor::{l2_normalize_slice, norm, Grid, Matrix, Vector};
use rand::Rng;

/// Model-wide dimensions and defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub context_len: usize,
    pub patch_features: usize,
    pub resolution: usize,
    pub mrl_dims: Vec<usize>,
    pub mrl_weights: Vec<f64>,
    pub init_tau: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab: 256,
            hidden: 32,
            embed_dim: 64,
            context_len: 8,
            patch_features: 12,
            resolution: 4,
            mrl_dims: vec![8, 16, 32, 48, 64],
            mrl_weights: vec![1.0; 5],
            init_tau: Temperature::DEFAULT_TAU,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0
            || self.hidden == 0
            || self.embed_dim == 0
            || self.context_len < 2
            || self.patch_features == 0
            || self.resolution < 2
        {
            return Err(Error::BadParams("model dimensions must be positive".into()));
        }
        if self.mrl_dims.is_empty() || *self.mrl_dims.last().unwrap() != self.embed_dim {
            return Err(Error::BadDims(format!(
                "mrl_dims must end at embed_dim {}",
                self.embed_dim
            )));
        }
        if self.mrl_weights.len() != self.mrl_dims.len() {
            return Err(Error::BadDims(format!(
                "{} mrl_weights for {} mrl_dims",
                self.mrl_weights.len(),
                self.mrl_dims.len()
            )));
        }
        Ok(())
    }
}

fn uniform_matrix(rows: usize, cols: usize, bound: f64, seed: u64) -> Matrix {
    let mut rng = stream(seed);
    let mut m = Matrix::zeros(rows, cols);
    for x in m.data_mut() {
        *x = (rng.gen::<f64>() * 2.0 - 1.0) * bound;
    }
    m
}

fn uniform_grid(side: usize, channels: usize, bound: f64, seed: u64) -> Grid {
    let mut rng = stream(seed);
    let mut g = Grid::zeros(side, channels);
    for x in g.data_mut() {
        *x = (rng.gen::<f64>() * 2.0 - 1.0) * bound;
    }
    g
}

/// Cached intermediates of a text forward pass, enough to backpropagate.
#[derive(Debug, Clone)]
pub struct TextTape {
    tokens: Vec<u32>,
    mean_hidden: Vec<f64>,
    pre_norm: Vec<f64>,
}

/// Cached intermediates of an image forward pass.
#[derive(Debug, Clone)]
pub struct ImageTape {
    mean_patch: Vec<f64>,
    mean_hidden: Vec<f64>,
    pre_norm: Vec<f64>,
}

/// Gradient buffers mirroring [`ToyTextEncoder`] parameter shapes.
#[derive(Debug, Clone)]
pub struct TextEncoderGrads {
    pub token_table: Matrix,
    pub pos_table: Matrix,
    pub proj: Matrix,
}

/// Gradient buffers mirroring [`ToyImageEncoder`] parameter shapes.
#[derive(Debug, Clone)]
pub struct ImageEncoderGrads {
    pub patch_proj: Matrix,
    pub pos_grid: Grid,
    pub proj: Matrix,
}

/// Token-based text encoder: mean over positions of (token embedding +
/// positional embedding), projected to the output dimension and normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTextEncoder {
    pub token_table: Matrix, // vocab x hidden
    pub pos_table: Matrix,   // context_len x hidden
    pub proj: Matrix,        // hidden x embed_dim
}

impl ToyTextEncoder {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let bound = 1.0 / (cfg.hidden as f64).sqrt();
        Self {
            token_table: uniform_matrix(
                cfg.vocab,
                cfg.hidden,
                bound,
                derive_seed(seed, "init/text.token_table"),
            ),
            pos_table: uniform_matrix(
                cfg.context_len,
                cfg.hidden,
                bound,
                derive_seed(seed, "init/text.pos_table"),
            ),
            proj: uniform_matrix(
                cfg.hidden,
                cfg.embed_dim,
                bound,
                derive_seed(seed, "init/text.proj"),
            ),
        }
    }

    pub fn vocab(&self) -> usize {
        self.token_table.rows()
    }

    pub fn hidden(&self) -> usize {
        self.token_table.cols()
    }

    pub fn embed_dim(&self) -> usize {
        self.proj.cols()
    }

    pub fn context_len(&self) -> usize {
        self.pos_table.rows()
    }

    pub fn encode_traced(&self, tokens: &[u32]) -> Result<(Vector, TextTape)> {
        if tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        if tokens.len() > self.context_len() {
            return Err(Error::ContextExceeded {
                len: tokens.len(),
                context: self.context_len(),
            });
        }
        let h = self.hidden();
        let mut mean_hidden = vec![0.0; h];
        for (i, &t) in tokens.iter().enumerate() {
            let t = t as usize;
            if t >= self.vocab() {
                return Err(Error::TokenOutOfRange {
                    token: t as u32,
                    vocab: self.vocab(),
                });
            }
            let tok_row = self.token_table.row(t);
            let pos_row = self.pos_table.row(i);
            for b in 0..h {
                mean_hidden[b] += tok_row[b] + pos_row[b];
            }
        }
        let inv_len = 1.0 / tokens.len() as f64;
        for x in &mut mean_hidden {
            *x *= inv_len;
        }
        let pre_norm = project(&self.proj, &mean_hidden);
        let out = Vector::new(l2_normalize_slice(&pre_norm)?)?;
        Ok((
            out,
            TextTape {
                tokens: tokens.to_vec(),
                mean_hidden,
                pre_norm,
            },
        ))
    }

    pub fn encode(&self, tokens: &[u32]) -> Result<Vector> {
        Ok(self.encode_traced(tokens)?.0)
    }

    /// Accumulates parameter gradients for one sample given the gradient of
    /// the loss with respect to the normalized output embedding.
    pub fn backward(&self, tape: &TextTape, grad_out: &[f64], grads: &mut TextEncoderGrads) {
        let grad_hidden = backward_head(&self.proj, &tape.mean_hidden, &tape.pre_norm, grad_out, &mut grads.proj);
        let inv_len = 1.0 / tape.tokens.len() as f64;
        for (i, &t) in tape.tokens.iter().enumerate() {
            let tok_row = grads.token_table.row_mut(t as usize);
            for b in 0..grad_hidden.len() {
                tok_row[b] += grad_hidden[b] * inv_len;
            }
            let pos_row = grads.pos_table.row_mut(i);
            for b in 0..grad_hidden.len() {
                pos_row[b] += grad_hidden[b] * inv_len;
            }
        }
    }

    /// Replaces the positional table with an interpolated version covering
    /// `new_len` positions. All other parameters are untouched.
    pub fn grow_context(&mut self, new_len: usize) -> Result<()> {
        let current = self.context_len();
        if new_len < current {
            return Err(Error::ShrinkNotAllowed {
                from: current,
                to: new_len,
            });
        }
        if new_len == current {
            return Ok(());
        }
        self.pos_table = interpolate_positions_1d(&self.pos_table, new_len)?;
        Ok(())
    }

    pub fn zero_grads(&self) -> TextEncoderGrads {
        TextEncoderGrads {
            token_table: Matrix::zeros(self.token_table.rows(), self.token_table.cols()),
            pos_table: Matrix::zeros(self.pos_table.rows(), self.pos_table.cols()),
            proj: Matrix::zeros(self.proj.rows(), self.proj.cols()),
        }
    }
}

/// Patch-grid image encoder: mean over grid cells of (projected patch +
/// positional embedding), projected and normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyImageEncoder {
    pub patch_proj: Matrix, // patch_features x hidden
    pub pos_grid: Grid,     // side x side x hidden
    pub proj: Matrix,       // hidden x embed_dim
}

impl ToyImageEncoder {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let bound = 1.0 / (cfg.hidden as f64).sqrt();
        Self {
            patch_proj: uniform_matrix(
                cfg.patch_features,
                cfg.hidden,
                bound,
                derive_seed(seed, "init/image.patch_proj"),
            ),
            pos_grid: uniform_grid(
                cfg.resolution,
                cfg.hidden,
                bound,
                derive_seed(seed, "init/image.pos_grid"),
            ),
            proj: uniform_matrix(
                cfg.hidden,
                cfg.embed_dim,
                bound,
                derive_seed(seed, "init/image.proj"),
            ),
        }
    }

    pub fn patch_features(&self) -> usize {
        self.patch_proj.rows()
    }

    pub fn hidden(&self) -> usize {
        self.patch_proj.cols()
    }

    pub fn embed_dim(&self) -> usize {
        self.proj.cols()
    }

    pub fn resolution(&self) -> usize {
        self.pos_grid.side()
    }

    pub fn encode_traced(&self, patches: &Grid) -> Result<(Vector, ImageTape)> {
        let side = self.resolution();
        if patches.side() != side || patches.channels() != self.patch_features() {
            return Err(Error::GridMismatch {
                got_side: patches.side(),
                got_ch: patches.channels(),
                want_side: side,
                want_ch: self.patch_features(),
            });
        }
        let h = self.hidden();
        let f = self.patch_features();
        let mut mean_hidden = vec![0.0; h];
        let mut mean_patch = vec![0.0; f];
        for i in 0..side {
            for j in 0..side {
                let patch = patches.cell(i, j);
                let pos = self.pos_grid.cell(i, j);
                for b in 0..h {
                    let mut v = 0.0;
                    for a in 0..f {
                        v += patch[a] * self.patch_proj.get(a, b);
                    }
                    mean_hidden[b] += v + pos[b];
                }
                for a in 0..f {
                    mean_patch[a] += patch[a];
                }
            }
        }
        let inv_cells = 1.0 / (side * side) as f64;
        for x in &mut mean_hidden {
            *x *= inv_cells;
        }
        for x in &mut mean_patch {
            *x *= inv_cells;
        }
        let pre_norm = project(&self.proj, &mean_hidden);
        let out = Vector::new(l2_normalize_slice(&pre_norm)?)?;
        Ok((
            out,
            ImageTape {
                mean_patch,
                mean_hidden,
                pre_norm,
            },
        ))
    }

    pub fn encode(&self, patches: &Grid) -> Result<Vector> {
        Ok(self.encode_traced(patches)?.0)
    }

    pub fn backward(&self, tape: &ImageTape, grad_out: &[f64], grads: &mut ImageEncoderGrads) {
        let grad_hidden = backward_head(&self.proj, &tape.mean_hidden, &tape.pre_norm, grad_out, &mut grads.proj);
        let side = self.resolution();
        let inv_cells = 1.0 / (side * side) as f64;
        for i in 0..side {
            for j in 0..side {
                let cell = grads.pos_grid.cell_mut(i, j);
                for b in 0..grad_hidden.len() {
                    cell[b] += grad_hidden[b] * inv_cells;
                }
            }
        }
        // Mean over cells makes the patch_proj pullback the outer product of
        // the mean patch with the hidden gradient.
        for a in 0..tape.mean_patch.len() {
            let row = grads.patch_proj.row_mut(a);
            for b in 0..grad_hidden.len() {
                row[b] += tape.mean_patch[a] * grad_hidden[b];
            }
        }
    }

    pub fn grow_resolution(&mut self, new_side: usize) -> Result<()> {
        let current = self.resolution();
        if new_side < current {
            return Err(Error::ShrinkNotAllowed {
                from: current,
                to: new_side,
            });
        }
        if new_side == current {
            return Ok(());
        }
        self.pos_grid = interpolate_positions_2d(&self.pos_grid, new_side)?;
        Ok(())
    }

    pub fn zero_grads(&self) -> ImageEncoderGrads {
        ImageEncoderGrads {
            patch_proj: Matrix::zeros(self.patch_proj.rows(), self.patch_proj.cols()),
            pos_grid: Grid::zeros(self.pos_grid.side(), self.pos_grid.channels()),
            proj: Matrix::zeros(self.proj.rows(), self.proj.cols()),
        }
    }
}

fn project(proj: &Matrix, hidden: &[f64]) -> Vec<f64> {
    let d = proj.cols();
    let mut out = vec![0.0; d];
    for (a, &m) in hidden.iter().enumerate() {
        let row = proj.row(a);
        for j in 0..d {
            out[j] += m * row[j];
        }
    }
    out
}

/// Shared backward pass through normalize + projection. Accumulates the
/// projection gradient and returns the gradient w.r.t. the mean hidden state.
fn backward_head(
    proj: &Matrix,
    mean_hidden: &[f64],
    pre_norm: &[f64],
    grad_out: &[f64],
    grad_proj: &mut Matrix,
) -> Vec<f64> {
    let d = pre_norm.len();
    let n = norm(pre_norm);
    let mut g_dot_y = 0.0;
    for j in 0..d {
        g_dot_y += grad_out[j] * (pre_norm[j] / n);
    }
    let mut grad_pre = vec![0.0; d];
    for j in 0..d {
        grad_pre[j] = (grad_out[j] - g_dot_y * (pre_norm[j] / n)) / n;
    }
    let h = mean_hidden.len();
    let mut grad_hidden = vec![0.0; h];
    for a in 0..h {
        let row = proj.row(a);
        let grad_row = grad_proj.row_mut(a);
        let mut acc = 0.0;
        for j in 0..d {
            grad_row[j] += mean_hidden[a] * grad_pre[j];
            acc += row[j] * grad_pre[j];
        }
        grad_hidden[a] = acc;
    }
    grad_hidden
}

/// Linear interpolation of a positional table along the position axis with
/// fixed endpoints. Position i' maps to coordinate i' * (L-1) / (L'-1) and is
/// blended as a + frac * (b - a), which preserves nodes and constants exactly.
pub fn interpolate_positions_1d(pos_table: &Matrix, new_len: usize) -> Result<Matrix> {
    let old_len = pos_table.rows();
    if old_len < 2 || new_len < 2 {
        return Err(Error::BadLength(format!(
            "interpolation needs >= 2 positions, got {old_len} -> {new_len}"
        )));
    }
    if new_len == old_len {
        return Ok(pos_table.clone());
    }
    let cols = pos_table.cols();
    let mut out = Matrix::zeros(new_len, cols);
    let scale = (old_len - 1) as f64 / (new_len - 1) as f64;
    for i_new in 0..new_len {
        let x = i_new as f64 * scale;
        let i0 = x.floor() as usize;
        let row_out = out.row_mut(i_new);
        if i0 >= old_len - 1 {
            row_out.copy_from_slice(pos_table.row(old_len - 1));
            continue;
        }
        let frac = x - i0 as f64;
        let a = pos_table.row(i0);
        let b = pos_table.row(i0 + 1);
        for c in 0..cols {
            row_out[c] = a[c] + frac * (b[c] - a[c]);
        }
    }
    Ok(out)
}

/// Separable bilinear interpolation of a square positional grid: the 1-D
/// interpolation applied along each grid axis in turn.
pub fn interpolate_positions_2d(pos_grid: &Grid, new_side: usize) -> Result<Grid> {
    let old_side = pos_grid.side();
    if old_side < 2 || new_side < 2 {
        return Err(Error::BadLength(format!(
            "interpolation needs >= 2 positions, got {old_side} -> {new_side}"
        )));
    }
    if new_side == old_side {
        return Ok(pos_grid.clone());
    }
    let ch = pos_grid.channels();
    // Axis 0: rows of length side * channels.
    let as_rows = Matrix::from_vec(pos_grid.data().to_vec(), old_side, old_side * ch)?;
    let rows_interp = interpolate_positions_1d(&as_rows, new_side)?;
    // Axis 1: within each interpolated row, cells of length channels.
    let mut out = Grid::zeros(new_side, ch);
    for i in 0..new_side {
        let row = Matrix::from_vec(rows_interp.row(i).to_vec(), old_side, ch)?;
        let cols_interp = interpolate_positions_1d(&row, new_side)?;
        for j in 0..new_side {
            out.cell_mut(i, j).copy_from_slice(cols_interp.row(j));
        }
    }
    Ok(out)
}

/// Resamples a patch tensor to a new grid side, per channel. Used to feed
/// stored images to a model running at a different resolution; unlike the
/// grow operations this may also downsample.
pub fn resize_patches(patches: &Grid, new_side: usize) -> Result<Grid> {
    interpolate_positions_2d(patches, new_side)
}

/// The full dual-encoder model with its two trainable temperatures.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoderModel {
    pub text: ToyTextEncoder,
    pub image: ToyImageEncoder,
    pub temp_text: Temperature,
    pub temp_mm: Temperature,
}

impl DualEncoderModel {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let temp = Temperature::from_tau(cfg.init_tau)?;
        Ok(Self {
            text: ToyTextEncoder::new(cfg, seed),
            image: ToyImageEncoder::new(cfg, seed),
            temp_text: temp,
            temp_mm: temp,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.text.embed_dim()
    }
}

/// Gradient buffers for every trainable parameter of the model.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub text: TextEncoderGrads,
    pub image: ImageEncoderGrads,
    pub temp_text: f64,
    pub temp_mm: f64,
}

impl ModelGrads {
    pub fn zeros_like(model: &DualEncoderModel) -> Self {
        Self {
            text: model.text.zero_grads(),
            image: model.image.zero_grads(),
            temp_text: 0.0,
            temp_mm: 0.0,
        }
    }

    pub fn reset(&mut self) {
        self.text.token_table.fill(0.0);
        self.text.pos_table.fill(0.0);
        self.text.proj.fill(0.0);
        self.image.patch_proj.fill(0.0);
        self.image.pos_grid.data_mut().iter_mut().for_each(|x| *x = 0.0);
        self.image.proj.fill(0.0);
        self.temp_text = 0.0;
        self.temp_mm = 0.0;
    }
}
