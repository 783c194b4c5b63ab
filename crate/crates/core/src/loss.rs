//! Contrastive loss family: bidirectional InfoNCE, its hard-negative
//! extension, the matryoshka multi-dimension combination, per-stage joint
//! losses and the unified-batch variant. Every loss returns its value
//! together with analytic gradients for all input embeddings and the
//! temperature logit.

use crate::error::{Error, Result};
use crate::tensor::{log_softmax_stable, norm, pairwise_cosine, EmbeddingBatch, Matrix};

/// Number of hard negatives per triplet sample.
pub const NEGATIVES_PER_QUERY: usize = 7;

/// Trainable softmax temperature, parameterized as log(1/tau) so tau stays
/// positive by construction. The derived tau is clamped to
/// [`Temperature::MIN_TAU`, `Temperature::MAX_TAU`] after every optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature {
    log_inv_tau: f64,
}

impl Temperature {
    pub const MIN_TAU: f64 = 0.005;
    pub const MAX_TAU: f64 = 1.0;
    pub const DEFAULT_TAU: f64 = 0.07;

    pub fn from_tau(tau: f64) -> Result<Self> {
        if !tau.is_finite() || tau < Self::MIN_TAU || tau > Self::MAX_TAU {
            return Err(Error::BadParams(format!(
                "tau {tau} outside [{}, {}]",
                Self::MIN_TAU,
                Self::MAX_TAU
            )));
        }
        Ok(Self {
            log_inv_tau: -tau.ln(),
        })
    }

    pub fn from_log_inv_tau(log_inv_tau: f64) -> Self {
        Self { log_inv_tau }
    }

    pub fn tau(&self) -> f64 {
        (-self.log_inv_tau).exp()
    }

    pub fn inv_tau(&self) -> f64 {
        self.log_inv_tau.exp()
    }

    pub fn log_inv_tau(&self) -> f64 {
        self.log_inv_tau
    }

    pub(crate) fn log_inv_tau_mut(&mut self) -> &mut f64 {
        &mut self.log_inv_tau
    }

    /// Projects the logit back into the clamp range.
    pub fn clamp(&mut self) {
        let lo = -Self::MAX_TAU.ln();
        let hi = -Self::MIN_TAU.ln();
        self.log_inv_tau = self.log_inv_tau.clamp(lo, hi);
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self::from_tau(Self::DEFAULT_TAU).expect("default tau is in range")
    }
}

/// A batch of (query, positive) embedding pairs with matching shapes.
#[derive(Debug, Clone)]
pub struct PairBatch {
    queries: EmbeddingBatch,
    positives: EmbeddingBatch,
}

impl PairBatch {
    pub fn new(queries: EmbeddingBatch, positives: EmbeddingBatch) -> Result<Self> {
        if queries.k() != positives.k() {
            return Err(Error::DimMismatch {
                left: queries.k(),
                right: positives.k(),
            });
        }
        if queries.dim() != positives.dim() {
            return Err(Error::DimMismatch {
                left: queries.dim(),
                right: positives.dim(),
            });
        }
        Ok(Self { queries, positives })
    }

    pub fn queries(&self) -> &EmbeddingBatch {
        &self.queries
    }

    pub fn positives(&self) -> &EmbeddingBatch {
        &self.positives
    }

    pub fn k(&self) -> usize {
        self.queries.k()
    }

    pub fn dim(&self) -> usize {
        self.queries.dim()
    }
}

/// A batch of (query, positive, 7 hard negatives) samples. `negatives[j]`
/// holds the j-th negative of every sample, row-aligned with the queries.
#[derive(Debug, Clone)]
pub struct TripletBatch {
    queries: EmbeddingBatch,
    positives: EmbeddingBatch,
    negatives: Vec<EmbeddingBatch>,
}

impl TripletBatch {
    pub fn new(
        queries: EmbeddingBatch,
        positives: EmbeddingBatch,
        negatives: Vec<EmbeddingBatch>,
    ) -> Result<Self> {
        if negatives.len() != NEGATIVES_PER_QUERY {
            return Err(Error::NegativesCountMismatch {
                expected: NEGATIVES_PER_QUERY,
                got: negatives.len(),
            });
        }
        let k = queries.k();
        let d = queries.dim();
        for batch in std::iter::once(&positives).chain(negatives.iter()) {
            if batch.k() != k {
                return Err(Error::DimMismatch {
                    left: k,
                    right: batch.k(),
                });
            }
            if batch.dim() != d {
                return Err(Error::DimMismatch {
                    left: d,
                    right: batch.dim(),
                });
            }
        }
        Ok(Self {
            queries,
            positives,
            negatives,
        })
    }

    pub fn queries(&self) -> &EmbeddingBatch {
        &self.queries
    }

    pub fn positives(&self) -> &EmbeddingBatch {
        &self.positives
    }

    pub fn negatives(&self) -> &[EmbeddingBatch] {
        &self.negatives
    }

    pub fn k(&self) -> usize {
        self.queries.k()
    }

    pub fn dim(&self) -> usize {
        self.queries.dim()
    }
}

/// Loss value plus analytic gradients matching the input shapes.
/// `grad_negatives` is empty for losses without negatives.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grad_queries: Matrix,
    pub grad_positives: Matrix,
    pub grad_negatives: Vec<Matrix>,
    pub grad_log_inv_tau: f64,
}

impl LossOutput {
    fn zeros(k: usize, d: usize, num_negatives: usize) -> Self {
        Self {
            value: 0.0,
            grad_queries: Matrix::zeros(k, d),
            grad_positives: Matrix::zeros(k, d),
            grad_negatives: (0..num_negatives).map(|_| Matrix::zeros(k, d)).collect(),
            grad_log_inv_tau: 0.0,
        }
    }

    fn scale(&mut self, w: f64) {
        self.value *= w;
        self.grad_log_inv_tau *= w;
        for g in [&mut self.grad_queries, &mut self.grad_positives]
            .into_iter()
            .chain(self.grad_negatives.iter_mut())
        {
            g.data_mut().iter_mut().for_each(|x| *x *= w);
        }
    }
}

/// Mean cross-entropy over rows of a score matrix with one target column per
/// row. Returns the value and the gradient with respect to every score.
fn ce_rows(scores: &Matrix, targets: &[usize]) -> Result<(f64, Matrix)> {
    let rows = scores.rows();
    debug_assert_eq!(rows, targets.len());
    let inv_rows = 1.0 / rows as f64;
    let mut grad = Matrix::zeros(rows, scores.cols());
    let mut total = 0.0;
    for i in 0..rows {
        let log_probs = log_softmax_stable(scores.row(i))?;
        total += -log_probs[targets[i]];
        let grad_row = grad.row_mut(i);
        for (j, lp) in log_probs.iter().enumerate() {
            grad_row[j] = lp.exp() * inv_rows;
        }
        grad_row[targets[i]] -= inv_rows;
    }
    Ok((total * inv_rows, grad))
}

fn scaled(m: &Matrix, factor: f64) -> Matrix {
    let mut out = m.clone();
    out.data_mut().iter_mut().for_each(|x| *x *= factor);
    out
}

fn frobenius_dot(a: &Matrix, b: &Matrix) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        acc += x * y;
    }
    acc
}

/// Pulls dL/dC back through C = pairwise_cosine(a, b) into the raw rows:
/// d cos(u,v)/du = (v_hat - cos * u_hat) / |u|.
fn accumulate_cosine_grads(
    a: &EmbeddingBatch,
    b: &EmbeddingBatch,
    cos: &Matrix,
    dl_dcos: &Matrix,
    grad_a: &mut Matrix,
    grad_b: &mut Matrix,
) {
    let d = a.dim();
    let na: Vec<f64> = (0..a.k()).map(|i| norm(a.row(i))).collect();
    let nb: Vec<f64> = (0..b.k()).map(|j| norm(b.row(j))).collect();
    for i in 0..a.k() {
        let row_a = a.row(i);
        for j in 0..b.k() {
            let coeff = dl_dcos.get(i, j);
            let c = cos.get(i, j);
            let row_b = b.row(j);
            let ga = grad_a.row_mut(i);
            for x in 0..d {
                let a_hat = row_a[x] / na[i];
                let b_hat = row_b[x] / nb[j];
                ga[x] += coeff * (b_hat - c * a_hat) / na[i];
            }
            let gb = grad_b.row_mut(j);
            for x in 0..d {
                let a_hat = row_a[x] / na[i];
                let b_hat = row_b[x] / nb[j];
                gb[x] += coeff * (a_hat - c * b_hat) / nb[j];
            }
        }
    }
}

/// Bidirectional InfoNCE over a pair batch: each direction is the batch mean
/// of the cross-entropy of the matched cosine against all in-batch candidates,
/// with similarities divided by tau.
pub fn info_nce(batch: &PairBatch, temp: &Temperature) -> Result<LossOutput> {
    let q = batch.queries();
    let p = batch.positives();
    let k = batch.k();
    let d = batch.dim();
    let cos = pairwise_cosine(q, p)?;
    let inv_tau = temp.inv_tau();
    let scores = scaled(&cos, inv_tau);
    let targets: Vec<usize> = (0..k).collect();
    let (v_fwd, g_fwd) = ce_rows(&scores, &targets)?;
    let scores_t = scores.transpose();
    let (v_bwd, g_bwd) = ce_rows(&scores_t, &targets)?;

    // dL/dS combines the forward rows and the transposed backward rows.
    let mut g_scores = g_fwd;
    for i in 0..k {
        for j in 0..k {
            let v = g_scores.get(i, j) + g_bwd.get(j, i);
            g_scores.set(i, j, v);
        }
    }
    let grad_log_inv_tau = frobenius_dot(&g_scores, &scores);
    let dl_dcos = scaled(&g_scores, inv_tau);
    let mut out = LossOutput::zeros(k, d, 0);
    accumulate_cosine_grads(q, p, &cos, &dl_dcos, &mut out.grad_queries, &mut out.grad_positives);
    out.value = v_fwd + v_bwd;
    out.grad_log_inv_tau = grad_log_inv_tau;
    Ok(out)
}

/// InfoNCE extended with hard negatives. The forward denominator sums, over
/// every batch index, the positive term plus all seven negative terms, so
/// negatives act as shared in-batch negatives. The backward direction is
/// plain InfoNCE of positives against queries.
pub fn info_nce_hard(batch: &TripletBatch, temp: &Temperature) -> Result<LossOutput> {
    let q = batch.queries();
    let p = batch.positives();
    let k = batch.k();
    let d = batch.dim();
    let inv_tau = temp.inv_tau();

    let mut parts: Vec<&EmbeddingBatch> = Vec::with_capacity(1 + NEGATIVES_PER_QUERY);
    parts.push(p);
    parts.extend(batch.negatives().iter());
    let candidates = EmbeddingBatch::vstack(&parts)?;

    let cos_fwd = pairwise_cosine(q, &candidates)?;
    let scores_fwd = scaled(&cos_fwd, inv_tau);
    let targets: Vec<usize> = (0..k).collect();
    let (v_fwd, g_fwd) = ce_rows(&scores_fwd, &targets)?;

    let cos_bwd = pairwise_cosine(p, q)?;
    let scores_bwd = scaled(&cos_bwd, inv_tau);
    let (v_bwd, g_bwd) = ce_rows(&scores_bwd, &targets)?;

    let grad_log_inv_tau =
        frobenius_dot(&g_fwd, &scores_fwd) + frobenius_dot(&g_bwd, &scores_bwd);

    let mut grad_q = Matrix::zeros(k, d);
    let mut grad_candidates = Matrix::zeros(candidates.k(), d);
    accumulate_cosine_grads(
        q,
        &candidates,
        &cos_fwd,
        &scaled(&g_fwd, inv_tau),
        &mut grad_q,
        &mut grad_candidates,
    );

    // Split candidate gradients back into the positive and negative blocks.
    let mut grad_p = Matrix::zeros(k, d);
    for i in 0..k {
        grad_p.row_mut(i).copy_from_slice(grad_candidates.row(i));
    }
    let mut grad_negs: Vec<Matrix> = Vec::with_capacity(NEGATIVES_PER_QUERY);
    for j in 0..NEGATIVES_PER_QUERY {
        let mut g = Matrix::zeros(k, d);
        for i in 0..k {
            g.row_mut(i)
                .copy_from_slice(grad_candidates.row((j + 1) * k + i));
        }
        grad_negs.push(g);
    }

    accumulate_cosine_grads(
        p,
        q,
        &cos_bwd,
        &scaled(&g_bwd, inv_tau),
        &mut grad_p,
        &mut grad_q,
    );

    Ok(LossOutput {
        value: v_fwd + v_bwd,
        grad_queries: grad_q,
        grad_positives: grad_p,
        grad_negatives: grad_negs,
        grad_log_inv_tau,
    })
}

/// Inputs a base contrastive loss can be re-evaluated on at truncated
/// dimensionalities, with gradient accumulation back into the full rows.
pub trait MrlBatch: Sized {
    fn embed_dim(&self) -> usize;
    /// Same batch with every row truncated and re-normalized to `dim`.
    fn truncated(&self, dim: usize) -> Result<Self>;
    fn zero_output(&self) -> LossOutput;
    /// Adds the level gradients (w.r.t. the truncated rows) into the
    /// full-dimension accumulator, chaining through the re-normalization.
    fn chain_level_grads(&self, level: &LossOutput, dim: usize, acc: &mut LossOutput);
}

/// Chain rule through y = u / |u| where u is the prefix of the full row.
fn chain_truncate_renorm_row(full_row: &[f64], dim: usize, grad_level: &[f64], acc: &mut [f64]) {
    let u = &full_row[..dim];
    let n = norm(u);
    let mut g_dot_y = 0.0;
    for c in 0..dim {
        g_dot_y += grad_level[c] * (u[c] / n);
    }
    for c in 0..dim {
        acc[c] += (grad_level[c] - g_dot_y * (u[c] / n)) / n;
    }
}

fn chain_batch(full: &EmbeddingBatch, grad_level: &Matrix, dim: usize, acc: &mut Matrix) {
    let identity = dim == full.dim();
    for i in 0..full.k() {
        if identity {
            let acc_row = acc.row_mut(i);
            for (c, g) in grad_level.row(i).iter().enumerate() {
                acc_row[c] += g;
            }
        } else {
            chain_truncate_renorm_row(full.row(i), dim, grad_level.row(i), acc.row_mut(i));
        }
    }
}

impl MrlBatch for PairBatch {
    fn embed_dim(&self) -> usize {
        self.dim()
    }

    fn truncated(&self, dim: usize) -> Result<Self> {
        PairBatch::new(
            self.queries.truncate_renorm(dim)?,
            self.positives.truncate_renorm(dim)?,
        )
    }

    fn zero_output(&self) -> LossOutput {
        LossOutput::zeros(self.k(), self.dim(), 0)
    }

    fn chain_level_grads(&self, level: &LossOutput, dim: usize, acc: &mut LossOutput) {
        chain_batch(&self.queries, &level.grad_queries, dim, &mut acc.grad_queries);
        chain_batch(&self.positives, &level.grad_positives, dim, &mut acc.grad_positives);
    }
}

impl MrlBatch for TripletBatch {
    fn embed_dim(&self) -> usize {
        self.dim()
    }

    fn truncated(&self, dim: usize) -> Result<Self> {
        let negatives = self
            .negatives
            .iter()
            .map(|n| n.truncate_renorm(dim))
            .collect::<Result<Vec<_>>>()?;
        TripletBatch::new(
            self.queries.truncate_renorm(dim)?,
            self.positives.truncate_renorm(dim)?,
            negatives,
        )
    }

    fn zero_output(&self) -> LossOutput {
        LossOutput::zeros(self.k(), self.dim(), NEGATIVES_PER_QUERY)
    }

    fn chain_level_grads(&self, level: &LossOutput, dim: usize, acc: &mut LossOutput) {
        chain_batch(&self.queries, &level.grad_queries, dim, &mut acc.grad_queries);
        chain_batch(&self.positives, &level.grad_positives, dim, &mut acc.grad_positives);
        for (j, neg) in self.negatives.iter().enumerate() {
            chain_batch(neg, &level.grad_negatives[j], dim, &mut acc.grad_negatives[j]);
        }
    }
}

fn validate_mrl_dims(dims: &[usize], d: usize) -> Result<()> {
    if dims.is_empty() {
        return Err(Error::BadDims("empty dimension list".into()));
    }
    for w in dims.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::BadDims(format!(
                "dims must be strictly ascending, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if dims[0] == 0 {
        return Err(Error::BadDims("dims must be positive".into()));
    }
    if *dims.last().unwrap() > d {
        return Err(Error::BadDims(format!(
            "dim {} exceeds embedding dim {d}",
            dims.last().unwrap()
        )));
    }
    Ok(())
}

/// Matryoshka combination with per-level weights. The full dimension level is
/// evaluated on the inputs unchanged (cosine scores are scale invariant);
/// lower levels go through truncate + re-normalize, with the exact chain rule
/// applied when folding gradients back into the full-dimension coordinates.
pub fn mrl_loss_weighted<B: MrlBatch>(
    base: impl Fn(&B, &Temperature) -> Result<LossOutput>,
    inputs: &B,
    dims: &[usize],
    weights: &[f64],
    temp: &Temperature,
) -> Result<LossOutput> {
    let d = inputs.embed_dim();
    validate_mrl_dims(dims, d)?;
    if weights.len() != dims.len() {
        return Err(Error::BadDims(format!(
            "{} weights for {} dims",
            weights.len(),
            dims.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::BadDims("weights must be finite and >= 0".into()));
    }
    let mut levels: Vec<(usize, f64)> = dims.iter().copied().zip(weights.iter().copied()).collect();
    if *dims.last().unwrap() != d {
        levels.push((d, 1.0));
    }
    let mut acc = inputs.zero_output();
    for (dim, w) in levels {
        let truncated_storage;
        let level_inputs = if dim == d {
            inputs
        } else {
            truncated_storage = inputs.truncated(dim)?;
            &truncated_storage
        };
        let mut out = base(level_inputs, temp)?;
        out.scale(w);
        acc.value += out.value;
        acc.grad_log_inv_tau += out.grad_log_inv_tau;
        inputs.chain_level_grads(&out, dim, &mut acc);
    }
    Ok(acc)
}

/// Unweighted sum of the base loss across all matryoshka dimension levels.
pub fn mrl_loss<B: MrlBatch>(
    base: impl Fn(&B, &Temperature) -> Result<LossOutput>,
    inputs: &B,
    dims: &[usize],
    temp: &Temperature,
) -> Result<LossOutput> {
    let weights = vec![1.0; dims.len()];
    mrl_loss_weighted(base, inputs, dims, &weights, temp)
}

/// Training stage index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
    Three,
}

impl Stage {
    pub fn index(&self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
            Stage::Three => 3,
        }
    }

    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            3 => Ok(Stage::Three),
            _ => Err(Error::BadParams(format!("stage index {i}"))),
        }
    }
}

/// Text-branch input of a stage loss: pairs for stages 1-2, triplets for 3.
#[derive(Debug)]
pub enum TextBatch<'a> {
    Pairs(&'a PairBatch),
    Triplets(&'a TripletBatch),
}

/// Joint stage loss output; gradients are kept per branch because the two
/// branches have independent batch shapes and temperatures.
#[derive(Debug, Clone)]
pub struct StageLossOutput {
    pub value: f64,
    pub text: LossOutput,
    pub mm: LossOutput,
}

/// Per-stage joint loss: text branch + multimodal branch, each wrapped in the
/// matryoshka combination and using its own temperature. Stages 1-2 use plain
/// InfoNCE on the text branch, stage 3 the hard-negative extension.
pub fn stage_loss(
    stage: Stage,
    text: TextBatch,
    mm: &PairBatch,
    temp_text: &Temperature,
    temp_mm: &Temperature,
    mrl_dims: &[usize],
) -> Result<StageLossOutput> {
    let text_out = match (stage, text) {
        (Stage::One | Stage::Two, TextBatch::Pairs(p)) => {
            mrl_loss(info_nce, p, mrl_dims, temp_text)?
        }
        (Stage::Three, TextBatch::Triplets(t)) => mrl_loss(info_nce_hard, t, mrl_dims, temp_text)?,
        (s, TextBatch::Pairs(_)) => {
            return Err(Error::WrongBatchKind {
                stage: s.index(),
                expected: "triplet",
            })
        }
        (s, TextBatch::Triplets(_)) => {
            return Err(Error::WrongBatchKind {
                stage: s.index(),
                expected: "pair",
            })
        }
    };
    let mm_out = mrl_loss(info_nce, mm, mrl_dims, temp_mm)?;
    Ok(StageLossOutput {
        value: text_out.value + mm_out.value,
        text: text_out,
        mm: mm_out,
    })
}

/// Origin of a row in a unified mixed batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    /// Original image paired with its caption.
    ImageText,
    /// Text query paired with a matching text.
    TextText,
    /// Two augmented views of the same image.
    SelfSupervised,
}

/// A pair batch whose rows mix modalities, tagged per row so a trainer can
/// route gradients back to the right encoder.
#[derive(Debug, Clone)]
pub struct MixedBatch {
    pairs: PairBatch,
    kinds: Vec<RowKind>,
}

impl MixedBatch {
    pub fn new(pairs: PairBatch, kinds: Vec<RowKind>) -> Result<Self> {
        if kinds.len() != pairs.k() {
            return Err(Error::DimMismatch {
                left: pairs.k(),
                right: kinds.len(),
            });
        }
        Ok(Self { pairs, kinds })
    }

    pub fn pairs(&self) -> &PairBatch {
        &self.pairs
    }

    pub fn kinds(&self) -> &[RowKind] {
        &self.kinds
    }

    pub fn k(&self) -> usize {
        self.pairs.k()
    }
}

/// Single bidirectional InfoNCE over the entire mixed batch with one shared
/// temperature, so in-batch negatives cross modalities.
pub fn unified_loss(batch: &MixedBatch, temp: &Temperature) -> Result<LossOutput> {
    info_nce(&batch.pairs, temp)
}

impl MrlBatch for MixedBatch {
    fn embed_dim(&self) -> usize {
        self.pairs.dim()
    }

    fn truncated(&self, dim: usize) -> Result<Self> {
        MixedBatch::new(self.pairs.truncated(dim)?, self.kinds.clone())
    }

    fn zero_output(&self) -> LossOutput {
        self.pairs.zero_output()
    }

    fn chain_level_grads(&self, level: &LossOutput, dim: usize, acc: &mut LossOutput) {
        self.pairs.chain_level_grads(level, dim, acc);
    }
}
