use super::ModelParams;
use crate::error::{PcsError, Result};
use crate::numerics::{softmax_unchecked, Matrix, RngStream};

/// Cached activations of one encoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// Block input `h` (L × d).
    pub input: Matrix,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// Attention weights per head (L × L, rows sum to one).
    pub attn: Vec<Matrix>,
    /// Concatenated per-head `A·V` (L × d).
    pub context: Matrix,
    /// `context·W_O + b_O` before dropout.
    pub attn_pre: Matrix,
    pub attn_mask: Option<Matrix>,
    /// Attention branch added to the residual stream.
    pub attn_out: Matrix,
    /// `input + attn_out`.
    pub resid: Matrix,
    /// MLP pre-activation `resid·W_1 + b_1`.
    pub hidden_pre: Matrix,
    pub hidden: Matrix,
    /// `hidden·W_2 + b_2` before dropout.
    pub mlp_pre: Matrix,
    pub mlp_mask: Option<Matrix>,
    /// MLP branch added to the residual stream.
    pub mlp_out: Matrix,
    /// `resid + mlp_out`.
    pub output: Matrix,
}

/// Everything the backward and relevance passes need from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub tokens: Vec<usize>,
    /// Token plus position embedding per input token (L × d).
    pub embedded: Matrix,
    pub layers: Vec<LayerTrace>,
    /// Mean over token states before dropout (1 × d).
    pub pooled_pre: Matrix,
    pub pooled_mask: Option<Matrix>,
    pub pooled: Matrix,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub train_mode: bool,
}

impl ForwardTrace {
    pub fn predicted_class(&self) -> usize {
        argmax(&self.probs)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn check_tokens(params: &ModelParams, tokens: &[usize]) -> Result<()> {
    let cfg = &params.config;
    if tokens.is_empty() {
        return Err(PcsError::Input("empty token sequence".into()));
    }
    if tokens.len() > cfg.max_seq_len {
        return Err(PcsError::Input(format!(
            "{} tokens exceed max_seq_len {}",
            tokens.len(),
            cfg.max_seq_len
        )));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(PcsError::Input(format!(
            "token id {bad} out of range for vocabulary of {}",
            cfg.vocab_size
        )));
    }
    Ok(())
}

fn dropout(x: &Matrix, rate: f64, rng: Option<&mut RngStream>) -> (Matrix, Option<Matrix>) {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 - rate;
            let mut mask = Matrix::zeros(x.rows(), x.cols());
            for m in mask.data_mut() {
                *m = if rng.uniform() < keep { 1.0 / keep } else { 0.0 };
            }
            (x.zip_map(&mask, |a, m| a * m), Some(mask))
        }
        _ => (x.clone(), None),
    }
}

fn linear(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    let mut z = x.mm(w);
    z.add_row_broadcast(b);
    z
}

/// Copies columns `start..start+width` into a new matrix.
pub(crate) fn columns(m: &Matrix, start: usize, width: usize) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), width);
    for r in 0..m.rows() {
        out.row_mut(r).copy_from_slice(&m.row(r)[start..start + width]);
    }
    out
}

pub(crate) fn put_columns(dst: &mut Matrix, src: &Matrix, start: usize) {
    let width = src.cols();
    for r in 0..src.rows() {
        dst.row_mut(r)[start..start + width].copy_from_slice(src.row(r));
    }
}

/// Runs the classifier. `train` carries the dropout stream; `None` means
/// eval mode, which is fully deterministic.
pub fn forward(
    params: &ModelParams,
    tokens: &[usize],
    mut train: Option<&mut RngStream>,
) -> Result<ForwardTrace> {
    check_tokens(params, tokens)?;
    let cfg = &params.config;
    let (len, d) = (tokens.len(), cfg.embed_dim);
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let rate = cfg.dropout_rate;

    let mut h = Matrix::zeros(len, d);
    for (i, &t) in tokens.iter().enumerate() {
        let row = h.row_mut(i);
        for ((x, e), p) in row
            .iter_mut()
            .zip(params.token_embed.row(t))
            .zip(params.pos_embed.row(i))
        {
            *x = e + p;
        }
    }
    let embedded = h.clone();

    let mut layers = Vec::with_capacity(cfg.num_layers);
    for lp in &params.layers {
        let q = linear(&h, &lp.w_q, &lp.b_q);
        let k = linear(&h, &lp.w_k, &lp.b_k);
        let v = linear(&h, &lp.w_v, &lp.b_v);
        let mut context = Matrix::zeros(len, d);
        let mut attn = Vec::with_capacity(cfg.num_heads);
        for head in 0..cfg.num_heads {
            let (qh, kh, vh) = (
                columns(&q, head * dh, dh),
                columns(&k, head * dh, dh),
                columns(&v, head * dh, dh),
            );
            let mut a = qh.mmt(&kh);
            a.scale(scale);
            for r in 0..len {
                let p = softmax_unchecked(a.row(r), 1.0);
                a.row_mut(r).copy_from_slice(&p);
            }
            put_columns(&mut context, &a.mm(&vh), head * dh);
            attn.push(a);
        }
        let attn_pre = linear(&context, &lp.w_o, &lp.b_o);
        let (attn_out, attn_mask) = dropout(&attn_pre, rate, train.as_deref_mut());
        let mut resid = h.clone();
        resid.add_assign(&attn_out);

        let hidden_pre = linear(&resid, &lp.w_1, &lp.b_1);
        let hidden = hidden_pre.map(|x| x.max(0.0));
        let mlp_pre = linear(&hidden, &lp.w_2, &lp.b_2);
        let (mlp_out, mlp_mask) = dropout(&mlp_pre, rate, train.as_deref_mut());
        let mut output = resid.clone();
        output.add_assign(&mlp_out);

        layers.push(LayerTrace {
            input: h,
            q,
            k,
            v,
            attn,
            context,
            attn_pre,
            attn_mask,
            attn_out,
            resid,
            hidden_pre,
            hidden,
            mlp_pre,
            mlp_mask,
            mlp_out,
            output: output.clone(),
        });
        h = output;
    }

    let mut pooled_pre = h.col_sums();
    pooled_pre.scale(1.0 / len as f64);
    let (pooled, pooled_mask) = dropout(&pooled_pre, rate, train.as_deref_mut());
    let logits = linear(&pooled, &params.w_c, &params.b_c).data().to_vec();
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(PcsError::Numeric("non-finite logits".into()));
    }
    let probs = softmax_unchecked(&logits, 1.0);

    Ok(ForwardTrace {
        tokens: tokens.to_vec(),
        embedded,
        layers,
        pooled_pre,
        pooled_mask,
        pooled,
        logits,
        probs,
        train_mode: train.is_some(),
    })
}

/// Eval-mode mean-pooled sentence representation.
pub fn pooled_embedding(params: &ModelParams, tokens: &[usize]) -> Result<Vec<f64>> {
    Ok(forward(params, tokens, None)?.pooled_pre.data().to_vec())
}

/// The input embedding row of a single token id.
pub fn token_embedding(params: &ModelParams, token: usize) -> Result<Vec<f64>> {
    check_tokens(params, &[token])?;
    Ok(params.token_embed.row(token).to_vec())
}
