use super::forward::{columns, forward, put_columns, ForwardTrace};
use super::ModelParams;
use crate::error::{PcsError, Result};
use crate::numerics::{Matrix, RngStream};

/// An encoded training example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub tokens: Vec<usize>,
    pub label: usize,
}

fn accumulate(slot: &mut Matrix, update: Matrix) {
    slot.add_assign(&update);
}

fn apply_mask(x: &Matrix, mask: &Option<Matrix>) -> Matrix {
    match mask {
        Some(m) => x.zip_map(m, |a, b| a * b),
        None => x.clone(),
    }
}

/// Backpropagates `dlogits` through a cached trace. Parameter gradients are
/// added into `grads` when given; the gradient w.r.t. the embedded input
/// (token + position, L × d) is returned.
pub(crate) fn backward_into(
    params: &ModelParams,
    trace: &ForwardTrace,
    dlogits: &[f64],
    mut grads: Option<&mut ModelParams>,
) -> Matrix {
    let cfg = &params.config;
    let len = trace.tokens.len();
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let dlog = Matrix::row_vector(dlogits);
    if let Some(g) = grads.as_deref_mut() {
        accumulate(&mut g.w_c, trace.pooled.tmm(&dlog));
        accumulate(&mut g.b_c, dlog.clone());
    }
    let dpooled = apply_mask(&dlog.mmt(&params.w_c), &trace.pooled_mask);
    let mut dh_state = Matrix::zeros(len, cfg.embed_dim);
    for r in 0..len {
        for (x, p) in dh_state.row_mut(r).iter_mut().zip(dpooled.data()) {
            *x = p / len as f64;
        }
    }

    for (idx, (lp, lt)) in params.layers.iter().zip(&trace.layers).enumerate().rev() {
        // MLP branch.
        let dmlp = apply_mask(&dh_state, &lt.mlp_mask);
        let dhidden = dmlp.mmt(&lp.w_2);
        let dz1 = dhidden.zip_map(&lt.hidden_pre, |g, z| if z > 0.0 { g } else { 0.0 });
        let mut dresid = dh_state;
        dresid.add_assign(&dz1.mmt(&lp.w_1));

        // Attention branch.
        let dattn = apply_mask(&dresid, &lt.attn_mask);
        let dctx = dattn.mmt(&lp.w_o);
        let mut dq = Matrix::zeros(len, cfg.embed_dim);
        let mut dk = Matrix::zeros(len, cfg.embed_dim);
        let mut dv = Matrix::zeros(len, cfg.embed_dim);
        for (head, a) in lt.attn.iter().enumerate() {
            let off = head * dh;
            let dctx_h = columns(&dctx, off, dh);
            let (qh, kh, vh) = (
                columns(&lt.q, off, dh),
                columns(&lt.k, off, dh),
                columns(&lt.v, off, dh),
            );
            let da = dctx_h.mmt(&vh);
            put_columns(&mut dv, &a.tmm(&dctx_h), off);
            let mut ds = Matrix::zeros(len, len);
            for i in 0..len {
                let (arow, darow) = (a.row(i), da.row(i));
                let inner: f64 = arow.iter().zip(darow).map(|(x, y)| x * y).sum();
                for (s, (&aij, &daij)) in ds.row_mut(i).iter_mut().zip(arow.iter().zip(darow)) {
                    *s = aij * (daij - inner) * scale;
                }
            }
            put_columns(&mut dq, &ds.mm(&kh), off);
            put_columns(&mut dk, &ds.tmm(&qh), off);
        }

        let mut dinput = dresid.clone();
        dinput.add_assign(&dq.mmt(&lp.w_q));
        dinput.add_assign(&dk.mmt(&lp.w_k));
        dinput.add_assign(&dv.mmt(&lp.w_v));

        if let Some(g) = grads.as_deref_mut() {
            let gl = &mut g.layers[idx];
            accumulate(&mut gl.w_2, lt.hidden.tmm(&dmlp));
            accumulate(&mut gl.b_2, dmlp.col_sums());
            accumulate(&mut gl.w_1, lt.resid.tmm(&dz1));
            accumulate(&mut gl.b_1, dz1.col_sums());
            accumulate(&mut gl.w_o, lt.context.tmm(&dattn));
            accumulate(&mut gl.b_o, dattn.col_sums());
            accumulate(&mut gl.w_q, lt.input.tmm(&dq));
            accumulate(&mut gl.b_q, dq.col_sums());
            accumulate(&mut gl.w_k, lt.input.tmm(&dk));
            accumulate(&mut gl.b_k, dk.col_sums());
            accumulate(&mut gl.w_v, lt.input.tmm(&dv));
            accumulate(&mut gl.b_v, dv.col_sums());
        }
        dh_state = dinput;
    }

    if let Some(g) = grads {
        for (i, &t) in trace.tokens.iter().enumerate() {
            for (x, d) in g.token_embed.row_mut(t).iter_mut().zip(dh_state.row(i)) {
                *x += d;
            }
            for (x, d) in g.pos_embed.row_mut(i).iter_mut().zip(dh_state.row(i)) {
                *x += d;
            }
        }
    }
    dh_state
}

/// Mean cross-entropy over `batch` and its gradient. Dropout is active when
/// `dropout` carries a stream.
pub fn loss_and_gradients(
    params: &ModelParams,
    batch: &[&Sample],
    mut dropout: Option<&mut RngStream>,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(PcsError::Input("empty batch".into()));
    }
    let classes = params.config.num_classes;
    if let Some(bad) = batch.iter().find(|s| s.label >= classes) {
        return Err(PcsError::Input(format!(
            "label {} out of range for {classes} classes",
            bad.label
        )));
    }
    let inv = 1.0 / batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    for sample in batch {
        let trace = forward(params, &sample.tokens, dropout.as_deref_mut())?;
        loss -= trace.probs[sample.label].max(f64::MIN_POSITIVE).ln() * inv;
        let dlogits: Vec<f64> = trace
            .probs
            .iter()
            .enumerate()
            .map(|(c, &p)| (p - if c == sample.label { 1.0 } else { 0.0 }) * inv)
            .collect();
        backward_into(params, &trace, &dlogits, Some(&mut grads));
    }
    if !loss.is_finite() || !grads.is_finite() {
        return Err(PcsError::Numeric(format!("loss or gradient not finite (loss {loss})")));
    }
    Ok((loss, grads))
}

/// Gradient of the class probability `probs[class]` w.r.t. the embedded
/// input (L × d).
pub fn input_gradient(params: &ModelParams, trace: &ForwardTrace, class: usize) -> Result<Matrix> {
    if class >= trace.probs.len() {
        return Err(PcsError::Input(format!("class {class} out of range")));
    }
    let pc = trace.probs[class];
    let dlogits: Vec<f64> = trace
        .probs
        .iter()
        .enumerate()
        .map(|(k, &pk)| pc * (if k == class { 1.0 } else { 0.0 } - pk))
        .collect();
    Ok(backward_into(params, trace, &dlogits, None))
}
