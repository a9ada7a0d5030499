//! Layer-wise relevance propagation.
//!
//! Linear maps use the ε-rule with a sign-matched stabilizer. ReLU
//! derivatives are ignored, so relevance passes through activations
//! unchanged. Attention weights are held constant, which makes each head
//! linear in its values: relevance flows through the value projection and
//! none through queries or keys. Residual sums split relevance in proportion
//! to each branch's contribution. Relevance landing on bias terms is
//! accumulated and reported instead of being dropped.

use super::forward::{columns, put_columns, ForwardTrace};
use super::ModelParams;
use crate::error::{PcsError, Result};
use crate::numerics::Matrix;

pub const DEFAULT_LRP_EPS: f64 = 1e-9;

#[inline]
fn stabilize(z: f64, eps: f64) -> f64 {
    if z >= 0.0 {
        z + eps
    } else {
        z - eps
    }
}

/// Per-token relevance vectors and bookkeeping for one explained prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LrpOutput {
    /// Relevance of each embedded input dimension (L × d).
    pub relevance: Matrix,
    /// Relevance injected at the output, the target-class probability.
    pub start: f64,
    /// Total relevance absorbed by bias terms on the way down.
    pub bias_absorbed: f64,
}

impl LrpOutput {
    pub fn total(&self) -> f64 {
        self.relevance.sum()
    }

    /// Relevance neither reaching the inputs nor absorbed by biases
    /// (stabilizer leakage).
    pub fn leakage(&self) -> f64 {
        self.start - self.total() - self.bias_absorbed
    }
}

fn linear_rule(
    x: &Matrix,
    w: &Matrix,
    b: Option<&Matrix>,
    z: &Matrix,
    r_out: &Matrix,
    eps: f64,
) -> (Matrix, f64) {
    let s = r_out.zip_map(z, |r, z| r / stabilize(z, eps));
    let r_in = x.zip_map(&s.mmt(w), |a, c| a * c);
    let bias = b.map_or(0.0, |b| {
        (0..s.rows())
            .map(|r| s.row(r).iter().zip(b.data()).map(|(s, b)| s * b).sum::<f64>())
            .sum()
    });
    (r_in, bias)
}

/// ε-rule for `z = x·W + b`, applied to every row of `x`.
///
/// Returns the input relevance and the relevance absorbed by `b`.
pub fn lrp_linear(
    x: &Matrix,
    w: &Matrix,
    b: Option<&Matrix>,
    z: &Matrix,
    r_out: &Matrix,
    eps: f64,
) -> Result<(Matrix, f64)> {
    if x.cols() != w.rows()
        || z.shape() != (x.rows(), w.cols())
        || r_out.shape() != z.shape()
        || b.is_some_and(|b| b.data().len() != w.cols())
    {
        return Err(PcsError::Shape(format!(
            "lrp_linear: x {:?}, w {:?}, z {:?}, r {:?}",
            x.shape(),
            w.shape(),
            z.shape(),
            r_out.shape()
        )));
    }
    Ok(linear_rule(x, w, b, z, r_out, eps))
}

/// Splits relevance at `a + b` between the two summands.
pub fn lrp_residual(a: &Matrix, b: &Matrix, r: &Matrix, eps: f64) -> Result<(Matrix, Matrix)> {
    if a.shape() != b.shape() || a.shape() != r.shape() {
        return Err(PcsError::Shape("lrp_residual operands differ in shape".into()));
    }
    Ok(residual_rule(a, b, r, eps))
}

fn residual_rule(a: &Matrix, b: &Matrix, r: &Matrix, eps: f64) -> (Matrix, Matrix) {
    let mut ra = Matrix::zeros(a.rows(), a.cols());
    let mut rb = Matrix::zeros(a.rows(), a.cols());
    for (((x, y), rel), (oa, ob)) in a
        .data()
        .iter()
        .zip(b.data())
        .zip(r.data())
        .zip(ra.data_mut().iter_mut().zip(rb.data_mut()))
    {
        let s = rel / stabilize(x + y, eps);
        *oa = x * s;
        *ob = y * s;
    }
    (ra, rb)
}

fn check_trace(params: &ModelParams, trace: &ForwardTrace, class: usize) -> Result<()> {
    let cfg = &params.config;
    if trace.train_mode {
        return Err(PcsError::Consistency(
            "relevance needs an eval-mode trace (dropout off)".into(),
        ));
    }
    if class >= cfg.num_classes || trace.probs.len() != cfg.num_classes {
        return Err(PcsError::Consistency(format!(
            "class {class} vs {} classes, trace has {} outputs",
            cfg.num_classes,
            trace.probs.len()
        )));
    }
    if trace.layers.len() != cfg.num_layers
        || trace.embedded.shape() != (trace.tokens.len(), cfg.embed_dim)
        || trace.layers.iter().any(|l| l.attn.len() != cfg.num_heads)
        || trace.tokens.iter().any(|&t| t >= cfg.vocab_size)
    {
        return Err(PcsError::Consistency(
            "trace was not produced by these parameters".into(),
        ));
    }
    Ok(())
}

/// Redistributes the target-class probability down to the embedded input.
pub fn lrp_relevance(
    params: &ModelParams,
    trace: &ForwardTrace,
    target_class: usize,
    eps: f64,
) -> Result<LrpOutput> {
    check_trace(params, trace, target_class)?;
    let cfg = &params.config;
    let len = trace.tokens.len();
    let dh = cfg.head_dim();
    let start = trace.probs[target_class];
    let mut absorbed = 0.0;

    let mut r_logits = Matrix::zeros(1, cfg.num_classes);
    r_logits.set(0, target_class, start);
    let logits = Matrix::row_vector(&trace.logits);
    let (r_pooled, b) = linear_rule(
        &trace.pooled_pre,
        &params.w_c,
        Some(&params.b_c),
        &logits,
        &r_logits,
        eps,
    );
    absorbed += b;

    // Mean pooling is linear with weights 1/L.
    let last = trace.layers.last().map_or(&trace.embedded, |l| &l.output);
    let mut r = Matrix::zeros(len, cfg.embed_dim);
    for i in 0..len {
        for j in 0..cfg.embed_dim {
            let share = last.get(i, j) / len as f64;
            r.set(
                i,
                j,
                share / stabilize(trace.pooled_pre.get(0, j), eps) * r_pooled.get(0, j),
            );
        }
    }

    for (lp, lt) in params.layers.iter().zip(&trace.layers).rev() {
        let (r_resid_skip, r_mlp) = residual_rule(&lt.resid, &lt.mlp_out, &r, eps);
        let (r_hidden, b2) =
            linear_rule(&lt.hidden, &lp.w_2, Some(&lp.b_2), &lt.mlp_pre, &r_mlp, eps);
        let (r_resid_mlp, b1) =
            linear_rule(&lt.resid, &lp.w_1, Some(&lp.b_1), &lt.hidden_pre, &r_hidden, eps);
        let mut r_resid = r_resid_skip;
        r_resid.add_assign(&r_resid_mlp);

        let (r_input_skip, r_attn) = residual_rule(&lt.input, &lt.attn_out, &r_resid, eps);
        let (r_context, bo) =
            linear_rule(&lt.context, &lp.w_o, Some(&lp.b_o), &lt.attn_pre, &r_attn, eps);
        let mut r_v = Matrix::zeros(len, cfg.embed_dim);
        for (head, a) in lt.attn.iter().enumerate() {
            let off = head * dh;
            let ctx = columns(&lt.context, off, dh);
            let s = columns(&r_context, off, dh).zip_map(&ctx, |r, z| r / stabilize(z, eps));
            let spread = a.tmm(&s);
            put_columns(&mut r_v, &columns(&lt.v, off, dh).zip_map(&spread, |v, t| v * t), off);
        }
        let (r_input_attn, bv) =
            linear_rule(&lt.input, &lp.w_v, Some(&lp.b_v), &lt.v, &r_v, eps);
        absorbed += b2 + b1 + bo + bv;

        r = r_input_skip;
        r.add_assign(&r_input_attn);
    }

    if !r.is_finite() {
        return Err(PcsError::Numeric("relevance is not finite".into()));
    }
    Ok(LrpOutput {
        relevance: r,
        start,
        bias_absorbed: absorbed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, init_params, ModelConfig};
    use crate::numerics::RngStream;

    #[test]
    fn identity_layer_passes_relevance_through() {
        let x = Matrix::row_vector(&[1.0, 2.0]);
        let w = Matrix::identity(2);
        let z = x.clone();
        let r = Matrix::row_vector(&[3.0, 4.0]);
        let (r_in, b) = lrp_linear(&x, &w, None, &z, &r, 1e-12).unwrap();
        assert!((r_in.get(0, 0) - 3.0).abs() < 1e-9);
        assert!((r_in.get(0, 1) - 4.0).abs() < 1e-9);
        assert_eq!(b, 0.0);
    }

    #[test]
    fn bias_share_is_reported() {
        // z = 1·2 + 2 = 4, half of the relevance belongs to the bias.
        let x = Matrix::row_vector(&[1.0]);
        let w = Matrix::row_vector(&[2.0]);
        let b = Matrix::row_vector(&[2.0]);
        let z = Matrix::row_vector(&[4.0]);
        let r = Matrix::row_vector(&[1.0]);
        let (r_in, absorbed) = lrp_linear(&x, &w, Some(&b), &z, &r, 0.0).unwrap();
        assert_eq!(r_in.get(0, 0), 0.5);
        assert_eq!(absorbed, 0.5);
    }

    #[test]
    fn residual_split_is_proportional() {
        let a = Matrix::row_vector(&[3.0, -1.0]);
        let b = Matrix::row_vector(&[1.0, 3.0]);
        let r = Matrix::row_vector(&[8.0, 4.0]);
        let (ra, rb) = lrp_residual(&a, &b, &r, 0.0).unwrap();
        assert_eq!(ra.data(), &[6.0, -2.0]);
        assert_eq!(rb.data(), &[2.0, 6.0]);
    }

    #[test]
    fn shape_errors() {
        let x = Matrix::zeros(1, 3);
        let w = Matrix::zeros(2, 2);
        let z = Matrix::zeros(1, 2);
        assert!(lrp_linear(&x, &w, None, &z, &z, 1e-9).is_err());
    }

    fn bias_free(seed: u64) -> ModelParams {
        let mut cfg = ModelConfig::new(15, 2);
        cfg.embed_dim = 8;
        cfg.mlp_hidden = 16;
        cfg.max_seq_len = 8;
        let mut p = init_params(&cfg, &mut RngStream::new(seed)).unwrap();
        p.zero_biases();
        p
    }

    #[test]
    fn conservation_without_biases() {
        let p = bias_free(8);
        let t = forward(&p, &[1, 5, 9, 2], None).unwrap();
        let out = lrp_relevance(&p, &t, 1, DEFAULT_LRP_EPS).unwrap();
        assert!(((out.total() - out.start) / out.start).abs() < 1e-3);
        assert_eq!(out.bias_absorbed, 0.0);
    }

    #[test]
    fn deficit_is_accounted_with_biases() {
        let mut p = bias_free(9);
        let mut rng = RngStream::new(99);
        for m in p.tensors_mut() {
            if m.rows() == 1 {
                m.data_mut().iter_mut().for_each(|x| *x = 0.2 * rng.normal());
            }
        }
        let t = forward(&p, &[3, 4, 6], None).unwrap();
        let out = lrp_relevance(&p, &t, 0, DEFAULT_LRP_EPS).unwrap();
        assert!(out.bias_absorbed != 0.0);
        assert!(out.leakage().abs() < 1e-3 * out.start);
    }

    #[test]
    fn train_trace_rejected() {
        let mut p = bias_free(1);
        p.config.dropout_rate = 0.1;
        let t = forward(&p, &[1, 2], Some(&mut RngStream::new(0))).unwrap();
        assert!(matches!(
            lrp_relevance(&p, &t, 0, DEFAULT_LRP_EPS),
            Err(PcsError::Consistency(_))
        ));
    }

    #[test]
    fn zero_token_gets_no_relevance() {
        let mut p = bias_free(4);
        p.token_embed.row_mut(7).iter_mut().for_each(|x| *x = 0.0);
        p.pos_embed.fill(0.0);
        let t = forward(&p, &[2, 7, 3], None).unwrap();
        let out = lrp_relevance(&p, &t, 0, DEFAULT_LRP_EPS).unwrap();
        let own: f64 = out.relevance.row(1).iter().map(|x| x.abs()).sum();
        assert!(own <= 1e-6 * out.start, "{own}");
    }
}
