//! Forward pass, reverse-mode backward pass and incremental decoding.
//!
//! Every row of the forward pass is computed by the same row kernels whether
//! the whole sequence is processed at once or one token at a time, so the two
//! paths agree bitwise and row `t` never reads anything after position `t`.

use rand::Rng;
use rand_xoshiro::Xoshiro256PlusPlus;

use super::params::{LayerParams, ModelConfig, ModelParams};
use super::tensor::{Scalar, Tensor};
use super::NetError;

const LN_EPS: f64 = 1e-5;

/// Numerically stable softmax.
pub fn softmax<F: Scalar>(row: &[F]) -> Vec<F> {
    let mut out = row.to_vec();
    softmax_in_place(&mut out);
    out
}

fn softmax_in_place<F: Scalar>(v: &mut [F]) {
    let max = v.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = F::one() / sum;
    for x in v.iter_mut() {
        *x *= inv;
    }
}

/// Normalizes `x` into `out` with scale `g` and shift `b`; returns (mean, rstd).
pub fn layernorm_row<F: Scalar>(x: &[F], g: &[F], b: &[F], out: &mut [F]) -> (F, F) {
    let n = F::of(x.len() as f64);
    let mean = x.iter().fold(F::zero(), |a, &v| a + v) / n;
    let var = x.iter().fold(F::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
    let rstd = F::one() / (var + F::of(LN_EPS)).sqrt();
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * rstd * g[i] + b[i];
    }
    (mean, rstd)
}

fn linear_row<F: Scalar>(x: &[F], w: &[F], b: Option<&[F]>, out: &mut [F]) {
    let d_out = out.len();
    match b {
        Some(b) => out.copy_from_slice(b),
        None => out.iter_mut().for_each(|o| *o = F::zero()),
    }
    for (i, &xi) in x.iter().enumerate() {
        let wr = &w[i * d_out..(i + 1) * d_out];
        for (o, &wv) in out.iter_mut().zip(wr) {
            *o += xi * wv;
        }
    }
}

// dx += W dout ; dW += x^T dout ; db += dout
fn linear_backward_row<F: Scalar>(
    x: &[F],
    dout: &[F],
    w: &[F],
    dx: &mut [F],
    dw: &mut [F],
    db: Option<&mut [F]>,
) {
    let d_out = dout.len();
    for (i, &xi) in x.iter().enumerate() {
        let wr = &w[i * d_out..(i + 1) * d_out];
        let mut acc = F::zero();
        for (&g, &wv) in dout.iter().zip(wr) {
            acc += g * wv;
        }
        dx[i] += acc;
        let dwr = &mut dw[i * d_out..(i + 1) * d_out];
        for (d, &g) in dwr.iter_mut().zip(dout) {
            *d += xi * g;
        }
    }
    if let Some(db) = db {
        for (d, &g) in db.iter_mut().zip(dout) {
            *d += g;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn layernorm_backward_row<F: Scalar>(
    dout: &[F],
    x: &[F],
    mean: F,
    rstd: F,
    g: &[F],
    dx: &mut [F],
    dg: &mut [F],
    db: &mut [F],
) {
    let n = F::of(x.len() as f64);
    let mut m1 = F::zero();
    let mut m2 = F::zero();
    for i in 0..x.len() {
        let xhat = (x[i] - mean) * rstd;
        let dxhat = dout[i] * g[i];
        dg[i] += dout[i] * xhat;
        db[i] += dout[i];
        m1 += dxhat;
        m2 += dxhat * xhat;
    }
    m1 /= n;
    m2 /= n;
    for i in 0..x.len() {
        let xhat = (x[i] - mean) * rstd;
        let dxhat = dout[i] * g[i];
        dx[i] += rstd * (dxhat - m1 - xhat * m2);
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu<F: Scalar>(x: F) -> F {
    let k = F::of(GELU_K);
    let c = F::of(0.044715);
    let half = F::of(0.5);
    half * x * (F::one() + (k * (x + c * x * x * x)).tanh())
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let k = F::of(GELU_K);
    let c = F::of(0.044715);
    let half = F::of(0.5);
    let u = k * (x + c * x * x * x);
    let th = u.tanh();
    let sech2 = F::one() - th * th;
    half * (F::one() + th) + half * x * sech2 * k * (F::one() + F::of(3.0) * c * x * x)
}

// Offset of row t's attention probabilities, laid out as [t][head][s <= t].
fn att_offset(t: usize, n_heads: usize) -> usize {
    n_heads * t * (t + 1) / 2
}

/// Activations of one block, one row per position.
#[derive(Clone, Debug, Default)]
struct LayerCache<F> {
    x_in: Vec<F>,
    ln1: Vec<F>,
    ln1_mean: Vec<F>,
    ln1_rstd: Vec<F>,
    qkv: Vec<F>,
    att: Vec<F>,
    atty: Vec<F>,
    drop1: Vec<F>,
    x_mid: Vec<F>,
    ln2: Vec<F>,
    ln2_mean: Vec<F>,
    ln2_rstd: Vec<F>,
    fc: Vec<F>,
    fc_act: Vec<F>,
    drop2: Vec<F>,
}

impl<F: Scalar> LayerCache<F> {
    fn ensure_rows(&mut self, rows: usize, cfg: &ModelConfig, dropout: bool) {
        let d = cfg.d_model;
        let ff = cfg.ff_width();
        let z = F::zero();
        self.x_in.resize(rows * d, z);
        self.ln1.resize(rows * d, z);
        self.ln1_mean.resize(rows, z);
        self.ln1_rstd.resize(rows, z);
        self.qkv.resize(rows * 3 * d, z);
        self.att.resize(att_offset(rows, cfg.n_heads), z);
        self.atty.resize(rows * d, z);
        self.x_mid.resize(rows * d, z);
        self.ln2.resize(rows * d, z);
        self.ln2_mean.resize(rows, z);
        self.ln2_rstd.resize(rows, z);
        self.fc.resize(rows * ff, z);
        self.fc_act.resize(rows * ff, z);
        if dropout {
            self.drop1.resize(rows * d, z);
            self.drop2.resize(rows * d, z);
        }
    }
}

struct Dropout<'r> {
    rng: &'r mut Xoshiro256PlusPlus,
    p: f64,
}

impl Dropout<'_> {
    fn fill<F: Scalar>(&mut self, mask: &mut [F]) {
        let keep = F::of(1.0 / (1.0 - self.p));
        for m in mask {
            *m = if self.rng.gen::<f64>() < self.p {
                F::zero()
            } else {
                keep
            };
        }
    }
}

/// Runs block `lp` on row `t` of `c`; `c.x_in` row `t` must be filled and
/// rows `< t` fully computed. Writes the block output row into `out`.
fn block_row<F: Scalar>(
    lp: &LayerParams<F>,
    cfg: &ModelConfig,
    c: &mut LayerCache<F>,
    t: usize,
    dropout: &mut Option<Dropout<'_>>,
    tmp: &mut [F],
    out: &mut [F],
) {
    let d = cfg.d_model;
    let ff = cfg.ff_width();
    let nh = cfg.n_heads;
    let hd = cfg.head_dim();
    let r = t * d..(t + 1) * d;

    let (m, s) = layernorm_row(&c.x_in[r.clone()], &lp.ln1_g.data, &lp.ln1_b.data, &mut c.ln1[r.clone()]);
    c.ln1_mean[t] = m;
    c.ln1_rstd[t] = s;
    linear_row(
        &c.ln1[r.clone()],
        &lp.qkv_w.data,
        Some(&lp.qkv_b.data),
        &mut c.qkv[t * 3 * d..(t + 1) * 3 * d],
    );

    let scale = F::one() / F::of(hd as f64).sqrt();
    let base = att_offset(t, nh);
    for h in 0..nh {
        let probs = &mut c.att[base + h * (t + 1)..base + (h + 1) * (t + 1)];
        let q = &c.qkv[t * 3 * d + h * hd..t * 3 * d + (h + 1) * hd];
        for (s_idx, p) in probs.iter_mut().enumerate() {
            let k = &c.qkv[s_idx * 3 * d + d + h * hd..s_idx * 3 * d + d + (h + 1) * hd];
            let mut acc = F::zero();
            for (&a, &b) in q.iter().zip(k) {
                acc += a * b;
            }
            *p = acc * scale;
        }
        softmax_in_place(probs);
        let y = &mut c.atty[t * d + h * hd..t * d + (h + 1) * hd];
        y.iter_mut().for_each(|v| *v = F::zero());
        for (s_idx, &p) in probs.iter().enumerate() {
            let v = &c.qkv[s_idx * 3 * d + 2 * d + h * hd..s_idx * 3 * d + 2 * d + (h + 1) * hd];
            for (yv, &vv) in y.iter_mut().zip(v) {
                *yv += p * vv;
            }
        }
    }

    linear_row(&c.atty[r.clone()], &lp.proj_w.data, Some(&lp.proj_b.data), tmp);
    if let Some(drop) = dropout.as_mut() {
        let mask = &mut c.drop1[r.clone()];
        drop.fill(mask);
        tmp.iter_mut().zip(mask.iter()).for_each(|(v, &m)| *v *= m);
    }
    for i in 0..d {
        c.x_mid[t * d + i] = c.x_in[t * d + i] + tmp[i];
    }

    let (m, s) = layernorm_row(&c.x_mid[r.clone()], &lp.ln2_g.data, &lp.ln2_b.data, &mut c.ln2[r.clone()]);
    c.ln2_mean[t] = m;
    c.ln2_rstd[t] = s;
    let fr = t * ff..(t + 1) * ff;
    linear_row(&c.ln2[r.clone()], &lp.fc_w.data, Some(&lp.fc_b.data), &mut c.fc[fr.clone()]);
    for i in fr.clone() {
        c.fc_act[i] = gelu(c.fc[i]);
    }
    linear_row(&c.fc_act[fr], &lp.fc_proj_w.data, Some(&lp.fc_proj_b.data), tmp);
    if let Some(drop) = dropout.as_mut() {
        let mask = &mut c.drop2[r.clone()];
        drop.fill(mask);
        tmp.iter_mut().zip(mask.iter()).for_each(|(v, &m)| *v *= m);
    }
    for i in 0..d {
        out[i] = c.x_mid[t * d + i] + tmp[i];
    }
}

fn check_ids<F: Scalar>(params: &ModelParams<F>, ids: &[usize], start: usize) -> Result<(), NetError> {
    let cfg = &params.config;
    if start + ids.len() > cfg.context_len {
        return Err(NetError::ContextOverflow {
            len: start + ids.len(),
            max: cfg.context_len,
        });
    }
    if let Some(&bad) = ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(NetError::TokenOutOfRange {
            id: bad,
            vocab: cfg.vocab_size,
        });
    }
    Ok(())
}

fn embed_row<F: Scalar>(params: &ModelParams<F>, id: usize, t: usize, out: &mut [F]) {
    let te = params.tok_emb.row(id);
    let pe = params.pos_emb.row(t);
    for i in 0..out.len() {
        out[i] = te[i] + pe[i];
    }
}

/// Recorded forward pass: everything [`Tape::backward`] needs.
#[derive(Debug)]
pub struct Tape<'a, F> {
    params: &'a ModelParams<F>,
    ids: Vec<usize>,
    layers: Vec<LayerCache<F>>,
    x_final: Vec<F>,
    lnf: Vec<F>,
    lnf_mean: Vec<F>,
    lnf_rstd: Vec<F>,
}

/// Runs the model over `ids` and returns `[T x V]` logits plus the tape.
pub fn forward<'a, F: Scalar>(
    params: &'a ModelParams<F>,
    ids: &[usize],
) -> Result<(Tensor<F>, Tape<'a, F>), NetError> {
    forward_impl(params, ids, None)
}

/// Like [`forward`] but applies residual dropout (when configured) with
/// masks drawn from `rng`.
pub fn forward_train<'a, F: Scalar>(
    params: &'a ModelParams<F>,
    ids: &[usize],
    rng: &mut Xoshiro256PlusPlus,
) -> Result<(Tensor<F>, Tape<'a, F>), NetError> {
    forward_impl(params, ids, Some(rng))
}

fn forward_impl<'a, F: Scalar>(
    params: &'a ModelParams<F>,
    ids: &[usize],
    rng: Option<&mut Xoshiro256PlusPlus>,
) -> Result<(Tensor<F>, Tape<'a, F>), NetError> {
    if ids.is_empty() {
        return Err(NetError::EmptyInput);
    }
    check_ids(params, ids, 0)?;
    let cfg = &params.config;
    let t_len = ids.len();
    let d = cfg.d_model;
    let v = cfg.vocab_size;
    let mut dropout = match rng {
        Some(rng) if cfg.dropout > 0.0 => Some(Dropout { rng, p: cfg.dropout }),
        _ => None,
    };

    let mut layers: Vec<LayerCache<F>> = (0..cfg.n_layers).map(|_| LayerCache::default()).collect();
    for c in &mut layers {
        c.ensure_rows(t_len, cfg, dropout.is_some());
    }
    for (t, &id) in ids.iter().enumerate() {
        embed_row(params, id, t, &mut layers[0].x_in[t * d..(t + 1) * d]);
    }
    let mut x_final = vec![F::zero(); t_len * d];
    let mut tmp = vec![F::zero(); d];
    let mut out = vec![F::zero(); d];
    for l in 0..cfg.n_layers {
        for t in 0..t_len {
            block_row(&params.layers[l], cfg, &mut layers[l], t, &mut dropout, &mut tmp, &mut out);
            if l + 1 < cfg.n_layers {
                layers[l + 1].x_in[t * d..(t + 1) * d].copy_from_slice(&out);
            } else {
                x_final[t * d..(t + 1) * d].copy_from_slice(&out);
            }
        }
    }

    let mut lnf = vec![F::zero(); t_len * d];
    let mut lnf_mean = vec![F::zero(); t_len];
    let mut lnf_rstd = vec![F::zero(); t_len];
    let mut logits = Tensor::zeros(&[t_len, v]);
    for t in 0..t_len {
        let r = t * d..(t + 1) * d;
        let (m, s) = layernorm_row(&x_final[r.clone()], &params.lnf_g.data, &params.lnf_b.data, &mut lnf[r.clone()]);
        lnf_mean[t] = m;
        lnf_rstd[t] = s;
        linear_row(&lnf[r], &params.head_w.data, None, logits.row_mut(t));
    }
    Ok((
        logits,
        Tape {
            params,
            ids: ids.to_vec(),
            layers,
            x_final,
            lnf,
            lnf_mean,
            lnf_rstd,
        },
    ))
}

impl<'a, F: Scalar> Tape<'a, F> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn params(&self) -> &'a ModelParams<F> {
        self.params
    }

    /// Exact gradients of `sum(d_logits * logits)` w.r.t. every parameter.
    pub fn backward(&self, d_logits: &Tensor<F>) -> Result<ModelParams<F>, NetError> {
        let mut grads = self.params.zeros_like();
        self.backward_into(d_logits, &mut grads)?;
        Ok(grads)
    }

    /// Accumulates gradients into `grads`.
    pub fn backward_into(&self, d_logits: &Tensor<F>, grads: &mut ModelParams<F>) -> Result<(), NetError> {
        let p = self.params;
        let cfg = &p.config;
        let t_len = self.ids.len();
        let d = cfg.d_model;
        let v = cfg.vocab_size;
        if d_logits.shape != [t_len, v] {
            return Err(NetError::ShapeMismatch(format!(
                "d_logits has shape {:?}, expected [{t_len}, {v}]",
                d_logits.shape
            )));
        }
        if grads.config != *cfg {
            return Err(NetError::ShapeMismatch("gradient buffer config differs".into()));
        }

        // output head and final norm
        let mut dx = vec![F::zero(); t_len * d];
        let mut dlnf = vec![F::zero(); d];
        for t in 0..t_len {
            let dl = d_logits.row(t);
            if dl.iter().all(|g| g.is_zero()) {
                continue;
            }
            let r = t * d..(t + 1) * d;
            dlnf.iter_mut().for_each(|g| *g = F::zero());
            linear_backward_row(&self.lnf[r.clone()], dl, &p.head_w.data, &mut dlnf, &mut grads.head_w.data, None);
            layernorm_backward_row(
                &dlnf,
                &self.x_final[r.clone()],
                self.lnf_mean[t],
                self.lnf_rstd[t],
                &p.lnf_g.data,
                &mut dx[r],
                &mut grads.lnf_g.data,
                &mut grads.lnf_b.data,
            );
        }

        for l in (0..cfg.n_layers).rev() {
            dx = self.layer_backward(l, dx, &mut grads.layers[l]);
        }

        for (t, &id) in self.ids.iter().enumerate() {
            let g = &dx[t * d..(t + 1) * d];
            for (a, &b) in grads.tok_emb.row_mut(id).iter_mut().zip(g) {
                *a += b;
            }
            for (a, &b) in grads.pos_emb.row_mut(t).iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok(())
    }

    // Takes the gradient w.r.t. the block output, returns it w.r.t. the input.
    fn layer_backward(&self, l: usize, dx_out: Vec<F>, g: &mut LayerParams<F>) -> Vec<F> {
        let cfg = &self.params.config;
        let lp = &self.params.layers[l];
        let c = &self.layers[l];
        let t_len = self.ids.len();
        let d = cfg.d_model;
        let ff = cfg.ff_width();
        let nh = cfg.n_heads;
        let hd = cfg.head_dim();
        let dropout = !c.drop1.is_empty();

        // feed-forward branch
        let mut dx_mid = dx_out.clone();
        let mut dbranch = vec![F::zero(); d];
        let mut dfc = vec![F::zero(); ff];
        let mut dln = vec![F::zero(); d];
        for t in 0..t_len {
            let r = t * d..(t + 1) * d;
            let fr = t * ff..(t + 1) * ff;
            dbranch.copy_from_slice(&dx_out[r.clone()]);
            if dropout {
                dbranch.iter_mut().zip(&c.drop2[r.clone()]).for_each(|(a, &m)| *a *= m);
            }
            dfc.iter_mut().for_each(|x| *x = F::zero());
            linear_backward_row(
                &c.fc_act[fr.clone()],
                &dbranch,
                &lp.fc_proj_w.data,
                &mut dfc,
                &mut g.fc_proj_w.data,
                Some(&mut g.fc_proj_b.data),
            );
            for (gi, &pre) in dfc.iter_mut().zip(&c.fc[fr.clone()]) {
                *gi *= gelu_grad(pre);
            }
            dln.iter_mut().for_each(|x| *x = F::zero());
            linear_backward_row(&c.ln2[r.clone()], &dfc, &lp.fc_w.data, &mut dln, &mut g.fc_w.data, Some(&mut g.fc_b.data));
            layernorm_backward_row(
                &dln,
                &c.x_mid[r.clone()],
                c.ln2_mean[t],
                c.ln2_rstd[t],
                &lp.ln2_g.data,
                &mut dx_mid[r],
                &mut g.ln2_g.data,
                &mut g.ln2_b.data,
            );
        }

        // attention projection
        let mut datty = vec![F::zero(); t_len * d];
        for t in 0..t_len {
            let r = t * d..(t + 1) * d;
            dbranch.copy_from_slice(&dx_mid[r.clone()]);
            if dropout {
                dbranch.iter_mut().zip(&c.drop1[r.clone()]).for_each(|(a, &m)| *a *= m);
            }
            linear_backward_row(
                &c.atty[r.clone()],
                &dbranch,
                &lp.proj_w.data,
                &mut datty[r],
                &mut g.proj_w.data,
                Some(&mut g.proj_b.data),
            );
        }

        // attention core
        let scale = F::one() / F::of(hd as f64).sqrt();
        let mut dqkv = vec![F::zero(); t_len * 3 * d];
        let mut dp = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let base = att_offset(t, nh);
            for h in 0..nh {
                let probs = &c.att[base + h * (t + 1)..base + (h + 1) * (t + 1)];
                let dy = &datty[t * d + h * hd..t * d + (h + 1) * hd];
                dp.clear();
                let mut dot_sum = F::zero();
                for (s, &pr) in probs.iter().enumerate() {
                    let vo = s * 3 * d + 2 * d + h * hd;
                    let vv = &c.qkv[vo..vo + hd];
                    let mut acc = F::zero();
                    for (&a, &b) in dy.iter().zip(vv) {
                        acc += a * b;
                    }
                    dp.push(acc);
                    dot_sum += pr * acc;
                    let dv = &mut dqkv[vo..vo + hd];
                    for (a, &b) in dv.iter_mut().zip(dy) {
                        *a += pr * b;
                    }
                }
                let qo = t * 3 * d + h * hd;
                for (s, &pr) in probs.iter().enumerate() {
                    let ds = pr * (dp[s] - dot_sum) * scale;
                    let ko = s * 3 * d + d + h * hd;
                    for i in 0..hd {
                        let kv = c.qkv[ko + i];
                        let qv = c.qkv[qo + i];
                        dqkv[qo + i] += ds * kv;
                        dqkv[ko + i] += ds * qv;
                    }
                }
            }
        }

        // qkv projection and first norm
        let mut dx_in = dx_mid.clone();
        for t in 0..t_len {
            let r = t * d..(t + 1) * d;
            dln.iter_mut().for_each(|x| *x = F::zero());
            linear_backward_row(
                &c.ln1[r.clone()],
                &dqkv[t * 3 * d..(t + 1) * 3 * d],
                &lp.qkv_w.data,
                &mut dln,
                &mut g.qkv_w.data,
                Some(&mut g.qkv_b.data),
            );
            layernorm_backward_row(
                &dln,
                &c.x_in[r.clone()],
                c.ln1_mean[t],
                c.ln1_rstd[t],
                &lp.ln1_g.data,
                &mut dx_in[r],
                &mut g.ln1_g.data,
                &mut g.ln1_b.data,
            );
        }
        dx_in
    }
}

/// Token-at-a-time decoding that reuses cached activations of earlier
/// positions. Logits match [`forward`] bitwise.
pub struct IncrementalDecoder<'a, F> {
    params: &'a ModelParams<F>,
    layers: Vec<LayerCache<F>>,
    pos: usize,
    tmp: Vec<F>,
    x: Vec<F>,
    out: Vec<F>,
}

impl<'a, F: Scalar> IncrementalDecoder<'a, F> {
    pub fn new(params: &'a ModelParams<F>) -> Self {
        let d = params.config.d_model;
        IncrementalDecoder {
            params,
            layers: (0..params.config.n_layers).map(|_| LayerCache::default()).collect(),
            pos: 0,
            tmp: vec![F::zero(); d],
            x: vec![F::zero(); d],
            out: vec![F::zero(); d],
        }
    }

    /// Number of tokens consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }

    /// Feeds one token and returns the logits for the next position.
    pub fn step(&mut self, id: usize) -> Result<Vec<F>, NetError> {
        let p = self.params;
        let cfg = &p.config;
        check_ids(p, &[id], self.pos)?;
        let t = self.pos;
        let d = cfg.d_model;
        embed_row(p, id, t, &mut self.x);
        let mut no_dropout = None;
        for l in 0..cfg.n_layers {
            let c = &mut self.layers[l];
            c.ensure_rows(t + 1, cfg, false);
            c.x_in[t * d..(t + 1) * d].copy_from_slice(&self.x);
            block_row(&p.layers[l], cfg, c, t, &mut no_dropout, &mut self.tmp, &mut self.out);
            self.x.copy_from_slice(&self.out);
        }
        let mut lnf = vec![F::zero(); d];
        layernorm_row(&self.x, &p.lnf_g.data, &p.lnf_b.data, &mut lnf);
        let mut logits = vec![F::zero(); cfg.vocab_size];
        linear_row(&lnf, &p.head_w.data, None, &mut logits);
        self.pos += 1;
        Ok(logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 11,
            context_len: 8,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: None,
            dropout: 0.0,
        }
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0f64, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[1000.0f64, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] >= 0.0 && p[1] < 1e-300);
        let a = softmax(&[0.3f64, -1.2, 2.0, 0.0]);
        let b = softmax(&[10.3f64, 8.8, 12.0, 10.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn layernorm_normalizes() {
        let x: Vec<f64> = (0..16).map(|i| ((i * 7 % 5) as f64) * 0.9 - 1.3).collect();
        let g = vec![1.0; 16];
        let b = vec![0.0; 16];
        let mut out = vec![0.0; 16];
        layernorm_row(&x, &g, &b, &mut out);
        let mean = out.iter().sum::<f64>() / 16.0;
        let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((num - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn single_token_shape_and_overflow() {
        let p = ModelParams::<f64>::init(&tiny(), 1).unwrap();
        let (logits, _) = forward(&p, &[3]).unwrap();
        assert_eq!(logits.shape, vec![1, 11]);
        assert!(matches!(forward(&p, &[0; 9]), Err(NetError::ContextOverflow { .. })));
        assert!(matches!(forward(&p, &[11]), Err(NetError::TokenOutOfRange { .. })));
        assert!(matches!(forward(&p, &[]), Err(NetError::EmptyInput)));
    }

    #[test]
    fn incremental_matches_full_forward_bitwise() {
        let p = ModelParams::<f32>::init(&tiny(), 9).unwrap();
        let ids = [1, 5, 7, 2, 10, 0, 3];
        let (full, _) = forward(&p, &ids).unwrap();
        let mut dec = IncrementalDecoder::new(&p);
        for (t, &id) in ids.iter().enumerate() {
            let row = dec.step(id).unwrap();
            assert_eq!(row.as_slice(), full.row(t));
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = ModelParams::<f64>::init(&tiny(), 2).unwrap();
        let (logits, tape) = forward(&p, &[1, 2, 3]).unwrap();
        let g = tape.backward(&Tensor::zeros(&logits.shape)).unwrap();
        assert!(g.tensors().iter().all(|(_, t)| t.data.iter().all(|v| *v == 0.0)));
        assert!(tape.backward(&Tensor::zeros(&[2, 11])).is_err());
    }

    #[test]
    fn dropout_changes_training_forward_only() {
        let mut cfg = tiny();
        cfg.dropout = 0.5;
        let p = ModelParams::<f64>::init(&cfg, 4).unwrap();
        let ids = [1, 2, 3, 4];
        let (a, _) = forward(&p, &ids).unwrap();
        let mut rng = <Xoshiro256PlusPlus as rand::SeedableRng>::seed_from_u64(0);
        let (b, _) = forward_train(&p, &ids, &mut rng).unwrap();
        assert_ne!(a, b);
        let (c, _) = forward(&p, &ids).unwrap();
        assert_eq!(a, c);
    }
}
