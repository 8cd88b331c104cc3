//! Pre-norm transformer forward/backward over a single sequence, plus an
//! incremental decoder with a key/value cache.

use super::kernels::*;
use super::layout::{LayerOffsets, Offsets};
use super::{Context, ModelConfig, Readout};
use crate::corpus::TokenId;
use crate::scalar::{softmax_into, Scalar};

pub(crate) struct LnAct<S> {
    pub xhat: Vec<S>,
    pub rstd: Vec<S>,
    pub out: Vec<S>,
}

fn layernorm_rows<S: Scalar>(x: &[S], rows: usize, gain: &[S], bias: &[S]) -> LnAct<S> {
    let d = gain.len();
    let mut act = LnAct {
        xhat: vec![S::zero(); rows * d],
        rstd: vec![S::zero(); rows],
        out: vec![S::zero(); rows * d],
    };
    for r in 0..rows {
        let span = r * d..(r + 1) * d;
        act.rstd[r] = layernorm_row(&x[span.clone()], gain, bias, &mut act.xhat[span.clone()], &mut act.out[span]);
    }
    act
}

pub(crate) struct LayerAct<S> {
    ln1: LnAct<S>,
    q: Vec<S>,
    k: Vec<S>,
    v: Vec<S>,
    /// `[heads, T, T]`; row `t` holds weights over key positions.
    pub att: Vec<S>,
    ctx: Vec<S>,
    ln2: LnAct<S>,
    hpre: Vec<S>,
    hact: Vec<S>,
}

pub(crate) struct ForwardPass<S> {
    pub len: usize,
    inputs: Vec<Option<TokenId>>,
    pub layers: Vec<LayerAct<S>>,
    lnf: LnAct<S>,
    pub head_rows: usize,
    pub logits: Vec<S>,
}

/// Borrowed view of a parameter vector under a config.
pub(crate) struct Net<'a, S> {
    pub cfg: &'a ModelConfig,
    pub off: &'a Offsets,
    pub p: &'a [S],
}

/// Attention of one query (one head) over the first `n_keys` cached keys.
#[allow(clippy::too_many_arguments)]
#[inline]
fn attend_row<S: Scalar>(
    q: &[S],
    keys: &[S],
    values: &[S],
    d: usize,
    head_off: usize,
    n_keys: usize,
    scale: S,
    weights: &mut [S],
    ctx: &mut [S],
) {
    let hd = q.len();
    for s in 0..n_keys {
        let k = &keys[s * d + head_off..s * d + head_off + hd];
        weights[s] = dot(q, k) * scale;
    }
    let scores: Vec<S> = weights[..n_keys].to_vec();
    softmax_into(&scores, &mut weights[..n_keys]);
    for c in ctx.iter_mut() {
        *c = S::zero();
    }
    for s in 0..n_keys {
        let v = &values[s * d + head_off..s * d + head_off + hd];
        axpy(weights[s], v, ctx);
    }
}

impl<'a, S: Scalar> Net<'a, S> {
    fn seg(&self, off: usize, len: usize) -> &'a [S] {
        &self.p[off..off + len]
    }

    fn embed_into(&self, input: Option<TokenId>, pos: usize, out: &mut [S]) {
        let d = self.cfg.width;
        let base = match input {
            Some(tok) => self.seg(self.off.tok_emb + tok * d, d),
            None => self.seg(self.off.readout.expect("readout position needs a readout vector"), d),
        };
        let pe = self.seg(self.off.pos_emb + pos * d, d);
        for i in 0..d {
            out[i] = base[i] + pe[i];
        }
    }

    fn mlp_width(&self) -> usize {
        self.cfg.mlp_width()
    }

    /// Full forward over `inputs` (a `None` entry is the readout position).
    pub fn forward(&self, inputs: &[Option<TokenId>]) -> ForwardPass<S> {
        let cfg = self.cfg;
        let t_len = inputs.len();
        let d = cfg.width;
        let f = self.mlp_width();
        let heads = cfg.heads;
        let hd = d / heads;
        let scale = S::one() / S::of_usize(hd).sqrt();

        let mut x = vec![S::zero(); t_len * d];
        for (pos, &inp) in inputs.iter().enumerate() {
            self.embed_into(inp, pos, &mut x[pos * d..(pos + 1) * d]);
        }

        let mut layers = Vec::with_capacity(cfg.layers);
        for lo in &self.off.layers {
            let ln1 = layernorm_rows(&x, t_len, self.seg(lo.ln1_g, d), self.seg(lo.ln1_b, d));
            let q = linear_rows(&ln1.out, t_len, self.seg(lo.wq, d * d), self.seg(lo.bq, d));
            let k = linear_rows(&ln1.out, t_len, self.seg(lo.wk, d * d), self.seg(lo.bk, d));
            let v = linear_rows(&ln1.out, t_len, self.seg(lo.wv, d * d), self.seg(lo.bv, d));
            let mut att = vec![S::zero(); heads * t_len * t_len];
            let mut ctx = vec![S::zero(); t_len * d];
            for t in 0..t_len {
                let n_keys = match cfg.context {
                    Context::Causal => t + 1,
                    Context::Bidirectional => t_len,
                };
                for h in 0..heads {
                    let ho = h * hd;
                    let row = (h * t_len + t) * t_len;
                    attend_row(
                        &q[t * d + ho..t * d + ho + hd],
                        &k,
                        &v,
                        d,
                        ho,
                        n_keys,
                        scale,
                        &mut att[row..row + t_len],
                        &mut ctx[t * d + ho..t * d + ho + hd],
                    );
                }
            }
            let attn_out = linear_rows(&ctx, t_len, self.seg(lo.wo, d * d), self.seg(lo.bo, d));
            for (xi, a) in x.iter_mut().zip(&attn_out) {
                *xi += *a;
            }
            let ln2 = layernorm_rows(&x, t_len, self.seg(lo.ln2_g, d), self.seg(lo.ln2_b, d));
            let hpre = linear_rows(&ln2.out, t_len, self.seg(lo.w1, d * f), self.seg(lo.b1, f));
            let hact: Vec<S> = hpre.iter().map(|&h| gelu(h)).collect();
            let mlp_out = linear_rows(&hact, t_len, self.seg(lo.w2, f * d), self.seg(lo.b2, d));
            for (xi, m) in x.iter_mut().zip(&mlp_out) {
                *xi += *m;
            }
            layers.push(LayerAct {
                ln1,
                q,
                k,
                v,
                att,
                ctx,
                ln2,
                hpre,
                hact,
            });
        }

        let head_rows = match cfg.readout {
            Readout::NextToken => t_len,
            Readout::Classify { .. } => 1,
        };
        let out = cfg.output_width();
        let lnf = layernorm_rows(&x[..head_rows * d], head_rows, self.seg(self.off.lnf_g, d), self.seg(self.off.lnf_b, d));
        let logits = linear_rows(&lnf.out, head_rows, self.seg(self.off.head_w, d * out), self.seg(self.off.head_b, out));
        ForwardPass {
            len: t_len,
            inputs: inputs.to_vec(),
            layers,
            lnf,
            head_rows,
            logits,
        }
    }

    /// Backpropagate `dlogits` (`[head_rows, out]`) through `fp`, adding the
    /// parameter gradient into `grad`.
    pub fn backward(&self, fp: &ForwardPass<S>, dlogits: &[S], grad: &mut [S]) {
        let cfg = self.cfg;
        let t_len = fp.len;
        let d = cfg.width;
        let f = self.mlp_width();
        let heads = cfg.heads;
        let hd = d / heads;
        let scale = S::one() / S::of_usize(hd).sqrt();
        let out = cfg.output_width();
        let off = self.off;
        let rows = fp.head_rows;

        let mut dx = vec![S::zero(); t_len * d];
        {
            let mut dlnf = vec![S::zero(); rows * d];
            let (dw, db) = pair_mut(grad, off.head_w, d * out, off.head_b, out);
            linear_backward(&fp.lnf.out, dlogits, rows, self.seg(off.head_w, d * out), dw, db, Some(&mut dlnf));
            let gain = self.seg(off.lnf_g, d);
            let (dg, dbias) = pair_mut(grad, off.lnf_g, d, off.lnf_b, d);
            for r in 0..rows {
                let span = r * d..(r + 1) * d;
                layernorm_backward_row(&dlnf[span.clone()], &fp.lnf.xhat[span.clone()], fp.lnf.rstd[r], gain, dg, dbias, &mut dx[span]);
            }
        }

        for (lo, act) in off.layers.iter().zip(&fp.layers).rev() {
            self.layer_backward(lo, act, t_len, d, f, heads, hd, scale, &mut dx, grad);
        }

        for (pos, inp) in fp.inputs.iter().enumerate() {
            let g = &dx[pos * d..(pos + 1) * d];
            let base = match inp {
                Some(tok) => off.tok_emb + tok * d,
                None => off.readout.expect("readout offset"),
            };
            axpy(S::one(), g, &mut grad[base..base + d]);
            let pe = off.pos_emb + pos * d;
            axpy(S::one(), g, &mut grad[pe..pe + d]);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_backward(
        &self,
        lo: &LayerOffsets,
        act: &LayerAct<S>,
        t_len: usize,
        d: usize,
        f: usize,
        heads: usize,
        hd: usize,
        scale: S,
        dx: &mut [S],
        grad: &mut [S],
    ) {
        // MLP branch: x_out = x_mid + W2 gelu(W1 ln2(x_mid) + b1) + b2
        let mut dhact = vec![S::zero(); t_len * f];
        {
            let (dw, db) = pair_mut(grad, lo.w2, f * d, lo.b2, d);
            linear_backward(&act.hact, dx, t_len, self.seg(lo.w2, f * d), dw, db, Some(&mut dhact));
        }
        let dhpre: Vec<S> = dhact.iter().zip(&act.hpre).map(|(&g, &h)| g * gelu_grad(h)).collect();
        let mut dln2 = vec![S::zero(); t_len * d];
        {
            let (dw, db) = pair_mut(grad, lo.w1, d * f, lo.b1, f);
            linear_backward(&act.ln2.out, &dhpre, t_len, self.seg(lo.w1, d * f), dw, db, Some(&mut dln2));
        }
        {
            let gain = self.seg(lo.ln2_g, d);
            let (dg, dbias) = pair_mut(grad, lo.ln2_g, d, lo.ln2_b, d);
            for r in 0..t_len {
                let span = r * d..(r + 1) * d;
                layernorm_backward_row(&dln2[span.clone()], &act.ln2.xhat[span.clone()], act.ln2.rstd[r], gain, dg, dbias, &mut dx[span]);
            }
        }

        // Attention branch: x_mid = x_in + Wo ctx + bo
        let mut dctx = vec![S::zero(); t_len * d];
        {
            let (dw, db) = pair_mut(grad, lo.wo, d * d, lo.bo, d);
            linear_backward(&act.ctx, dx, t_len, self.seg(lo.wo, d * d), dw, db, Some(&mut dctx));
        }
        let mut dq = vec![S::zero(); t_len * d];
        let mut dk = vec![S::zero(); t_len * d];
        let mut dv = vec![S::zero(); t_len * d];
        let mut da = vec![S::zero(); t_len];
        for t in 0..t_len {
            let n_keys = match self.cfg.context {
                Context::Causal => t + 1,
                Context::Bidirectional => t_len,
            };
            for h in 0..heads {
                let ho = h * hd;
                let g = &dctx[t * d + ho..t * d + ho + hd];
                if g.iter().all(|&v| v == S::zero()) {
                    continue;
                }
                let row = (h * t_len + t) * t_len;
                let a = &act.att[row..row + n_keys];
                let mut weighted = S::zero();
                for s in 0..n_keys {
                    da[s] = dot(g, &act.v[s * d + ho..s * d + ho + hd]);
                    weighted += a[s] * da[s];
                    axpy(a[s], g, &mut dv[s * d + ho..s * d + ho + hd]);
                }
                for s in 0..n_keys {
                    let ds = a[s] * (da[s] - weighted) * scale;
                    if ds == S::zero() {
                        continue;
                    }
                    axpy(ds, &act.k[s * d + ho..s * d + ho + hd], &mut dq[t * d + ho..t * d + ho + hd]);
                    axpy(ds, &act.q[t * d + ho..t * d + ho + hd], &mut dk[s * d + ho..s * d + ho + hd]);
                }
            }
        }
        let mut dln1 = vec![S::zero(); t_len * d];
        for (dy, w, b) in [(&dq, lo.wq, lo.bq), (&dk, lo.wk, lo.bk), (&dv, lo.wv, lo.bv)] {
            let (dw, db) = pair_mut(grad, w, d * d, b, d);
            linear_backward(&act.ln1.out, dy, t_len, self.seg(w, d * d), dw, db, Some(&mut dln1));
        }
        let gain = self.seg(lo.ln1_g, d);
        let (dg, dbias) = pair_mut(grad, lo.ln1_g, d, lo.ln1_b, d);
        for r in 0..t_len {
            let span = r * d..(r + 1) * d;
            layernorm_backward_row(&dln1[span.clone()], &act.ln1.xhat[span.clone()], act.ln1.rstd[r], gain, dg, dbias, &mut dx[span]);
        }
    }
}

/// Two disjoint mutable windows of `buf`; `a` must precede `b`.
fn pair_mut<S>(buf: &mut [S], a: usize, a_len: usize, b: usize, b_len: usize) -> (&mut [S], &mut [S]) {
    debug_assert!(a + a_len <= b);
    let (lo, hi) = buf.split_at_mut(b);
    (&mut lo[a..a + a_len], &mut hi[..b_len])
}

/// Incremental causal decoder. Feeding tokens one at a time yields exactly
/// the logits of the full forward pass at each position.
#[derive(Clone)]
pub struct DecodeState<S> {
    keys: Vec<Vec<S>>,
    values: Vec<Vec<S>>,
    pos: usize,
}

impl<S: Scalar> DecodeState<S> {
    pub(crate) fn new(layers: usize) -> Self {
        DecodeState {
            keys: vec![Vec::new(); layers],
            values: vec![Vec::new(); layers],
            pos: 0,
        }
    }

    /// Number of tokens consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }
}

impl<'a, S: Scalar> Net<'a, S> {
    pub fn step(&self, state: &mut DecodeState<S>, token: TokenId) -> Vec<S> {
        let cfg = self.cfg;
        let d = cfg.width;
        let f = self.mlp_width();
        let heads = cfg.heads;
        let hd = d / heads;
        let scale = S::one() / S::of_usize(hd).sqrt();
        let pos = state.pos;

        let mut x = vec![S::zero(); d];
        self.embed_into(Some(token), pos, &mut x);
        let mut xhat = vec![S::zero(); d];
        let mut ln = vec![S::zero(); d];
        let mut q = vec![S::zero(); d];
        let mut k = vec![S::zero(); d];
        let mut v = vec![S::zero(); d];
        let mut ctx = vec![S::zero(); d];
        let mut attn_out = vec![S::zero(); d];
        let mut weights = vec![S::zero(); pos + 1];
        let mut hpre = vec![S::zero(); f];
        let mut mlp_out = vec![S::zero(); d];
        for (l, lo) in self.off.layers.iter().enumerate() {
            layernorm_row(&x, self.seg(lo.ln1_g, d), self.seg(lo.ln1_b, d), &mut xhat, &mut ln);
            linear_row(&ln, self.seg(lo.wq, d * d), self.seg(lo.bq, d), &mut q);
            linear_row(&ln, self.seg(lo.wk, d * d), self.seg(lo.bk, d), &mut k);
            linear_row(&ln, self.seg(lo.wv, d * d), self.seg(lo.bv, d), &mut v);
            state.keys[l].extend_from_slice(&k);
            state.values[l].extend_from_slice(&v);
            for h in 0..heads {
                let ho = h * hd;
                attend_row(
                    &q[ho..ho + hd],
                    &state.keys[l],
                    &state.values[l],
                    d,
                    ho,
                    pos + 1,
                    scale,
                    &mut weights,
                    &mut ctx[ho..ho + hd],
                );
            }
            linear_row(&ctx, self.seg(lo.wo, d * d), self.seg(lo.bo, d), &mut attn_out);
            for (xi, a) in x.iter_mut().zip(&attn_out) {
                *xi += *a;
            }
            layernorm_row(&x, self.seg(lo.ln2_g, d), self.seg(lo.ln2_b, d), &mut xhat, &mut ln);
            linear_row(&ln, self.seg(lo.w1, d * f), self.seg(lo.b1, f), &mut hpre);
            let hact: Vec<S> = hpre.iter().map(|&h| gelu(h)).collect();
            linear_row(&hact, self.seg(lo.w2, f * d), self.seg(lo.b2, d), &mut mlp_out);
            for (xi, m) in x.iter_mut().zip(&mlp_out) {
                *xi += *m;
            }
        }
        state.pos += 1;
        let out = cfg.output_width();
        layernorm_row(&x, self.seg(self.off.lnf_g, d), self.seg(self.off.lnf_b, d), &mut xhat, &mut ln);
        let mut logits = vec![S::zero(); out];
        linear_row(&ln, self.seg(self.off.head_w, d * out), self.seg(self.off.head_b, out), &mut logits);
        logits
    }
}
