//! Pre-norm causal transformer over a flat parameter vector, with a manual
//! backward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::kernels::{
    gelu, gelu_grad, gemm, layer_norm, layer_norm_backward, softmax_prefix, Real, View,
};
use super::layout::Layout;
use super::LmConfig;

/// The network `f = g(e(x))`. `e` is the token + position lookup, `g`
/// everything after it. The output head is tied to the token embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformer<F> {
    pub(crate) config: LmConfig,
    pub(crate) layout: Layout,
    pub(crate) params: Vec<F>,
}

struct LayerCache<F> {
    x_in: Vec<F>,
    xhat1: Vec<F>,
    rstd1: Vec<F>,
    a: Vec<F>,
    qkv: Vec<F>,
    att: Vec<F>,
    o: Vec<F>,
    xhat2: Vec<F>,
    rstd2: Vec<F>,
    m: Vec<F>,
    f: Vec<F>,
    g: Vec<F>,
}

/// Activations kept from a forward pass.
pub(crate) struct ForwardCache<F> {
    pub(crate) rows: usize,
    layers: Vec<LayerCache<F>>,
    xhatf: Vec<F>,
    rstdf: Vec<F>,
    xf: Vec<F>,
    /// `rows x vocab` next-token distributions.
    pub(crate) probs: Vec<F>,
}

fn add_bias<F: Real>(out: &mut [F], bias: &[F]) {
    for row in out.chunks_exact_mut(bias.len()) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o = *o + b;
        }
    }
}

fn col_sum_into<F: Real>(x: &[F], width: usize, acc: &mut [F]) {
    for row in x.chunks_exact(width) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a = *a + v;
        }
    }
}

impl<F: Real> Transformer<F> {
    /// GPT-2 style init: N(0, std) weights, residual projections scaled by
    /// 1/sqrt(2 * n_layers), zero biases, unit layer-norm gains.
    pub fn init(config: LmConfig, seed: u64, std: f64) -> Self {
        let layout = Layout::new(&config);
        let mut params = vec![F::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let resid_std = std / (2.0 * config.n_layers as f64).sqrt();
        let d = config.d_model;
        let mut fill = |params: &mut [F], off: usize, n: usize, s: f64| {
            for p in &mut params[off..off + n] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *p = F::of(z * s);
            }
        };
        fill(&mut params, layout.wte, config.vocab_size * d, std);
        fill(&mut params, layout.wpe, config.context_len * d, std);
        for l in &layout.layers {
            fill(&mut params, l.w_qkv, 3 * d * d, std);
            fill(&mut params, l.w_o, d * d, resid_std);
            fill(&mut params, l.w_fc, 4 * d * d, std);
            fill(&mut params, l.w_proj, 4 * d * d, resid_std);
            for off in [l.ln1_g, l.ln2_g] {
                params[off..off + d].iter_mut().for_each(|p| *p = F::one());
            }
        }
        params[layout.lnf_g..layout.lnf_g + d]
            .iter_mut()
            .for_each(|p| *p = F::one());
        Self {
            config,
            layout,
            params,
        }
    }

    pub fn from_params(config: LmConfig, params: Vec<F>) -> Self {
        let layout = Layout::new(&config);
        assert_eq!(params.len(), layout.total);
        Self {
            config,
            layout,
            params,
        }
    }

    fn p(&self, off: usize, n: usize) -> &[F] {
        &self.params[off..off + n]
    }

    /// Token + position embedding, `tokens.len() x d_model`. Callers validate
    /// ids and length.
    pub(crate) fn embed_tokens(&self, tokens: &[u32]) -> Vec<F> {
        let d = self.config.d_model;
        let mut out = vec![F::zero(); tokens.len() * d];
        for (t, (&tok, row)) in tokens.iter().zip(out.chunks_exact_mut(d)).enumerate() {
            let te = self.p(self.layout.wte + tok as usize * d, d);
            let pe = self.p(self.layout.wpe + t * d, d);
            for j in 0..d {
                row[j] = te[j] + pe[j];
            }
        }
        out
    }

    /// Runs `g` on a `rows x d_model` embedding matrix.
    pub(crate) fn forward(&self, h: &[F], rows: usize) -> ForwardCache<F> {
        let cfg = &self.config;
        let (d, nh, v) = (cfg.d_model, cfg.n_heads, cfg.vocab_size);
        let hd = d / nh;
        let t = rows;
        let scale = F::one() / F::of(hd as f64).sqrt();
        debug_assert_eq!(h.len(), t * d);

        let mut x = h.to_vec();
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for lo in &self.layout.layers {
            let x_in = x.clone();
            let mut xhat1 = vec![F::zero(); t * d];
            let mut rstd1 = vec![F::zero(); t];
            let mut a = vec![F::zero(); t * d];
            layer_norm(
                &x,
                self.p(lo.ln1_g, d),
                self.p(lo.ln1_b, d),
                d,
                &mut xhat1,
                &mut rstd1,
                &mut a,
            );

            let mut qkv = vec![F::zero(); t * 3 * d];
            gemm(
                View::rm(&a, t, d),
                View::rm(self.p(lo.w_qkv, 3 * d * d), d, 3 * d),
                &mut qkv,
                3 * d,
                false,
            );
            add_bias(&mut qkv, self.p(lo.b_qkv, 3 * d));

            let mut att = vec![F::zero(); nh * t * t];
            let mut o = vec![F::zero(); t * d];
            let qkv_view = View::rm(&qkv, t, 3 * d);
            for head in 0..nh {
                let q = qkv_view.cols(head * hd, hd);
                let k = qkv_view.cols(d + head * hd, hd);
                let vv = qkv_view.cols(2 * d + head * hd, hd);
                let s = &mut att[head * t * t..(head + 1) * t * t];
                gemm(q, k.t(), s, t, false);
                for (i, row) in s.chunks_exact_mut(t).enumerate() {
                    for e in &mut row[..=i] {
                        *e = *e * scale;
                    }
                    softmax_prefix(row, i + 1);
                }
                gemm(View::rm(s, t, t), vv, &mut o[head * hd..], d, false);
            }

            let mut y = vec![F::zero(); t * d];
            gemm(
                View::rm(&o, t, d),
                View::rm(self.p(lo.w_o, d * d), d, d),
                &mut y,
                d,
                false,
            );
            add_bias(&mut y, self.p(lo.b_o, d));
            for (xv, yv) in x.iter_mut().zip(&y) {
                *xv = *xv + *yv;
            }

            let mut xhat2 = vec![F::zero(); t * d];
            let mut rstd2 = vec![F::zero(); t];
            let mut m = vec![F::zero(); t * d];
            layer_norm(
                &x,
                self.p(lo.ln2_g, d),
                self.p(lo.ln2_b, d),
                d,
                &mut xhat2,
                &mut rstd2,
                &mut m,
            );
            let mut f = vec![F::zero(); t * 4 * d];
            gemm(
                View::rm(&m, t, d),
                View::rm(self.p(lo.w_fc, 4 * d * d), d, 4 * d),
                &mut f,
                4 * d,
                false,
            );
            add_bias(&mut f, self.p(lo.b_fc, 4 * d));
            let g: Vec<F> = f.iter().map(|&z| gelu(z)).collect();
            let mut z = vec![F::zero(); t * d];
            gemm(
                View::rm(&g, t, 4 * d),
                View::rm(self.p(lo.w_proj, 4 * d * d), 4 * d, d),
                &mut z,
                d,
                false,
            );
            add_bias(&mut z, self.p(lo.b_proj, d));
            for (xv, zv) in x.iter_mut().zip(&z) {
                *xv = *xv + *zv;
            }

            layers.push(LayerCache {
                x_in,
                xhat1,
                rstd1,
                a,
                qkv,
                att,
                o,
                xhat2,
                rstd2,
                m,
                f,
                g,
            });
        }

        let mut xhatf = vec![F::zero(); t * d];
        let mut rstdf = vec![F::zero(); t];
        let mut xf = vec![F::zero(); t * d];
        layer_norm(
            &x,
            self.p(self.layout.lnf_g, d),
            self.p(self.layout.lnf_b, d),
            d,
            &mut xhatf,
            &mut rstdf,
            &mut xf,
        );
        let mut probs = vec![F::zero(); t * v];
        gemm(
            View::rm(&xf, t, d),
            View::rm(self.p(self.layout.wte, v * d), v, d).t(),
            &mut probs,
            v,
            false,
        );
        for row in probs.chunks_exact_mut(v) {
            softmax_prefix(row, v);
        }

        ForwardCache {
            rows: t,
            layers,
            xhatf,
            rstdf,
            xf,
            probs,
        }
    }

    /// Backpropagates `dlogits` (`rows x vocab`) through the network and the
    /// embedding lookup of `tokens`, accumulating into `grads`.
    pub(crate) fn backward(
        &self,
        tokens: &[u32],
        cache: &ForwardCache<F>,
        dlogits: &[F],
        grads: &mut [F],
    ) {
        let cfg = &self.config;
        let (d, nh, v) = (cfg.d_model, cfg.n_heads, cfg.vocab_size);
        let hd = d / nh;
        let t = cache.rows;
        let scale = F::one() / F::of(hd as f64).sqrt();
        let lay = &self.layout;

        // tied head: logits = xf * wte^T
        gemm(
            View::rm(dlogits, t, v).t(),
            View::rm(&cache.xf, t, d),
            &mut grads[lay.wte..lay.wte + v * d],
            d,
            true,
        );
        let mut dxf = vec![F::zero(); t * d];
        gemm(
            View::rm(dlogits, t, v),
            View::rm(self.p(lay.wte, v * d), v, d),
            &mut dxf,
            d,
            false,
        );
        let mut dx = vec![F::zero(); t * d];
        {
            let (dg, db) = grads[lay.lnf_g..lay.lnf_g + 2 * d].split_at_mut(d);
            layer_norm_backward(
                &dxf,
                &cache.xhatf,
                &cache.rstdf,
                self.p(lay.lnf_g, d),
                d,
                &mut dx,
                dg,
                db,
            );
        }

        for (lo, lc) in lay.layers.iter().zip(&cache.layers).rev() {
            // feed-forward block; dx holds d(x_out)
            gemm(
                View::rm(&lc.g, t, 4 * d).t(),
                View::rm(&dx, t, d),
                &mut grads[lo.w_proj..lo.w_proj + 4 * d * d],
                d,
                true,
            );
            col_sum_into(&dx, d, &mut grads[lo.b_proj..lo.b_proj + d]);
            let mut dgl = vec![F::zero(); t * 4 * d];
            gemm(
                View::rm(&dx, t, d),
                View::rm(self.p(lo.w_proj, 4 * d * d), 4 * d, d).t(),
                &mut dgl,
                4 * d,
                false,
            );
            for (dv, &fv) in dgl.iter_mut().zip(&lc.f) {
                *dv = *dv * gelu_grad(fv);
            }
            gemm(
                View::rm(&lc.m, t, d).t(),
                View::rm(&dgl, t, 4 * d),
                &mut grads[lo.w_fc..lo.w_fc + 4 * d * d],
                4 * d,
                true,
            );
            col_sum_into(&dgl, 4 * d, &mut grads[lo.b_fc..lo.b_fc + 4 * d]);
            let mut dm = vec![F::zero(); t * d];
            gemm(
                View::rm(&dgl, t, 4 * d),
                View::rm(self.p(lo.w_fc, 4 * d * d), d, 4 * d).t(),
                &mut dm,
                d,
                false,
            );
            {
                let (dg, db) = grads[lo.ln2_g..lo.ln2_g + 2 * d].split_at_mut(d);
                layer_norm_backward(
                    &dm,
                    &lc.xhat2,
                    &lc.rstd2,
                    self.p(lo.ln2_g, d),
                    d,
                    &mut dx,
                    dg,
                    db,
                );
            }

            // attention block; dx holds d(x_mid)
            gemm(
                View::rm(&lc.o, t, d).t(),
                View::rm(&dx, t, d),
                &mut grads[lo.w_o..lo.w_o + d * d],
                d,
                true,
            );
            col_sum_into(&dx, d, &mut grads[lo.b_o..lo.b_o + d]);
            let mut d_o = vec![F::zero(); t * d];
            gemm(
                View::rm(&dx, t, d),
                View::rm(self.p(lo.w_o, d * d), d, d).t(),
                &mut d_o,
                d,
                false,
            );

            let mut dqkv = vec![F::zero(); t * 3 * d];
            let mut dp = vec![F::zero(); t * t];
            let qkv_view = View::rm(&lc.qkv, t, 3 * d);
            let do_view = View::rm(&d_o, t, d);
            for head in 0..nh {
                let p = View::rm(&lc.att[head * t * t..(head + 1) * t * t], t, t);
                let q = qkv_view.cols(head * hd, hd);
                let k = qkv_view.cols(d + head * hd, hd);
                let vv = qkv_view.cols(2 * d + head * hd, hd);
                let doh = do_view.cols(head * hd, hd);
                gemm(p.t(), doh, &mut dqkv[2 * d + head * hd..], 3 * d, false);
                gemm(doh, vv.t(), &mut dp, t, false);
                for i in 0..t {
                    let prow = &p.data[i * t..(i + 1) * t];
                    let drow = &mut dp[i * t..(i + 1) * t];
                    let dot = (0..=i).fold(F::zero(), |acc, j| acc + prow[j] * drow[j]);
                    for j in 0..=i {
                        drow[j] = prow[j] * (drow[j] - dot) * scale;
                    }
                    for e in &mut drow[i + 1..] {
                        *e = F::zero();
                    }
                }
                gemm(View::rm(&dp, t, t), k, &mut dqkv[head * hd..], 3 * d, false);
                gemm(
                    View::rm(&dp, t, t).t(),
                    q,
                    &mut dqkv[d + head * hd..],
                    3 * d,
                    false,
                );
            }
            gemm(
                View::rm(&lc.a, t, d).t(),
                View::rm(&dqkv, t, 3 * d),
                &mut grads[lo.w_qkv..lo.w_qkv + 3 * d * d],
                3 * d,
                true,
            );
            col_sum_into(&dqkv, 3 * d, &mut grads[lo.b_qkv..lo.b_qkv + 3 * d]);
            let mut da = vec![F::zero(); t * d];
            gemm(
                View::rm(&dqkv, t, 3 * d),
                View::rm(self.p(lo.w_qkv, 3 * d * d), d, 3 * d).t(),
                &mut da,
                d,
                false,
            );
            {
                let (dg, db) = grads[lo.ln1_g..lo.ln1_g + 2 * d].split_at_mut(d);
                layer_norm_backward(
                    &da,
                    &lc.xhat1,
                    &lc.rstd1,
                    self.p(lo.ln1_g, d),
                    d,
                    &mut dx,
                    dg,
                    db,
                );
            }
            debug_assert_eq!(lc.x_in.len(), dx.len());
        }

        for (pos, (&tok, row)) in tokens.iter().zip(dx.chunks_exact(d)).enumerate() {
            let te = lay.wte + tok as usize * d;
            let pe = lay.wpe + pos * d;
            for j in 0..d {
                grads[te + j] = grads[te + j] + row[j];
                grads[pe + j] = grads[pe + j] + row[j];
            }
        }
    }

    /// Mean next-token cross-entropy over positions 2..=T and its gradient.
    pub(crate) fn loss_and_grad(&self, tokens: &[u32]) -> (f64, Vec<F>) {
        let v = self.config.vocab_size;
        let t = tokens.len();
        let h = self.embed_tokens(tokens);
        let cache = self.forward(&h, t);
        let scored = (t - 1) as f64;
        let inv = F::of(1.0 / scored);
        let mut dlogits = vec![F::zero(); t * v];
        let mut loss = 0.0f64;
        for pos in 0..t - 1 {
            let target = tokens[pos + 1] as usize;
            let prow = &cache.probs[pos * v..(pos + 1) * v];
            loss -= prow[target].to_f64().unwrap().ln();
            let drow = &mut dlogits[pos * v..(pos + 1) * v];
            for (dst, &p) in drow.iter_mut().zip(prow) {
                *dst = p * inv;
            }
            drow[target] = drow[target] - inv;
        }
        let mut grads = vec![F::zero(); self.params.len()];
        self.backward(tokens, &cache, &dlogits, &mut grads);
        (loss / scored, grads)
    }

    /// Same objective as [`Self::loss_and_grad`] without the backward pass.
    pub(crate) fn loss(&self, tokens: &[u32]) -> f64 {
        let v = self.config.vocab_size;
        let t = tokens.len();
        let cache = self.forward(&self.embed_tokens(tokens), t);
        let total: f64 = (0..t - 1)
            .map(|pos| {
                -cache.probs[pos * v + tokens[pos + 1] as usize]
                    .to_f64()
                    .unwrap()
                    .ln()
            })
            .sum();
        total / (t - 1) as f64
    }
}
