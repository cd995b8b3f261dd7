//! Weights, forward pass and hand-written reverse-mode gradients.

use super::{decode_bits, tokenize, CodeLayout, DecoderError};
use crate::mask::{DecoderArchitecture, LayerShape, StructuredMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Tensors of one pre-layernorm block. Projection matrices are row-major
/// `out × in`; head `h` owns rows `h·hd..(h+1)·hd` of `wq`/`wk`/`wv` and the
/// same columns of `wo`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub heads: usize,
    pub d_ffn: usize,
    pub ln1_g: Vec<f64>,
    pub ln1_b: Vec<f64>,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    pub ln2_g: Vec<f64>,
    pub ln2_b: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl LayerWeights {
    fn zeros(d: usize, hd: usize, shape: LayerShape) -> Self {
        let hdim = shape.heads * hd;
        let f = shape.d_ffn;
        Self {
            heads: shape.heads,
            d_ffn: f,
            ln1_g: vec![0.0; d],
            ln1_b: vec![0.0; d],
            wq: vec![0.0; hdim * d],
            wk: vec![0.0; hdim * d],
            wv: vec![0.0; hdim * d],
            wo: vec![0.0; d * hdim],
            ln2_g: vec![0.0; d],
            ln2_b: vec![0.0; d],
            w1: vec![0.0; f * d],
            b1: vec![0.0; f],
            w2: vec![0.0; d * f],
            b2: vec![0.0; d],
        }
    }

    pub fn shape(&self) -> LayerShape {
        LayerShape {
            heads: self.heads,
            d_ffn: self.d_ffn,
        }
    }

    fn tensors(&self) -> [(&'static str, &Vec<f64>); 12] {
        [
            ("ln1_g", &self.ln1_g),
            ("ln1_b", &self.ln1_b),
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("ln2_g", &self.ln2_g),
            ("ln2_b", &self.ln2_b),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> [(&'static str, &mut Vec<f64>); 12] {
        [
            ("ln1_g", &mut self.ln1_g),
            ("ln1_b", &mut self.ln1_b),
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("wo", &mut self.wo),
            ("ln2_g", &mut self.ln2_g),
            ("ln2_b", &mut self.ln2_b),
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ]
    }
}

/// Every trainable tensor of the decoder. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub d_model: usize,
    pub head_dim: usize,
    /// Type embeddings: token `s` of type τ maps to `s·emb_τ + bias_τ`.
    pub emb_mag: Vec<f64>,
    pub emb_syn: Vec<f64>,
    pub bias_mag: Vec<f64>,
    pub bias_syn: Vec<f64>,
    pub layers: Vec<LayerWeights>,
    pub lnf_g: Vec<f64>,
    pub lnf_b: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl Weights {
    pub fn zeros(d_model: usize, head_dim: usize, shapes: &[LayerShape]) -> Self {
        let d = d_model;
        Self {
            d_model,
            head_dim,
            emb_mag: vec![0.0; d],
            emb_syn: vec![0.0; d],
            bias_mag: vec![0.0; d],
            bias_syn: vec![0.0; d],
            layers: shapes
                .iter()
                .map(|&s| LayerWeights::zeros(d, head_dim, s))
                .collect(),
            lnf_g: vec![0.0; d],
            lnf_b: vec![0.0; d],
            w_out: vec![0.0; d],
            b_out: vec![0.0; 1],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.d_model, self.head_dim, &self.shapes())
    }

    pub fn shapes(&self) -> Vec<LayerShape> {
        self.layers.iter().map(LayerWeights::shape).collect()
    }

    /// Named tensors in canonical order.
    pub fn tensors(&self) -> Vec<(String, &Vec<f64>)> {
        let mut v: Vec<(String, &Vec<f64>)> = vec![
            ("emb_mag".into(), &self.emb_mag),
            ("emb_syn".into(), &self.emb_syn),
            ("bias_mag".into(), &self.bias_mag),
            ("bias_syn".into(), &self.bias_syn),
        ];
        for (l, lw) in self.layers.iter().enumerate() {
            v.extend(
                lw.tensors()
                    .into_iter()
                    .map(|(n, t)| (format!("layer{l}.{n}"), t)),
            );
        }
        v.push(("lnf_g".into(), &self.lnf_g));
        v.push(("lnf_b".into(), &self.lnf_b));
        v.push(("w_out".into(), &self.w_out));
        v.push(("b_out".into(), &self.b_out));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut v: Vec<(String, &mut Vec<f64>)> = vec![
            ("emb_mag".into(), &mut self.emb_mag),
            ("emb_syn".into(), &mut self.emb_syn),
            ("bias_mag".into(), &mut self.bias_mag),
            ("bias_syn".into(), &mut self.bias_syn),
        ];
        for (l, lw) in self.layers.iter_mut().enumerate() {
            v.extend(
                lw.tensors_mut()
                    .into_iter()
                    .map(|(n, t)| (format!("layer{l}.{n}"), t)),
            );
        }
        v.push(("lnf_g".into(), &mut self.lnf_g));
        v.push(("lnf_b".into(), &mut self.lnf_b));
        v.push(("w_out".into(), &mut self.w_out));
        v.push(("b_out".into(), &mut self.b_out));
        v
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Weights) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= c);
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|x| x * x)
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// Errors unless every tensor has the length its shape implies.
    pub fn check(&self) -> Result<(), DecoderError> {
        let reference = Self::zeros(self.d_model, self.head_dim, &self.shapes());
        for ((name, a), (_, b)) in self.tensors().into_iter().zip(reference.tensors()) {
            if a.len() != b.len() {
                return Err(DecoderError::Shape(format!(
                    "tensor {name} has {} entries, expected {}",
                    a.len(),
                    b.len()
                )));
            }
        }
        Ok(())
    }
}

/// Multiplicative unit gates; `1` passes a unit through, `0` removes it.
#[derive(Debug, Clone, PartialEq)]
pub struct Gates {
    pub head: Vec<Vec<f64>>,
    pub ffn: Vec<Vec<f64>>,
}

/// Loss gradients with respect to each unit gate.
pub type GateGrads = Gates;

impl Gates {
    pub fn from_mask(mask: &StructuredMask) -> Self {
        let conv = |v: &Vec<Vec<bool>>| {
            v.iter()
                .map(|r| r.iter().map(|&b| f64::from(u8::from(b))).collect())
                .collect()
        };
        Self {
            head: conv(&mask.head_bits),
            ffn: conv(&mask.ffn_bits),
        }
    }

    pub fn zeros(shapes: &[LayerShape]) -> Self {
        Self {
            head: shapes.iter().map(|s| vec![0.0; s.heads]).collect(),
            ffn: shapes.iter().map(|s| vec![0.0; s.d_ffn]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gates) {
        for (a, b) in self
            .head
            .iter_mut()
            .chain(self.ffn.iter_mut())
            .zip(other.head.iter().chain(other.ffn.iter()))
        {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

#[derive(Debug, Clone)]
struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    ln1: LnCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention probabilities, head-major, aligned with the pattern's key lists.
    probs: Vec<f64>,
    /// Per-head context before gating.
    ctx: Vec<f64>,
    ln2: LnCache,
    b: Vec<f64>,
    u: Vec<f64>,
    act: Vec<f64>,
}

/// Activations saved by the forward pass for [`DecoderModel::backward`].
#[derive(Debug, Clone)]
pub struct Cache {
    tokens: Vec<f64>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderModel {
    /// Backbone architecture the model descends from. After compaction the
    /// per-layer shapes live in `weights`.
    pub arch: DecoderArchitecture,
    pub weights: Weights,
    mask: StructuredMask,
}

impl DecoderModel {
    /// Randomly initialized model with an all-ones mask.
    pub fn new(arch: DecoderArchitecture, seed: u64) -> Result<Self, DecoderError> {
        arch.validate()?;
        let d = arch.d_model;
        let mut w = Weights::zeros(d, arch.head_dim(), &arch.layer_shapes());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |t: &mut Vec<f64>, a: f64| {
            t.iter_mut().for_each(|x| *x = rng.gen_range(-a..=a));
        };
        fill(&mut w.emb_mag, 1.0);
        fill(&mut w.emb_syn, 1.0);
        fill(&mut w.bias_mag, 1.0);
        fill(&mut w.bias_syn, 1.0);
        for lw in &mut w.layers {
            let hdim = lw.heads * arch.head_dim();
            let attn = (6.0 / (d + hdim) as f64).sqrt();
            let ffn = (6.0 / (d + lw.d_ffn) as f64).sqrt();
            lw.ln1_g.fill(1.0);
            lw.ln2_g.fill(1.0);
            fill(&mut lw.wq, attn);
            fill(&mut lw.wk, attn);
            fill(&mut lw.wv, attn);
            fill(&mut lw.wo, attn);
            fill(&mut lw.w1, ffn);
            fill(&mut lw.w2, ffn);
        }
        w.lnf_g.fill(1.0);
        fill(&mut w.w_out, (6.0 / (d + 1) as f64).sqrt());
        Ok(Self {
            arch,
            mask: StructuredMask::for_arch(&arch),
            weights: w,
        })
    }

    pub fn zeros(arch: DecoderArchitecture) -> Result<Self, DecoderError> {
        arch.validate()?;
        Ok(Self {
            weights: Weights::zeros(arch.d_model, arch.head_dim(), &arch.layer_shapes()),
            mask: StructuredMask::for_arch(&arch),
            arch,
        })
    }

    pub fn from_parts(
        arch: DecoderArchitecture,
        weights: Weights,
        mask: StructuredMask,
    ) -> Result<Self, DecoderError> {
        arch.validate()?;
        if weights.d_model != arch.d_model || weights.head_dim != arch.head_dim() {
            return Err(DecoderError::Shape(
                "weights width does not match architecture".into(),
            ));
        }
        if weights.layers.len() != arch.layers {
            return Err(DecoderError::Shape(format!(
                "{} weight layers for a {}-layer architecture",
                weights.layers.len(),
                arch.layers
            )));
        }
        weights.check()?;
        mask.check_shapes(&weights.shapes())?;
        Ok(Self {
            arch,
            weights,
            mask,
        })
    }

    pub fn active_mask(&self) -> &StructuredMask {
        &self.mask
    }

    pub fn shapes(&self) -> Vec<LayerShape> {
        self.weights.shapes()
    }

    /// True once tensors have been physically shrunk below the backbone shapes.
    pub fn is_compacted(&self) -> bool {
        self.shapes() != self.arch.layer_shapes()
    }

    /// Replaces the active mask; shapes must match the current tensors.
    pub fn set_mask(&mut self, mask: StructuredMask) -> Result<(), DecoderError> {
        mask.check_shapes(&self.shapes())?;
        self.mask = mask;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.weights.param_count()
    }

    pub fn gates(&self) -> Gates {
        Gates::from_mask(&self.mask)
    }

    pub fn forward(&self, layout: &CodeLayout, tokens: &[f64]) -> Result<Vec<f64>, DecoderError> {
        Ok(self.forward_with_gates(layout, tokens, &self.gates())?.0)
    }

    /// Logits for channel output `y`.
    pub fn logits(&self, layout: &CodeLayout, y: &[f64]) -> Result<Vec<f64>, DecoderError> {
        self.forward(layout, &tokenize(&layout.pcm, y)?)
    }

    /// Hard-decision estimate of the transmitted word.
    pub fn decode(&self, layout: &CodeLayout, y: &[f64]) -> Result<Vec<u8>, DecoderError> {
        Ok(decode_bits(y, &self.logits(layout, y)?))
    }

    pub fn forward_with_gates(
        &self,
        layout: &CodeLayout,
        tokens: &[f64],
        gates: &Gates,
    ) -> Result<(Vec<f64>, Cache), DecoderError> {
        let w = &self.weights;
        let pat = &layout.pattern;
        let (t, n, d, hd) = (pat.tokens(), pat.n(), w.d_model, w.head_dim);
        if tokens.len() != t {
            return Err(DecoderError::TokenLength {
                got: tokens.len(),
                expected: t,
            });
        }
        let mut x = vec![0.0; t * d];
        for (i, &s) in tokens.iter().enumerate() {
            let (e, b) = if i < n {
                (&w.emb_mag, &w.bias_mag)
            } else {
                (&w.emb_syn, &w.bias_syn)
            };
            for c in 0..d {
                x[i * d + c] = s * e[c] + b[c];
            }
        }
        let scale = 1.0 / (hd as f64).sqrt();
        let nnz = pat.nnz();
        let mut layers = Vec::with_capacity(w.layers.len());
        for (l, lw) in w.layers.iter().enumerate() {
            let hdim = lw.heads * hd;
            let (a, ln1) = ln_forward(&x, t, d, &lw.ln1_g, &lw.ln1_b);
            let q = mm_xwt(&a, t, d, &lw.wq, hdim);
            let k = mm_xwt(&a, t, d, &lw.wk, hdim);
            let v = mm_xwt(&a, t, d, &lw.wv, hdim);
            let mut probs = vec![0.0; lw.heads * nnz];
            let mut ctx = vec![0.0; t * hdim];
            for h in 0..lw.heads {
                let ho = h * hd;
                for i in 0..t {
                    let keys = pat.keys(i);
                    let p = &mut probs[h * nnz + pat.offset(i)..][..keys.len()];
                    let qi = &q[i * hdim + ho..][..hd];
                    let mut mx = f64::NEG_INFINITY;
                    for (slot, &j) in p.iter_mut().zip(keys) {
                        *slot = dot(qi, &k[j * hdim + ho..][..hd]) * scale;
                        mx = mx.max(*slot);
                    }
                    let mut sum = 0.0;
                    for slot in p.iter_mut() {
                        *slot = (*slot - mx).exp();
                        sum += *slot;
                    }
                    let ci = &mut ctx[i * hdim + ho..][..hd];
                    for (slot, &j) in p.iter_mut().zip(keys) {
                        *slot /= sum;
                        axpy(*slot, &v[j * hdim + ho..][..hd], ci);
                    }
                }
            }
            let gated = gate_heads(&ctx, t, hd, &gates.head[l]);
            let attn = mm_xwt(&gated, t, hdim, &lw.wo, d);
            x.iter_mut().zip(&attn).for_each(|(a, b)| *a += b);

            let f = lw.d_ffn;
            let (b, ln2) = ln_forward(&x, t, d, &lw.ln2_g, &lw.ln2_b);
            let mut u = mm_xwt(&b, t, d, &lw.w1, f);
            for row in u.chunks_mut(f.max(1)) {
                row.iter_mut().zip(&lw.b1).for_each(|(a, c)| *a += c);
            }
            let act: Vec<f64> = u.iter().map(|&z| gelu(z)).collect();
            let gated_act = gate_cols(&act, t, f, &gates.ffn[l]);
            let out = mm_xwt(&gated_act, t, f, &lw.w2, d);
            for (i, row) in x.chunks_mut(d).enumerate() {
                for c in 0..d {
                    row[c] += out[i * d + c] + lw.b2[c];
                }
            }
            layers.push(LayerCache {
                ln1,
                a,
                q,
                k,
                v,
                probs,
                ctx,
                ln2,
                b,
                u,
                act,
            });
        }
        let (z, lnf) = ln_forward(&x, t, d, &w.lnf_g, &w.lnf_b);
        let logits: Vec<f64> = (0..n)
            .map(|i| dot(&z[i * d..][..d], &w.w_out) + w.b_out[0])
            .collect();
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(DecoderError::NonFinite("logits"));
        }
        Ok((
            logits,
            Cache {
                tokens: tokens.to_vec(),
                layers,
                lnf,
                z,
            },
        ))
    }

    /// Gradients of a scalar loss given `dlogits = ∂loss/∂logits` for the
    /// forward pass recorded in `cache`.
    pub fn backward(
        &self,
        layout: &CodeLayout,
        gates: &Gates,
        cache: &Cache,
        dlogits: &[f64],
    ) -> Result<(Weights, GateGrads), DecoderError> {
        let w = &self.weights;
        let pat = &layout.pattern;
        let (t, n, d, hd) = (pat.tokens(), pat.n(), w.d_model, w.head_dim);
        if dlogits.len() != n || cache.tokens.len() != t || cache.layers.len() != w.layers.len() {
            return Err(DecoderError::Shape(
                "cache or logit gradient does not match the layout".into(),
            ));
        }
        let mut g = w.zeros_like();
        let mut gg = Gates::zeros(&w.shapes());

        let mut dz = vec![0.0; t * d];
        for i in 0..n {
            let zi = &cache.z[i * d..][..d];
            axpy(dlogits[i], zi, &mut g.w_out);
            g.b_out[0] += dlogits[i];
            axpy(dlogits[i], &w.w_out, &mut dz[i * d..][..d]);
        }
        let mut dx = ln_backward(&dz, t, d, &cache.lnf, &w.lnf_g, &mut g.lnf_g, &mut g.lnf_b);

        let scale = 1.0 / (hd as f64).sqrt();
        let nnz = pat.nnz();
        for l in (0..w.layers.len()).rev() {
            let lw = &w.layers[l];
            let lc = &cache.layers[l];
            let gl = &mut g.layers[l];
            let hdim = lw.heads * hd;
            let f = lw.d_ffn;

            // feed-forward branch
            for row in dx.chunks(d) {
                gl.b2.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            let gated_act = gate_cols(&lc.act, t, f, &gates.ffn[l]);
            acc_dw(&mut gl.w2, &dx, t, d, &gated_act, f);
            let dga = mm_dyw(&dx, t, d, &lw.w2, f);
            let mut du = vec![0.0; t * f];
            for i in 0..t {
                for c in 0..f {
                    let idx = i * f + c;
                    gg.ffn[l][c] += dga[idx] * lc.act[idx];
                    du[idx] = dga[idx] * gates.ffn[l][c] * gelu_grad(lc.u[idx]);
                }
            }
            for row in du.chunks(f.max(1)) {
                gl.b1.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            acc_dw(&mut gl.w1, &du, t, f, &lc.b, d);
            let db = mm_dyw(&du, t, f, &lw.w1, d);
            let dres = ln_backward(&db, t, d, &lc.ln2, &lw.ln2_g, &mut gl.ln2_g, &mut gl.ln2_b);
            dx.iter_mut().zip(&dres).for_each(|(a, b)| *a += b);

            // attention branch
            let gated = gate_heads(&lc.ctx, t, hd, &gates.head[l]);
            acc_dw(&mut gl.wo, &dx, t, d, &gated, hdim);
            let dgc = mm_dyw(&dx, t, d, &lw.wo, hdim);
            let mut dctx = vec![0.0; t * hdim];
            for i in 0..t {
                for h in 0..lw.heads {
                    let gate = gates.head[l][h];
                    for c in h * hd..(h + 1) * hd {
                        let idx = i * hdim + c;
                        gg.head[l][h] += dgc[idx] * lc.ctx[idx];
                        dctx[idx] = dgc[idx] * gate;
                    }
                }
            }
            let mut dq = vec![0.0; t * hdim];
            let mut dk = vec![0.0; t * hdim];
            let mut dv = vec![0.0; t * hdim];
            let mut dp = Vec::new();
            for h in 0..lw.heads {
                let ho = h * hd;
                for i in 0..t {
                    let keys = pat.keys(i);
                    let p = &lc.probs[h * nnz + pat.offset(i)..][..keys.len()];
                    let dci = &dctx[i * hdim + ho..][..hd];
                    dp.clear();
                    let mut inner = 0.0;
                    for (&pij, &j) in p.iter().zip(keys) {
                        let dpij = dot(dci, &lc.v[j * hdim + ho..][..hd]);
                        inner += pij * dpij;
                        dp.push(dpij);
                        axpy(pij, dci, &mut dv[j * hdim + ho..][..hd]);
                    }
                    for ((&pij, &j), &dpij) in p.iter().zip(keys).zip(&dp) {
                        let ds = pij * (dpij - inner) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        axpy(
                            ds,
                            &lc.k[j * hdim + ho..][..hd],
                            &mut dq[i * hdim + ho..][..hd],
                        );
                        axpy(
                            ds,
                            &lc.q[i * hdim + ho..][..hd],
                            &mut dk[j * hdim + ho..][..hd],
                        );
                    }
                }
            }
            acc_dw(&mut gl.wq, &dq, t, hdim, &lc.a, d);
            acc_dw(&mut gl.wk, &dk, t, hdim, &lc.a, d);
            acc_dw(&mut gl.wv, &dv, t, hdim, &lc.a, d);
            let mut da = mm_dyw(&dq, t, hdim, &lw.wq, d);
            let dak = mm_dyw(&dk, t, hdim, &lw.wk, d);
            let dav = mm_dyw(&dv, t, hdim, &lw.wv, d);
            for ((a, b), c) in da.iter_mut().zip(&dak).zip(&dav) {
                *a += b + c;
            }
            let dres = ln_backward(&da, t, d, &lc.ln1, &lw.ln1_g, &mut gl.ln1_g, &mut gl.ln1_b);
            dx.iter_mut().zip(&dres).for_each(|(a, b)| *a += b);
        }

        for (i, &s) in cache.tokens.iter().enumerate() {
            let (ge, gb) = if i < n {
                (&mut g.emb_mag, &mut g.bias_mag)
            } else {
                (&mut g.emb_syn, &mut g.bias_syn)
            };
            let row = &dx[i * d..][..d];
            axpy(s, row, ge);
            gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        Ok((g, gg))
    }
}

/// Mean binary cross-entropy of flip logits against 0/1 targets, in the
/// overflow-free form `max(l,0) − l·t + ln(1 + e^{−|l|})`.
pub fn bce_loss(logits: &[f64], targets: &[f64]) -> f64 {
    let n = logits.len() as f64;
    logits
        .iter()
        .zip(targets)
        .map(|(&l, &t)| l.max(0.0) - l * t + (-l.abs()).exp().ln_1p())
        .sum::<f64>()
        / n
}

/// Loss and its gradient with respect to the logits.
pub fn bce_loss_grad(logits: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    let n = logits.len() as f64;
    let grad = logits
        .iter()
        .zip(targets)
        .map(|(&l, &t)| (sigmoid(l) - t) / n)
        .collect();
    (bce_loss(logits, targets), grad)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_K * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let th = (GELU_C * (u + GELU_K * u * u * u)).tanh();
    0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_K * u * u)
}

fn ln_forward(x: &[f64], t: usize, d: usize, g: &[f64], b: &[f64]) -> (Vec<f64>, LnCache) {
    let mut out = vec![0.0; t * d];
    let mut xhat = vec![0.0; t * d];
    let mut rstd = vec![0.0; t];
    for i in 0..t {
        let row = &x[i * d..][..d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for c in 0..d {
            let xh = (row[c] - mean) * r;
            xhat[i * d + c] = xh;
            out[i * d + c] = g[c] * xh + b[c];
        }
    }
    (out, LnCache { xhat, rstd })
}

fn ln_backward(
    dy: &[f64],
    t: usize,
    d: usize,
    cache: &LnCache,
    g: &[f64],
    dg: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; t * d];
    let mut dxhat = vec![0.0; d];
    for i in 0..t {
        let dyr = &dy[i * d..][..d];
        let xh = &cache.xhat[i * d..][..d];
        let (mut m1, mut m2) = (0.0, 0.0);
        for c in 0..d {
            dg[c] += dyr[c] * xh[c];
            db[c] += dyr[c];
            dxhat[c] = dyr[c] * g[c];
            m1 += dxhat[c];
            m2 += dxhat[c] * xh[c];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        for c in 0..d {
            dx[i * d + c] = cache.rstd[i] * (dxhat[c] - m1 - xh[c] * m2);
        }
    }
    dx
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(a, b)| *a += alpha * b);
}

/// `y[r][o] = Σ_i x[r][i] · w[o][i]`.
fn mm_xwt(x: &[f64], rows: usize, inp: usize, w: &[f64], out: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * out];
    if inp == 0 {
        return y;
    }
    for r in 0..rows {
        let xr = &x[r * inp..][..inp];
        for o in 0..out {
            y[r * out + o] = dot(xr, &w[o * inp..][..inp]);
        }
    }
    y
}

/// `dx[r][i] = Σ_o dy[r][o] · w[o][i]`.
fn mm_dyw(dy: &[f64], rows: usize, out: usize, w: &[f64], inp: usize) -> Vec<f64> {
    let mut dx = vec![0.0; rows * inp];
    if inp == 0 {
        return dx;
    }
    for r in 0..rows {
        let dxr = &mut dx[r * inp..][..inp];
        for o in 0..out {
            let s = dy[r * out + o];
            if s != 0.0 {
                axpy(s, &w[o * inp..][..inp], dxr);
            }
        }
    }
    dx
}

/// `dw[o][i] += Σ_r dy[r][o] · x[r][i]`.
fn acc_dw(dw: &mut [f64], dy: &[f64], rows: usize, out: usize, x: &[f64], inp: usize) {
    if inp == 0 {
        return;
    }
    for r in 0..rows {
        let xr = &x[r * inp..][..inp];
        for o in 0..out {
            let s = dy[r * out + o];
            if s != 0.0 {
                axpy(s, xr, &mut dw[o * inp..][..inp]);
            }
        }
    }
}

fn gate_heads(ctx: &[f64], t: usize, hd: usize, gates: &[f64]) -> Vec<f64> {
    let hdim = gates.len() * hd;
    let mut out = ctx.to_vec();
    for i in 0..t {
        for (h, &g) in gates.iter().enumerate() {
            if g != 1.0 {
                out[i * hdim + h * hd..][..hd]
                    .iter_mut()
                    .for_each(|v| *v *= g);
            }
        }
    }
    out
}

fn gate_cols(x: &[f64], t: usize, f: usize, gates: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    for i in 0..t {
        for (c, &g) in gates.iter().enumerate() {
            if g != 1.0 {
                out[i * f + c] *= g;
            }
        }
    }
    out
}
