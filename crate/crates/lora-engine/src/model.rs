use std::sync::Arc;

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{gelu, gelu_deriv, ones1, randn2, zeros1, Param1, Param2};
use crate::tokenizer::ByteTokenizer;
use crate::LoraError;

/// Attention projections that can carry adapters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetModule {
    Q,
    K,
    V,
    O,
}

impl TargetModule {
    pub fn all() -> Vec<TargetModule> {
        vec![Self::Q, Self::K, Self::V, Self::O]
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Q => "q",
            Self::K => "k",
            Self::V => "v",
            Self::O => "o",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoraSettings {
    pub rank: usize,
    pub alpha: f64,
    pub dropout_p: f64,
}

impl Default for LoraSettings {
    fn default() -> Self {
        LoraSettings {
            rank: 8,
            alpha: 16.0,
            dropout_p: 0.05,
        }
    }
}

/// Toy decoder shape. Defaults: byte vocab plus specials, 64-dim, 2 layers,
/// 4 heads, 256 context, adapters on all four attention projections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDecoderConfig {
    pub vocab_size: usize,
    pub model_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub context_len: usize,
    pub target_modules: Vec<TargetModule>,
    pub lora: LoraSettings,
}

impl Default for ToyDecoderConfig {
    fn default() -> Self {
        ToyDecoderConfig {
            vocab_size: ByteTokenizer.vocab_size(),
            model_dim: 64,
            n_layers: 2,
            n_heads: 4,
            context_len: 256,
            target_modules: TargetModule::all(),
            lora: LoraSettings::default(),
        }
    }
}

impl ToyDecoderConfig {
    pub fn validate(&self) -> Result<(), LoraError> {
        if self.model_dim % self.n_heads != 0 {
            return Err(LoraError::HeadSplit {
                d: self.model_dim,
                n_heads: self.n_heads,
            });
        }
        if self.lora.rank == 0 || self.lora.rank > self.model_dim / 2 {
            return Err(LoraError::RankBound {
                rank: self.lora.rank,
                d: self.model_dim,
                k: self.model_dim,
            });
        }
        Ok(())
    }
}

/// Forward-pass context: dropout RNG when training, and whether base
/// (non-adapter) parameters will need gradients (controls what the caches
/// keep alive).
pub(crate) struct Mode<'r> {
    pub rng: Option<&'r mut ChaCha8Rng>,
    pub store_base_inputs: bool,
}

impl Mode<'static> {
    pub fn eval() -> Mode<'static> {
        Mode { rng: None, store_base_inputs: false }
    }
}

/// The transformer allocates multi-megabyte activations every step; keep
/// glibc from serving those straight from mmap so freed blocks get reused
/// without page-fault churn.
pub(crate) fn tune_allocator() {
    use std::sync::Once;
    static ONCE: Once = Once::new();
    ONCE.call_once(|| unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    });
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub w: Param2, // [in, out]
    pub b: Param1, // [out]
}

pub(crate) struct LinearCache {
    /// Kept only when the base weights will receive gradients.
    x: Option<Arc<Array2<f32>>>,
}

impl Linear {
    fn new(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize, std: f32) -> Self {
        Linear {
            w: randn2(rng, d_in, d_out, std),
            b: zeros1(d_out),
        }
    }

    fn forward(&self, x: &Arc<Array2<f32>>, store_x: bool) -> (Array2<f32>, LinearCache) {
        let y = x.as_ref().dot(&self.w.value) + &self.b.value;
        (y, LinearCache { x: store_x.then(|| Arc::clone(x)) })
    }

    /// Returns dX; accumulates dW/db unless the base is frozen.
    fn backward(&mut self, cache: &LinearCache, dy: &Array2<f32>, train_base: bool) -> Array2<f32> {
        if train_base {
            let x = cache.x.as_ref().expect("training forward stored its input");
            self.w.grad += &x.t().dot(dy);
            self.b.grad += &dy.sum_axis(Axis(0));
        }
        dy.dot(&self.w.value.t())
    }

    /// Single-row forward via a 1×in gemm (contiguous access on `w`).
    fn forward_row(&self, x: &Array1<f32>) -> Array1<f32> {
        let row = x.view().insert_axis(Axis(0));
        let y = row.dot(&self.w.value) + &self.b.value;
        y.index_axis_move(Axis(0), 0)
    }
}

// ---------------------------------------------------------------------------
// Adapted linear: frozen-able base plus optional low-rank branch
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) struct AdapterParams {
    pub a: Param2, // [r, in]
    pub b: Param2, // [out, r]
    pub scaling: f32,
    pub dropout_p: f32,
}

#[derive(Debug, Clone)]
pub(crate) struct AdaptedLinear {
    pub base: Linear,
    pub adapter: Option<AdapterParams>,
}

pub(crate) struct AdaptedCache {
    base: LinearCache,
    /// Adapter-branch input (shared with the base input unless dropout
    /// rewrote it), the low-rank activation, and the dropout mask.
    x_branch: Option<Arc<Array2<f32>>>,
    z: Option<Array2<f32>>,
    mask: Option<Array2<f32>>,
}

impl AdaptedLinear {
    fn forward(&self, x: &Arc<Array2<f32>>, mode: &mut Mode) -> (Array2<f32>, AdaptedCache) {
        let (mut y, base) = self.base.forward(x, mode.store_base_inputs);
        let mut cache = AdaptedCache {
            base,
            x_branch: None,
            z: None,
            mask: None,
        };
        if let Some(adapter) = &self.adapter {
            let (x_branch, mask) = match &mut mode.rng {
                Some(rng) if adapter.dropout_p > 0.0 => {
                    let keep = 1.0 - adapter.dropout_p;
                    let mask = Array2::from_shape_fn(x.raw_dim(), |_| {
                        if rng.random::<f64>() < keep as f64 {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    (Arc::new(x.as_ref() * &mask), Some(mask))
                }
                _ => (Arc::clone(x), None),
            };
            let z = x_branch.dot(&adapter.a.value.t());
            y += &(z.dot(&adapter.b.value.t()) * adapter.scaling);
            cache.x_branch = Some(x_branch);
            cache.z = Some(z);
            cache.mask = mask;
        }
        (y, cache)
    }

    fn backward(
        &mut self,
        cache: &AdaptedCache,
        dy: &Array2<f32>,
        train_base: bool,
    ) -> Array2<f32> {
        let mut dx = self.base.backward(&cache.base, dy, train_base);
        if let Some(adapter) = &mut self.adapter {
            let z = cache.z.as_ref().expect("adapter cache");
            let x_branch = cache.x_branch.as_ref().expect("adapter cache");
            // y += s · z·Bᵀ with z = x_branch·Aᵀ
            let dz = dy.dot(&adapter.b.value) * adapter.scaling;
            adapter.b.grad += &(dy.t().dot(z) * adapter.scaling);
            adapter.a.grad += &dz.t().dot(x_branch.as_ref());
            let mut dx_branch = dz.dot(&adapter.a.value);
            if let Some(mask) = &cache.mask {
                dx_branch *= mask;
            }
            dx += &dx_branch;
        }
        dx
    }

    fn forward_row(&self, x: &Array1<f32>) -> Array1<f32> {
        let mut y = self.base.forward_row(x);
        if let Some(adapter) = &self.adapter {
            let z = adapter.a.value.dot(x);
            y += &(adapter.b.value.dot(&z) * adapter.scaling);
        }
        y
    }
}

// ---------------------------------------------------------------------------
// LayerNorm
// ---------------------------------------------------------------------------

const LN_EPS: f32 = 1e-5;

#[derive(Debug, Clone)]
pub(crate) struct LayerNorm {
    pub g: Param1,
    pub b: Param1,
}

pub(crate) struct LnCache {
    xhat: Array2<f32>,
    inv_std: Array1<f32>,
}

impl LayerNorm {
    fn new(dim: usize) -> Self {
        LayerNorm {
            g: ones1(dim),
            b: zeros1(dim),
        }
    }

    fn forward(&self, x: &Array2<f32>) -> (Array2<f32>, LnCache) {
        let n = x.nrows();
        let d = x.ncols() as f32;
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(n);
        for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f32>() / d;
            *inv = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| v * *inv);
        }
        let y = &xhat * &self.g.value + &self.b.value;
        (y, LnCache { xhat, inv_std })
    }

    fn backward(&mut self, cache: &LnCache, dy: &Array2<f32>, train_base: bool) -> Array2<f32> {
        let d = dy.ncols() as f32;
        if train_base {
            self.g.grad += &(dy * &cache.xhat).sum_axis(Axis(0));
            self.b.grad += &dy.sum_axis(Axis(0));
        }
        let dxhat = dy * &self.g.value;
        let mut dx = Array2::zeros(dy.raw_dim());
        for ((dxh_row, xhat_row), (mut dx_row, inv)) in dxhat
            .rows()
            .into_iter()
            .zip(cache.xhat.rows())
            .zip(dx.rows_mut().into_iter().zip(cache.inv_std.iter()))
        {
            let sum_dxh = dxh_row.sum();
            let sum_dxh_xhat = dxh_row
                .iter()
                .zip(xhat_row.iter())
                .map(|(a, b)| a * b)
                .sum::<f32>();
            for ((dx_v, dxh_v), xhat_v) in
                dx_row.iter_mut().zip(dxh_row.iter()).zip(xhat_row.iter())
            {
                *dx_v = inv / d * (d * dxh_v - sum_dxh - xhat_v * sum_dxh_xhat);
            }
        }
        dx
    }

    fn forward_row(&self, x: &Array1<f32>) -> Array1<f32> {
        let d = x.len() as f32;
        let mean = x.sum() / d;
        let centered = x.mapv(|v| v - mean);
        let var = centered.iter().map(|v| v * v).sum::<f32>() / d;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        centered.mapv(|v| v * inv) * &self.g.value + &self.b.value
    }
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) struct Attention {
    pub q: AdaptedLinear,
    pub k: AdaptedLinear,
    pub v: AdaptedLinear,
    pub o: AdaptedLinear,
    n_heads: usize,
}

pub(crate) struct AttnCache {
    q_cache: AdaptedCache,
    k_cache: AdaptedCache,
    v_cache: AdaptedCache,
    o_cache: AdaptedCache,
    q: Array2<f32>,
    k: Array2<f32>,
    v: Array2<f32>,
    /// Softmax probabilities per (batch item, head).
    probs: Vec<Array2<f32>>,
}

impl Attention {
    fn forward(
        &self,
        x: &Arc<Array2<f32>>,
        batch: usize,
        seq: usize,
        lengths: &[usize],
        mode: &mut Mode,
    ) -> (Array2<f32>, AttnCache) {
        let d = x.ncols();
        let dh = d / self.n_heads;
        let inv_sqrt = 1.0 / (dh as f32).sqrt();

        let (q, q_cache) = self.q.forward(x, mode);
        let (k, k_cache) = self.k.forward(x, mode);
        let (v, v_cache) = self.v.forward(x, mode);

        let mut ctx = Array2::zeros((batch * seq, d));
        let mut probs = Vec::with_capacity(batch * self.n_heads);
        for b in 0..batch {
            let rows = s![b * seq..(b + 1) * seq, ..];
            let len = lengths[b];
            for h in 0..self.n_heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let qh = q.slice(rows).slice_move(cols);
                let kh = k.slice(rows).slice_move(cols);
                let vh = v.slice(rows).slice_move(cols);
                let mut scores = qh.dot(&kh.t());
                // Causal prefix softmax: row i attends to keys 0..=i (capped
                // at the real length); everything past that is exactly zero
                // probability, padded query rows are all-zero.
                for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
                    let limit = if i < len { (i + 1).min(len) } else { 0 };
                    if limit == 0 {
                        row.fill(0.0);
                        continue;
                    }
                    let (mut valid, mut rest) = row.split_at(ndarray::Axis(0), limit);
                    let mut max = f32::NEG_INFINITY;
                    for value in valid.iter_mut() {
                        *value *= inv_sqrt;
                        max = max.max(*value);
                    }
                    let mut sum = 0.0f32;
                    for value in valid.iter_mut() {
                        *value = (*value - max).exp();
                        sum += *value;
                    }
                    let inv_sum = 1.0 / sum;
                    for value in valid.iter_mut() {
                        *value *= inv_sum;
                    }
                    rest.fill(0.0);
                }
                let ctx_h = scores.dot(&vh);
                ctx.slice_mut(rows).slice_mut(cols).assign(&ctx_h);
                probs.push(scores);
            }
        }
        let ctx = Arc::new(ctx);
        let (y, o_cache) = self.o.forward(&ctx, mode);
        (
            y,
            AttnCache {
                q_cache,
                k_cache,
                v_cache,
                o_cache,
                q,
                k,
                v,
                probs,
            },
        )
    }

    fn backward(
        &mut self,
        cache: &AttnCache,
        dy: &Array2<f32>,
        batch: usize,
        seq: usize,
        train_base: bool,
    ) -> Array2<f32> {
        let d = dy.ncols();
        let dh = d / self.n_heads;
        let inv_sqrt = 1.0 / (dh as f32).sqrt();

        let dctx = self.o.backward(&cache.o_cache, dy, train_base);
        let mut dq = Array2::zeros((batch * seq, d));
        let mut dk = Array2::zeros((batch * seq, d));
        let mut dv = Array2::zeros((batch * seq, d));
        for b in 0..batch {
            let rows = s![b * seq..(b + 1) * seq, ..];
            for h in 0..self.n_heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let p = &cache.probs[b * self.n_heads + h];
                let dctx_h = dctx.slice(rows).slice_move(cols);
                let qh = cache.q.slice(rows).slice_move(cols);
                let kh = cache.k.slice(rows).slice_move(cols);
                let vh = cache.v.slice(rows).slice_move(cols);

                let dp = dctx_h.dot(&vh.t());
                let dvh = p.t().dot(&dctx_h);
                // Softmax backward: dS = P ∘ (dP − rowsum(dP∘P)).
                let row_dot = (&dp * p).sum_axis(Axis(1));
                let mut ds = dp;
                for (mut row, dot) in ds.rows_mut().into_iter().zip(row_dot.iter()) {
                    row.mapv_inplace(|v| v - dot);
                }
                ds *= p;
                let dqh = ds.dot(&kh) * inv_sqrt;
                let dkh = ds.t().dot(&qh) * inv_sqrt;

                dq.slice_mut(rows).slice_mut(cols).assign(&dqh);
                dk.slice_mut(rows).slice_mut(cols).assign(&dkh);
                dv.slice_mut(rows).slice_mut(cols).assign(&dvh);
            }
        }
        let mut dx = self.q.backward(&cache.q_cache, &dq, train_base);
        dx += &self.k.backward(&cache.k_cache, &dk, train_base);
        dx += &self.v.backward(&cache.v_cache, &dv, train_base);
        dx
    }
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

pub(crate) struct MlpCache {
    fc1: LinearCache,
    fc2: LinearCache,
    pre: Option<Array2<f32>>,
}

impl Mlp {
    fn forward(&self, x: &Arc<Array2<f32>>, mode: &mut Mode) -> (Array2<f32>, MlpCache) {
        let training = mode.rng.is_some() || mode.store_base_inputs;
        let (pre, fc1) = self.fc1.forward(x, mode.store_base_inputs);
        let act = Arc::new(pre.mapv(gelu));
        let (y, fc2) = self.fc2.forward(&act, mode.store_base_inputs);
        (
            y,
            MlpCache {
                fc1,
                fc2,
                pre: training.then_some(pre),
            },
        )
    }

    fn backward(&mut self, cache: &MlpCache, dy: &Array2<f32>, train_base: bool) -> Array2<f32> {
        let dact = self.fc2.backward(&cache.fc2, dy, train_base);
        let pre = cache.pre.as_ref().expect("training forward stored pre-activation");
        let dpre = dact * pre.mapv(gelu_deriv);
        self.fc1.backward(&cache.fc1, &dpre, train_base)
    }

    fn forward_row(&self, x: &Array1<f32>) -> Array1<f32> {
        let pre = self.fc1.forward_row(x);
        self.fc2.forward_row(&pre.mapv(gelu))
    }
}

// ---------------------------------------------------------------------------
// Transformer block
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

pub(crate) struct BlockCache {
    ln1: LnCache,
    attn: AttnCache,
    ln2: LnCache,
    mlp: MlpCache,
}

impl Block {
    fn forward(
        &self,
        x: &Array2<f32>,
        batch: usize,
        seq: usize,
        lengths: &[usize],
        mode: &mut Mode,
    ) -> (Array2<f32>, BlockCache) {
        let (a, ln1) = self.ln1.forward(x);
        let a = Arc::new(a);
        let (attn_out, attn) = self.attn.forward(&a, batch, seq, lengths, mode);
        let x1 = x + &attn_out;
        let (m, ln2) = self.ln2.forward(&x1);
        let m = Arc::new(m);
        let (mlp_out, mlp) = self.mlp.forward(&m, mode);
        let y = &x1 + &mlp_out;
        (y, BlockCache { ln1, attn, ln2, mlp })
    }

    fn backward(
        &mut self,
        cache: &BlockCache,
        dy: &Array2<f32>,
        batch: usize,
        seq: usize,
        train_base: bool,
    ) -> Array2<f32> {
        let dm = self.mlp.backward(&cache.mlp, dy, train_base);
        let mut dx1 = dy.clone();
        dx1 += &self.ln2.backward(&cache.ln2, &dm, train_base);
        let da = self
            .attn
            .backward(&cache.attn, &dx1, batch, seq, train_base);
        let mut dx = dx1;
        dx += &self.ln1.backward(&cache.ln1, &da, train_base);
        dx
    }
}

// ---------------------------------------------------------------------------
// The decoder
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ToyDecoder {
    pub config: ToyDecoderConfig,
    pub(crate) tok_emb: Param2, // [vocab, d]
    pub(crate) pos_emb: Param2, // [ctx, d]
    pub(crate) blocks: Vec<Block>,
    pub(crate) ln_f: LayerNorm,
    pub(crate) head: Linear,
}

pub(crate) struct Tape {
    pub tokens: Array2<u32>,
    pub batch: usize,
    pub seq: usize,
    block_caches: Vec<BlockCache>,
    lnf_cache: LnCache,
    head_cache: LinearCache,
}

impl ToyDecoder {
    pub fn new(config: ToyDecoderConfig, seed: u64) -> Result<Self, LoraError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.model_dim;
        let std = 0.02;
        // Residual-feeding projections get the depth-scaled init.
        let resid_std = std / ((2 * config.n_layers) as f32).sqrt();

        let tok_emb = randn2(&mut rng, config.vocab_size, d, std);
        let pos_emb = randn2(&mut rng, config.context_len, d, std);
        let mut blocks = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            let make_adapted = |rng: &mut ChaCha8Rng, module: TargetModule, out_std: f32| {
                let base = Linear::new(rng, d, d, out_std);
                let adapter = config.target_modules.contains(&module).then(|| {
                    let a = randn2(rng, config.lora.rank, d, 0.02);
                    let b = Param2::new(Array2::zeros((d, config.lora.rank)));
                    AdapterParams {
                        a,
                        b,
                        scaling: (config.lora.alpha / config.lora.rank as f64) as f32,
                        dropout_p: config.lora.dropout_p as f32,
                    }
                });
                AdaptedLinear { base, adapter }
            };
            let attn = Attention {
                q: make_adapted(&mut rng, TargetModule::Q, std),
                k: make_adapted(&mut rng, TargetModule::K, std),
                v: make_adapted(&mut rng, TargetModule::V, std),
                o: make_adapted(&mut rng, TargetModule::O, resid_std),
                n_heads: config.n_heads,
            };
            let mlp = Mlp {
                fc1: Linear::new(&mut rng, d, 4 * d, std),
                fc2: Linear::new(&mut rng, 4 * d, d, resid_std),
            };
            blocks.push(Block {
                ln1: LayerNorm::new(d),
                attn,
                ln2: LayerNorm::new(d),
                mlp,
            });
        }
        Ok(ToyDecoder {
            tok_emb,
            pos_emb,
            blocks,
            ln_f: LayerNorm::new(d),
            head: Linear::new(&mut rng, d, config.vocab_size, std),
            config,
        })
    }

    /// Batched forward over padded token rows. Returns logits `[B·T, V]`
    /// and the tape needed for backward.
    pub(crate) fn forward(
        &self,
        tokens: &Array2<u32>,
        lengths: &[usize],
        mode: &mut Mode,
    ) -> (Array2<f32>, Tape) {
        let (batch, seq) = tokens.dim();
        let d = self.config.model_dim;
        let mut x = Array2::zeros((batch * seq, d));
        for b in 0..batch {
            for t in 0..seq {
                let token = tokens[(b, t)] as usize;
                let mut row = x.row_mut(b * seq + t);
                row.assign(&self.tok_emb.value.row(token));
                row += &self.pos_emb.value.row(t);
            }
        }
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(&x, batch, seq, lengths, mode);
            x = next;
            block_caches.push(cache);
        }
        let (normed, lnf_cache) = self.ln_f.forward(&x);
        let normed = Arc::new(normed);
        let (logits, head_cache) = self.head.forward(&normed, mode.store_base_inputs);
        (
            logits,
            Tape {
                tokens: tokens.clone(),
                batch,
                seq,
                block_caches,
                lnf_cache,
                head_cache,
            },
        )
    }

    /// Backward from dLogits, accumulating into parameter grads.
    /// When `train_base` is false only adapter factors receive gradients.
    pub(crate) fn backward(&mut self, tape: &Tape, dlogits: &Array2<f32>, train_base: bool) {
        let dnormed = self.head.backward(&tape.head_cache, dlogits, train_base);
        let mut dx = self.ln_f.backward(&tape.lnf_cache, &dnormed, train_base);
        for (block, cache) in self.blocks.iter_mut().zip(&tape.block_caches).rev() {
            dx = block.backward(cache, &dx, tape.batch, tape.seq, train_base);
        }
        if train_base {
            for b in 0..tape.batch {
                for t in 0..tape.seq {
                    let token = tape.tokens[(b, t)] as usize;
                    let row = dx.row(b * tape.seq + t);
                    let mut tok_grad = self.tok_emb.grad.row_mut(token);
                    tok_grad += &row;
                    let mut pos_grad = self.pos_emb.grad.row_mut(t);
                    pos_grad += &row;
                }
            }
        }
    }

    /// Visit every parameter tensor with its stable name. Adapter tensors
    /// report `is_adapter`; the name set defines the checkpoint layout.
    pub(crate) fn visit_named_params(&mut self, mut f: impl FnMut(&str, ParamRef<'_>, bool)) {
        f("tok_emb", ParamRef::Two(&mut self.tok_emb), false);
        f("pos_emb", ParamRef::Two(&mut self.pos_emb), false);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            for (ln_name, ln) in [("ln1", &mut block.ln1), ("ln2", &mut block.ln2)] {
                f(&format!("layer{i}.{ln_name}.g"), ParamRef::One(&mut ln.g), false);
                f(&format!("layer{i}.{ln_name}.b"), ParamRef::One(&mut ln.b), false);
            }
            for (proj_name, proj) in [
                ("q", &mut block.attn.q),
                ("k", &mut block.attn.k),
                ("v", &mut block.attn.v),
                ("o", &mut block.attn.o),
            ] {
                let prefix = format!("layer{i}.attn.{proj_name}");
                f(&format!("{prefix}.w"), ParamRef::Two(&mut proj.base.w), false);
                f(&format!("{prefix}.b"), ParamRef::One(&mut proj.base.b), false);
                if let Some(adapter) = &mut proj.adapter {
                    f(&format!("{prefix}.lora_a"), ParamRef::Two(&mut adapter.a), true);
                    f(&format!("{prefix}.lora_b"), ParamRef::Two(&mut adapter.b), true);
                }
            }
            f(&format!("layer{i}.mlp.fc1.w"), ParamRef::Two(&mut block.mlp.fc1.w), false);
            f(&format!("layer{i}.mlp.fc1.b"), ParamRef::One(&mut block.mlp.fc1.b), false);
            f(&format!("layer{i}.mlp.fc2.w"), ParamRef::Two(&mut block.mlp.fc2.w), false);
            f(&format!("layer{i}.mlp.fc2.b"), ParamRef::One(&mut block.mlp.fc2.b), false);
        }
        f("ln_f.g", ParamRef::One(&mut self.ln_f.g), false);
        f("ln_f.b", ParamRef::One(&mut self.ln_f.b), false);
        f("head.w", ParamRef::Two(&mut self.head.w), false);
        f("head.b", ParamRef::One(&mut self.head.b), false);
    }

    /// Visit every parameter tensor. Adapter tensors report `is_adapter`.
    pub(crate) fn visit_params(&mut self, mut f: impl FnMut(ParamRef<'_>, bool)) {
        self.visit_named_params(|_, param, is_adapter| f(param, is_adapter));
    }

    /// Total parameter count (base + adapters).
    pub fn n_params(&self) -> u64 {
        let mut total = 0u64;
        let mut me = self.clone();
        me.visit_params(|p, _| {
            total += match p {
                ParamRef::One(p) => p.n_params() as u64,
                ParamRef::Two(p) => p.n_params() as u64,
            };
        });
        total
    }

    /// Adapter parameter count by enumeration.
    pub fn n_adapter_params(&self) -> u64 {
        let mut total = 0u64;
        let mut me = self.clone();
        me.visit_params(|p, is_adapter| {
            if is_adapter {
                total += match p {
                    ParamRef::One(p) => p.n_params() as u64,
                    ParamRef::Two(p) => p.n_params() as u64,
                };
            }
        });
        total
    }

    /// Formula-based accounting for this configuration.
    pub fn count_trainable(&self) -> crate::ParamCount {
        crate::count_trainable(
            self.config.n_layers,
            self.config.target_modules.len(),
            self.config.model_dim,
            self.config.model_dim,
            self.config.lora.rank,
            self.n_params(),
        )
    }

    /// Logits for the last position of a token prefix (single sequence,
    /// eval mode). Generation proper goes through the KV cache instead.
    pub fn logits_for(&self, tokens: &[u32]) -> Array1<f32> {
        let arr = Array2::from_shape_vec((1, tokens.len()), tokens.to_vec()).expect("shape");
        let (logits, _) = self.forward(&arr, &[tokens.len()], &mut Mode::eval());
        logits.row(tokens.len() - 1).to_owned()
    }
}

pub(crate) enum ParamRef<'a> {
    One(&'a mut Param1),
    Two(&'a mut Param2),
}

// ---------------------------------------------------------------------------
// Incremental decoding with per-layer KV caches
// ---------------------------------------------------------------------------

pub(crate) struct DecodeState {
    k: Vec<Array2<f32>>,
    v: Vec<Array2<f32>>,
    len: usize,
}

impl DecodeState {
    pub fn new(model: &ToyDecoder) -> Self {
        let d = model.config.model_dim;
        let cap = model.config.context_len;
        DecodeState {
            k: vec![Array2::zeros((cap, d)); model.blocks.len()],
            v: vec![Array2::zeros((cap, d)); model.blocks.len()],
            len: 0,
        }
    }

    /// Feed one token at the next position; returns logits for it.
    pub fn step(&mut self, model: &ToyDecoder, token: u32) -> Result<Array1<f32>, LoraError> {
        let pos = self.len;
        if pos >= model.config.context_len {
            return Err(LoraError::PromptTooLong {
                got: pos + 1,
                context_len: model.config.context_len,
            });
        }
        let d = model.config.model_dim;
        let n_heads = model.config.n_heads;
        let dh = d / n_heads;
        let inv_sqrt = 1.0 / (dh as f32).sqrt();

        let mut x = model.tok_emb.value.row(token as usize).to_owned();
        x += &model.pos_emb.value.row(pos);

        for (layer, block) in model.blocks.iter().enumerate() {
            let a = block.ln1.forward_row(&x);
            let q = block.attn.q.forward_row(&a);
            let k_new = block.attn.k.forward_row(&a);
            let v_new = block.attn.v.forward_row(&a);
            self.k[layer].row_mut(pos).assign(&k_new);
            self.v[layer].row_mut(pos).assign(&v_new);

            let mut ctx = Array1::zeros(d);
            for h in 0..n_heads {
                let span = h * dh..(h + 1) * dh;
                let qh = q.slice(s![span.clone()]);
                let keys = self.k[layer].slice(s![..=pos, span.clone()]);
                let vals = self.v[layer].slice(s![..=pos, span.clone()]);
                let mut scores = keys.dot(&qh);
                scores *= inv_sqrt;
                let max = scores.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                scores.mapv_inplace(|s| (s - max).exp());
                let sum = scores.sum();
                scores.mapv_inplace(|s| s / sum);
                let ctx_h = vals.t().dot(&scores);
                ctx.slice_mut(s![span]).assign(&ctx_h);
            }
            let attn_out = block.attn.o.forward_row(&ctx);
            x += &attn_out;
            let m = block.ln2.forward_row(&x);
            x += &block.mlp.forward_row(&m);
        }
        let normed = model.ln_f.forward_row(&x);
        self.len += 1;
        Ok(model.head.forward_row(&normed))
    }
}
