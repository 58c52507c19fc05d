//! The uncertainty-aware Mobile-Former block.
//!
//! Each block couples a convolutional Mobile sub-block with a token-based
//! Former sub-block through a bidirectional bridge. The bridge predicts a
//! Gaussian (mu, sigma) over the message crossing between branches, samples
//! it with the reparameterization trick in train mode (the sample equals mu
//! in eval mode), and fuses it into the receiver with multi-head
//! cross-attention. The receiver always supplies the queries; the sender
//! supplies keys and values.

use std::cell::Cell;

use crate::error::{NumericError, TensorError};
use crate::nn::{param, Conv3d, Dense, Init, LayerNorm, Parameter};
use crate::rng::SeedRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Forward-pass mode. Eval is deterministic: no noise is drawn anywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// The Former branch's global tokens, shaped (N_tok, d).
#[derive(Debug, Clone)]
pub struct TokenSet<S: Scalar> {
    pub tokens: Tensor<S>,
}

impl<S: Scalar> TokenSet<S> {
    pub fn new(tokens: Tensor<S>) -> Self {
        assert_eq!(tokens.rank(), 2, "tokens must be (N_tok, d)");
        assert!(tokens.shape()[0] >= 1, "need at least one token");
        TokenSet { tokens }
    }

    pub fn count(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.tokens.shape()[1]
    }
}

/// A Gaussian message crossing the bridge: predicted mean and scale plus
/// the (re)sampled value actually transmitted.
#[derive(Debug, Clone)]
pub struct GaussianMessage<S: Scalar> {
    pub mu: Tensor<S>,
    pub sigma: Tensor<S>,
    pub sample: Tensor<S>,
}

/// Per-block hyperparameters.
#[derive(Debug, Clone)]
pub struct BlockConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub token_dim: usize,
    pub num_tokens: usize,
    pub num_heads: usize,
    pub expansion: usize,
    /// Spatial stride of the first depthwise conv (1 or 2).
    pub stride: usize,
    pub enable_bridge: bool,
    pub enable_cross_attention: bool,
    pub enable_dy_relu: bool,
    pub enable_mobile: bool,
    pub enable_former: bool,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        if self.out_channels < 1 {
            return Err(TensorError::Config {
                op: "block",
                msg: "out_channels must be >= 1".into(),
            });
        }
        if self.token_dim % self.num_heads != 0 {
            return Err(TensorError::Config {
                op: "block",
                msg: format!(
                    "token_dim {} not divisible by num_heads {}",
                    self.token_dim, self.num_heads
                ),
            });
        }
        if !self.enable_mobile && !self.enable_former {
            return Err(TensorError::Config {
                op: "block",
                msg: "at least one of mobile/former must be enabled".into(),
            });
        }
        Ok(())
    }

    /// Cross-attention needs tokens, so it requires the Former branch.
    pub fn cross_attention_active(&self) -> bool {
        self.enable_cross_attention && self.enable_former
    }

    /// The bridge only exists to feed cross-attention.
    pub fn bridge_active(&self) -> bool {
        self.enable_bridge && self.cross_attention_active()
    }

    /// DY-ReLU coefficients are predicted from tokens, so the dynamic form
    /// requires both branches; otherwise the activation is a plain ReLU.
    pub fn dy_relu_active(&self) -> bool {
        self.enable_dy_relu && self.enable_mobile && self.enable_former
    }
}

// ── Reparameterized sampling ──────────────────────────────────────────

/// Sample `mu + eps * sigma` with elementwise `eps ~ N(0, I)` in train
/// mode; return `mu` unchanged (bitwise) in eval mode. Gradients flow
/// through `mu` and `sigma` but never through `eps`.
pub fn reparameterize<S: Scalar>(
    mu: &Tensor<S>,
    sigma: &Tensor<S>,
    rng: &mut SeedRng,
    mode: Mode,
) -> Result<Tensor<S>, TensorError> {
    match mode {
        Mode::Eval => Ok(mu.clone()),
        Mode::Train => {
            let eps = Tensor::gaussian(mu.shape().to_vec(), rng);
            reparameterize_with(mu, sigma, &eps)
        }
    }
}

/// Deterministic core of the reparameterization trick with a caller-chosen
/// noise tensor.
pub fn reparameterize_with<S: Scalar>(
    mu: &Tensor<S>,
    sigma: &Tensor<S>,
    eps: &Tensor<S>,
) -> Result<Tensor<S>, TensorError> {
    mu.add(&eps.mul(sigma)?)
}

// ── Uncertainty-aware bridge ──────────────────────────────────────────

/// Predicts the Gaussian over the inter-branch message: one dense layer
/// each for mu and for the pre-softplus scale. sigma is strictly positive
/// by construction (softplus + 1e-6 floor).
pub struct UaBridge<S: Scalar> {
    pub path: String,
    pub mu_fc: Dense<S>,
    pub sigma_fc: Dense<S>,
}

impl<S: Scalar> UaBridge<S> {
    pub fn new(path: &str, dim: usize, rng: &mut SeedRng) -> Self {
        let mu_fc = Dense::new(
            &format!("{path}.mu"),
            dim,
            dim,
            Init::XavierNormal { fan_in: dim },
            rng,
        );
        let sigma_fc = Dense::new(
            &format!("{path}.sigma"),
            dim,
            dim,
            Init::XavierNormal { fan_in: dim },
            rng,
        );
        // Start with a small message scale: softplus(-2) ~ 0.13.
        let n = sigma_fc.bias.tensor.numel();
        sigma_fc
            .bias
            .tensor
            .set_data(&vec![S::from_f64(-2.0); n])
            .expect("bias shape");
        UaBridge {
            path: path.to_string(),
            mu_fc,
            sigma_fc,
        }
    }

    /// `features` is (P, C): flattened positions by channels (or tokens by
    /// token dim for the reverse direction).
    pub fn forward(
        &self,
        features: &Tensor<S>,
        rng: &mut SeedRng,
        mode: Mode,
    ) -> Result<GaussianMessage<S>, TensorError> {
        let mu = self.mu_fc.forward(features)?;
        let sigma = self
            .sigma_fc
            .forward(features)?
            .softplus()
            .add_scalar(S::from_f64(1e-6));
        if !mu.all_finite() {
            return Err(NumericError {
                path: format!("{}.mu", self.path),
                detail: "bridge mean is not finite".into(),
            }
            .into());
        }
        if !sigma.all_finite() {
            return Err(NumericError {
                path: format!("{}.sigma", self.path),
                detail: "bridge scale is not finite".into(),
            }
            .into());
        }
        let sample = reparameterize(&mu, &sigma, rng, mode)?;
        Ok(GaussianMessage { mu, sigma, sample })
    }

    pub fn collect(&self, out: &mut Vec<Parameter<S>>) {
        self.mu_fc.collect(out);
        self.sigma_fc.collect(out);
    }
}

// ── Cross-attention ───────────────────────────────────────────────────

thread_local! {
    static ATTN_WEIGHT_CHECK: Cell<bool> = const { Cell::new(false) };
}

/// When enabled, every attention call asserts that each query's weights
/// sum to 1 within 1e-6 (summed in f64). Meant for property suites.
pub fn set_attention_weight_check(enabled: bool) {
    ATTN_WEIGHT_CHECK.with(|c| c.set(enabled));
}

fn maybe_check_weights<S: Scalar>(weights: &Tensor<S>) {
    if !ATTN_WEIGHT_CHECK.with(|c| c.get()) {
        return;
    }
    let shape = weights.shape();
    let row = shape[shape.len() - 1];
    let data = weights.data();
    for (i, chunk) in data.chunks(row).enumerate() {
        let sum: f64 = chunk.iter().map(|v| v.as_f64()).sum();
        assert!(
            (sum - 1.0).abs() < 1e-6,
            "attention weights row {i} sums to {sum}, expected 1"
        );
    }
}

/// Scaled dot-product attention weights softmax(Q K^T / sqrt(d)) for
/// (A, d) queries and (B, d) keys. Rows sum to 1.
pub fn scaled_dot_weights<S: Scalar>(
    q: &Tensor<S>,
    k: &Tensor<S>,
) -> Result<Tensor<S>, TensorError> {
    let d = q.shape()[q.rank() - 1];
    let scale = S::from_f64(1.0 / (d as f64).sqrt());
    let scores = q.matmul(&k.transpose()?)?.mul_scalar(scale);
    let weights = scores.softmax(scores.rank() - 1)?;
    maybe_check_weights(&weights);
    Ok(weights)
}

/// Multi-head attention with learned Q/K/V/output projections. Used as
/// cross-attention between branches (queries from the receiver, keys and
/// values from the sender) and as self-attention inside the Former.
pub struct MultiHeadAttention<S: Scalar> {
    pub q_proj: Dense<S>,
    pub k_proj: Dense<S>,
    pub v_proj: Dense<S>,
    pub out_proj: Dense<S>,
    pub heads: usize,
    pub dim: usize,
}

impl<S: Scalar> MultiHeadAttention<S> {
    pub fn new(path: &str, dim: usize, heads: usize, rng: &mut SeedRng) -> Self {
        assert!(heads >= 1 && dim % heads == 0, "dim divisible by heads");
        let init = Init::XavierNormal { fan_in: dim };
        MultiHeadAttention {
            q_proj: Dense::new(&format!("{path}.q"), dim, dim, init, rng),
            k_proj: Dense::new(&format!("{path}.k"), dim, dim, init, rng),
            v_proj: Dense::new(&format!("{path}.v"), dim, dim, init, rng),
            out_proj: Dense::new(&format!("{path}.out"), dim, dim, init, rng),
            heads,
            dim,
        }
    }

    /// `q_src` (A, d), `kv_src` (B, d) -> (A, d).
    pub fn forward(
        &self,
        q_src: &Tensor<S>,
        kv_src: &Tensor<S>,
    ) -> Result<Tensor<S>, TensorError> {
        if q_src.rank() != 2
            || kv_src.rank() != 2
            || q_src.shape()[1] != self.dim
            || kv_src.shape()[1] != self.dim
        {
            return Err(TensorError::ShapeMismatch {
                op: "attention",
                lhs: q_src.shape().to_vec(),
                rhs: kv_src.shape().to_vec(),
            });
        }
        let a = q_src.shape()[0];
        let b = kv_src.shape()[0];
        let dh = self.dim / self.heads;
        // (A, d) -> (heads, A, d_h)
        let split = |x: &Tensor<S>, n: usize| -> Result<Tensor<S>, TensorError> {
            x.reshape(vec![n, self.heads, dh])?.permute(&[1, 0, 2])
        };
        let q = split(&self.q_proj.forward(q_src)?, a)?;
        let k = split(&self.k_proj.forward(kv_src)?, b)?;
        let v = split(&self.v_proj.forward(kv_src)?, b)?;
        let scale = S::from_f64(1.0 / (dh as f64).sqrt());
        let scores = q.matmul(&k.transpose()?)?.mul_scalar(scale);
        let weights = scores.softmax(2)?;
        maybe_check_weights(&weights);
        let ctx = weights.matmul(&v)?; // (heads, A, d_h)
        let merged = ctx.permute(&[1, 0, 2])?.reshape(vec![a, self.dim])?;
        self.out_proj.forward(&merged)
    }

    pub fn collect(&self, out: &mut Vec<Parameter<S>>) {
        self.q_proj.collect(out);
        self.k_proj.collect(out);
        self.v_proj.collect(out);
        self.out_proj.collect(out);
    }
}

// ── Mobile -> Former ──────────────────────────────────────────────────

/// Sends local features to the tokens: bridge-sample the message (or pass
/// raw features when the bridge is disabled), project C -> d, then fuse by
/// cross-attention with tokens as queries. Residual on the tokens.
pub struct MobileToFormer<S: Scalar> {
    pub bridge: Option<UaBridge<S>>,
    pub proj: Dense<S>,
    pub attn: MultiHeadAttention<S>,
}

impl<S: Scalar> MobileToFormer<S> {
    pub fn new(path: &str, channels: usize, cfg: &BlockConfig, rng: &mut SeedRng) -> Self {
        let bridge = cfg
            .bridge_active()
            .then(|| UaBridge::new(&format!("{path}.bridge"), channels, rng));
        let proj = Dense::new(
            &format!("{path}.proj"),
            channels,
            cfg.token_dim,
            Init::XavierNormal { fan_in: channels },
            rng,
        );
        let attn = MultiHeadAttention::new(&format!("{path}.attn"), cfg.token_dim, cfg.num_heads, rng);
        MobileToFormer { bridge, proj, attn }
    }

    /// `f_emb` (P, C), tokens (N, d) -> tokens (N, d).
    pub fn forward(
        &self,
        f_emb: &Tensor<S>,
        z: &TokenSet<S>,
        rng: &mut SeedRng,
        mode: Mode,
    ) -> Result<TokenSet<S>, TensorError> {
        let msg_src = match &self.bridge {
            Some(bridge) => bridge.forward(f_emb, rng, mode)?.sample,
            None => f_emb.clone(),
        };
        let msg = self.proj.forward(&msg_src)?;
        let fused = z.tokens.add(&self.attn.forward(&z.tokens, &msg)?)?;
        Ok(TokenSet::new(fused))
    }

    pub fn collect(&self, out: &mut Vec<Parameter<S>>) {
        if let Some(b) = &self.bridge {
            b.collect(out);
        }
        self.proj.collect(out);
        self.attn.collect(out);
    }
}

// ── Former -> Mobile ──────────────────────────────────────────────────

/// Sends token information back to local features: a second, independent
/// bridge head over the tokens, cross-attention with feature positions as
/// queries, then a projection back to channel space. Residual on features.
pub struct FormerToMobile<S: Scalar> {
    pub bridge: Option<UaBridge<S>>,
    pub q_proj: Dense<S>,
    pub attn: MultiHeadAttention<S>,
    pub back_proj: Dense<S>,
}

impl<S: Scalar> FormerToMobile<S> {
    pub fn new(path: &str, channels: usize, cfg: &BlockConfig, rng: &mut SeedRng) -> Self {
        let bridge = cfg
            .bridge_active()
            .then(|| UaBridge::new(&format!("{path}.bridge"), cfg.token_dim, rng));
        let q_proj = Dense::new(
            &format!("{path}.q_proj"),
            channels,
            cfg.token_dim,
            Init::XavierNormal { fan_in: channels },
            rng,
        );
        let attn = MultiHeadAttention::new(&format!("{path}.attn"), cfg.token_dim, cfg.num_heads, rng);
        let back_proj = Dense::new(
            &format!("{path}.back_proj"),
            cfg.token_dim,
            channels,
            Init::XavierNormal {
                fan_in: cfg.token_dim,
            },
            rng,
        );
        FormerToMobile {
            bridge,
            q_proj,
            attn,
            back_proj,
        }
    }

    /// `x_local` (P, C), tokens (N, d) -> (P, C).
    pub fn forward(
        &self,
        x_local: &Tensor<S>,
        z: &TokenSet<S>,
        rng: &mut SeedRng,
        mode: Mode,
    ) -> Result<Tensor<S>, TensorError> {
        let msg = match &self.bridge {
            Some(bridge) => bridge.forward(&z.tokens, rng, mode)?.sample,
            None => z.tokens.clone(),
        };
        let queries = self.q_proj.forward(x_local)?;
        let fused = self.attn.forward(&queries, &msg)?;
        x_local.add(&self.back_proj.forward(&fused)?)
    }

    pub fn collect(&self, out: &mut Vec<Parameter<S>>) {
        if let Some(b) = &self.bridge {
            b.collect(out);
        }
        self.q_proj.collect(out);
        self.attn.collect(out);
        self.back_proj.collect(out);
    }
}

// ── Former sublayer ───────────────────────────────────────────────────

/// Pre-norm transformer layer over the tokens:
/// z' = z + MHSA(LN(z)); z'' = z' + FFN(LN(z')).
pub struct FormerSublayer<S: Scalar> {
    pub ln1: LayerNorm<S>,
    pub mhsa: MultiHeadAttention<S>,
    pub ln2: LayerNorm<S>,
    pub ffn_in: Dense<S>,
    pub ffn_out: Dense<S>,
}

impl<S: Scalar> FormerSublayer<S> {
    pub fn new(path: &str, cfg: &BlockConfig, rng: &mut SeedRng) -> Self {
        let d = cfg.token_dim;
        let hidden = cfg.expansion * d;
        FormerSublayer {
            ln1: LayerNorm::new(&format!("{path}.ln1"), d),
            mhsa: MultiHeadAttention::new(&format!("{path}.mhsa"), d, cfg.num_heads, rng),
            ln2: LayerNorm::new(&format!("{path}.ln2"), d),
            ffn_in: Dense::new(
                &format!("{path}.ffn_in"),
                d,
                hidden,
                Init::XavierNormal { fan_in: d },
                rng,
            ),
            ffn_out: Dense::new(
                &format!("{path}.ffn_out"),
                hidden,
                d,
                Init::XavierNormal { fan_in: hidden },
                rng,
            ),
        }
    }

    pub fn forward(&self, z: &TokenSet<S>) -> Result<TokenSet<S>, TensorError> {
        let normed = self.ln1.forward(&z.tokens)?;
        let z1 = z.tokens.add(&self.mhsa.forward(&normed, &normed)?)?;
        let ff = self.ffn_out.forward(&self.ffn_in.forward(&self.ln2.forward(&z1)?)?.gelu())?;
        Ok(TokenSet::new(z1.add(&ff)?))
    }

    pub fn collect(&self, out: &mut Vec<Parameter<S>>) {
        self.ln1.collect(out);
        self.mhsa.collect(out);
        self.ln2.collect(out);
        self.ffn_in.collect(out);
        self.ffn_out.collect(out);
    }
}

// ── Dynamic ReLU ──────────────────────────────────────────────────────

/// Activation whose two affine branches have per-channel coefficients
/// (a1, b1, a2, b2) predicted by a small MLP on the token mean:
/// y = max(a1*x + b1, a2*x + b2). The final MLP layer is zero-initialized
/// and the coefficients are offset by (1, 0, 0, 0), so the layer is an
/// exact ReLU at initialization.
pub struct DyRelu<S: Scalar> {
    pub fc1: Dense<S>,
    pub fc2: Dense<S>,
    pub channels: usize,
    base: Tensor<S>,
}

impl<S: Scalar> DyRelu<S> {
    pub fn new(path: &str, channels: usize, token_dim: usize, rng: &mut SeedRng) -> Self {
        let hidden = (token_dim / 2).max(4);
        let fc1 = Dense::new(
            &format!("{path}.fc1"),
            token_dim,
            hidden,
            Init::XavierNormal { fan_in: token_dim },
            rng,
        );
        let fc2 = Dense::new(&format!("{path}.fc2"), hidden, 4 * channels, Init::Zeros, rng);
        let mut base = vec![S::zero(); 4 * channels];
        for v in base.iter_mut().take(channels) {
            *v = S::one();
        }
        DyRelu {
            fc1,
            fc2,
            channels,
            base: Tensor::from_vec(vec![1, 4 * channels], base).expect("shape matches"),
        }
    }

    /// `x` (batch, C, T, H, W), tokens (N, d).
    pub fn forward(&self, x: &Tensor<S>, z: &TokenSet<S>) -> Result<Tensor<S>, TensorError> {
        let c = self.channels;
        // Order-invariant conditioning: mean over tokens.
        let ctx = z.tokens.mean_axis(0, false)?.reshape(vec![1, z.dim()])?;
        let hidden = self.fc1.forward(&ctx)?.relu();
        let coef = self.fc2.forward(&hidden)?.add(&self.base)?;
        let per_channel = |i: usize| -> Result<Tensor<S>, TensorError> {
            coef.narrow(1, i * c, c)?.reshape(vec![c, 1, 1, 1])
        };
        let a1 = per_channel(0)?;
        let b1 = per_channel(1)?;
        let a2 = per_channel(2)?;
        let b2 = per_channel(3)?;
        let branch1 = x.mul(&a1)?.add(&b1)?;
        let branch2 = x.mul(&a2)?.add(&b2)?;
        branch1.maximum(&branch2)
    }

    pub fn collect(&self, out: &mut Vec<Parameter<S>>) {
        self.fc1.collect(out);
        self.fc2.collect(out);
    }
}

// ── Mobile sublayer ───────────────────────────────────────────────────

enum Activation<S: Scalar> {
    Dynamic(DyRelu<S>),
    Plain,
}

impl<S: Scalar> Activation<S> {
    fn forward(
        &self,
        x: &Tensor<S>,
        z: Option<&TokenSet<S>>,
    ) -> Result<Tensor<S>, TensorError> {
        match self {
            Activation::Dynamic(dy) => {
                let z = z.expect("dynamic relu requires tokens");
                dy.forward(x, z)
            }
            Activation::Plain => Ok(x.relu()),
        }
    }
}

/// Inverted-bottleneck convolution stack:
/// pointwise expand -> act -> depthwise 3x3x3 (optional stride) ->
/// depthwise 3x3x3 -> act -> pointwise reduce -> pointwise refine,
/// with a residual connection when shape is preserved.
pub struct MobileSublayer<S: Scalar> {
    pub pw_in: Conv3d<S>,
    act1: Activation<S>,
    pub dw1: Conv3d<S>,
    pub dw2: Conv3d<S>,
    act2: Activation<S>,
    pub pw_out1: Conv3d<S>,
    pub pw_out2: Conv3d<S>,
    residual: bool,
}

impl<S: Scalar> MobileSublayer<S> {
    pub fn new(path: &str, cfg: &BlockConfig, rng: &mut SeedRng) -> Self {
        let cin = cfg.in_channels;
        let cout = cfg.out_channels;
        let hidden = cfg.expansion * cin;
        let mk_act = |name: &str, rng: &mut SeedRng| {
            if cfg.dy_relu_active() {
                Activation::Dynamic(DyRelu::new(
                    &format!("{path}.{name}"),
                    hidden,
                    cfg.token_dim,
                    rng,
                ))
            } else {
                Activation::Plain
            }
        };
        let pw_in = Conv3d::new(&format!("{path}.pw_in"), cin, hidden, 1, (1, 1, 1), 1, true, rng);
        let act1 = mk_act("dy1", rng);
        let dw1 = Conv3d::new(
            &format!("{path}.dw1"),
            hidden,
            hidden,
            3,
            (1, cfg.stride, cfg.stride),
            hidden,
            false,
            rng,
        );
        let dw2 = Conv3d::new(&format!("{path}.dw2"), hidden, hidden, 3, (1, 1, 1), hidden, false, rng);
        let act2 = mk_act("dy2", rng);
        let pw_out1 = Conv3d::new(&format!("{path}.pw_out1"), hidden, cout, 1, (1, 1, 1), 1, true, rng);
        let pw_out2 = Conv3d::new(&format!("{path}.pw_out2"), cout, cout, 1, (1, 1, 1), 1, true, rng);
        MobileSublayer {
            pw_in,
            act1,
            dw1,
            dw2,
            act2,
            pw_out1,
            pw_out2,
            residual: cin == cout && cfg.stride == 1,
        }
    }

    /// `x` (batch, C_in, T, H, W) -> (batch, C_out, T, H', W').
    pub fn forward(
        &self,
        x: &Tensor<S>,
        z: Option<&TokenSet<S>>,
    ) -> Result<Tensor<S>, TensorError> {
        let mut h = self.pw_in.forward(x)?;
        h = self.act1.forward(&h, z)?;
        h = self.dw1.forward(&h)?;
        h = self.dw2.forward(&h)?;
        h = self.act2.forward(&h, z)?;
        h = self.pw_out1.forward(&h)?;
        h = self.pw_out2.forward(&h)?;
        if self.residual {
            h = h.add(x)?;
        }
        Ok(h)
    }

    pub fn collect(&self, out: &mut Vec<Parameter<S>>) {
        self.pw_in.collect(out);
        if let Activation::Dynamic(dy) = &self.act1 {
            dy.collect(out);
        }
        self.dw1.collect(out);
        self.dw2.collect(out);
        if let Activation::Dynamic(dy) = &self.act2 {
            dy.collect(out);
        }
        self.pw_out1.collect(out);
        self.pw_out2.collect(out);
    }
}

// ── Full block ────────────────────────────────────────────────────────

/// One uncertainty-aware Mobile-Former block. Components are instantiated
/// only when their config flags enable them, so the parameter inventory
/// reflects the active architecture.
pub struct Block<S: Scalar> {
    pub cfg: BlockConfig,
    pub m2f: Option<MobileToFormer<S>>,
    pub former: Option<FormerSublayer<S>>,
    pub mobile: Option<MobileSublayer<S>>,
    pub f2m: Option<FormerToMobile<S>>,
}

impl<S: Scalar> Block<S> {
    pub fn new(path: &str, cfg: BlockConfig, rng: &mut SeedRng) -> Result<Self, TensorError> {
        cfg.validate()?;
        let ca = cfg.cross_attention_active();
        let m2f = ca.then(|| MobileToFormer::new(&format!("{path}.m2f"), cfg.in_channels, &cfg, rng));
        let former = cfg
            .enable_former
            .then(|| FormerSublayer::new(&format!("{path}.former"), &cfg, rng));
        let mobile = cfg
            .enable_mobile
            .then(|| MobileSublayer::new(&format!("{path}.mobile"), &cfg, rng));
        let f2m = ca.then(|| FormerToMobile::new(&format!("{path}.f2m"), cfg.out_channels, &cfg, rng));
        Ok(Block {
            cfg,
            m2f,
            former,
            mobile,
            f2m,
        })
    }

    /// Flatten (1, C, T, H, W) -> (P, C) with P = T*H*W.
    fn flatten_positions(x: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        let sh = x.shape().to_vec();
        let (c, p) = (sh[1], sh[2] * sh[3] * sh[4]);
        x.reshape(vec![c, p])?.permute(&[1, 0])
    }

    /// Inverse of [`Self::flatten_positions`] for a known 5-D shape.
    fn unflatten_positions(x: &Tensor<S>, shape: &[usize]) -> Result<Tensor<S>, TensorError> {
        x.permute(&[1, 0])?.reshape(shape.to_vec())
    }

    /// Runs the four stages in order: tokens absorb the input features,
    /// the Former refines tokens, the Mobile stack refines features
    /// (conditioned on the refined tokens), and the tokens' message is
    /// written back into the features.
    pub fn forward(
        &self,
        x: &Tensor<S>,
        z: Option<&TokenSet<S>>,
        rng: &mut SeedRng,
        mode: Mode,
    ) -> Result<(Tensor<S>, Option<TokenSet<S>>), TensorError> {
        let z1 = match (&self.m2f, z) {
            (Some(m2f), Some(z)) => Some(m2f.forward(&Self::flatten_positions(x)?, z, rng, mode)?),
            _ => z.cloned(),
        };
        let z2 = match (&self.former, &z1) {
            (Some(former), Some(z1)) => Some(former.forward(z1)?),
            _ => z1,
        };
        let x1 = match &self.mobile {
            Some(mobile) => mobile.forward(x, z2.as_ref())?,
            None => x.clone(),
        };
        let x2 = match (&self.f2m, &z2) {
            (Some(f2m), Some(z2)) => {
                let shape = x1.shape().to_vec();
                let flat = Self::flatten_positions(&x1)?;
                let fused = f2m.forward(&flat, z2, rng, mode)?;
                Self::unflatten_positions(&fused, &shape)?
            }
            _ => x1,
        };
        Ok((x2, z2))
    }

    pub fn collect(&self, out: &mut Vec<Parameter<S>>) {
        if let Some(m) = &self.m2f {
            m.collect(out);
        }
        if let Some(f) = &self.former {
            f.collect(out);
        }
        if let Some(m) = &self.mobile {
            m.collect(out);
        }
        if let Some(f) = &self.f2m {
            f.collect(out);
        }
    }
}

/// Learned initial tokens, shared by all samples: N(0, 0.02^2).
pub fn init_tokens<S: Scalar>(
    num_tokens: usize,
    token_dim: usize,
    rng: &mut SeedRng,
) -> Parameter<S> {
    param(
        "tokens",
        vec![num_tokens, token_dim],
        Init::Normal(0.02),
        false,
        rng,
    )
}
