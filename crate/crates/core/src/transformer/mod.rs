//! Encoder-decoder forecaster with ProbSparse self-attention and one-shot
//! multi-horizon decoding.
//!
//! The decoder receives the last `label_len` known values concatenated with
//! `pred_len` zero placeholders plus their time features, and the whole
//! horizon comes out of a single forward pass. Training uses hand-written
//! reverse-mode gradients through every operation; the ProbSparse selection
//! indices are treated as constants within a step (subgradient convention).

pub mod attention;
pub mod embed;
pub mod io;
pub mod layers;
pub mod tensor;
pub mod train;

pub use attention::{
    full_attention, prob_sparse_attention, prob_sparse_attention_counted, sparsity_score,
    sparsity_score_sampled, top_u_count, AttentionKind, MultiHeadAttention,
};
pub use embed::{time_features, TIME_FEATURES};
pub use io::{load_model, load_model_bytes, save_model};
pub use layers::{GradSet, ParamSet};
pub use tensor::Tensor;
pub use train::{train, TrainReport, TrainedModel};

use std::sync::atomic::{AtomicU64, Ordering};

use chrono::NaiveDateTime;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::FlatConfig;
use crate::error::{Error, Result};

use attention::MhaCache;
use layers::{
    Dropout, DropoutCache, FeedForward, FeedForwardCache, LayerNorm, LayerNormCache, Linear,
    LinearCache,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub d_ff: usize,
    /// c in u = ceil(c ln L_Q).
    pub sampling_factor_c: f64,
    pub seq_len: usize,
    pub label_len: usize,
    pub pred_len: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Optional cap on optimizer steps per epoch.
    pub max_batches_per_epoch: Option<usize>,
    /// Assert all intermediate tensors finite (training guard).
    pub check_finite: bool,
}

impl TransformerConfig {
    pub fn new(seq_len: usize, pred_len: usize) -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            enc_layers: 2,
            dec_layers: 1,
            d_ff: 128,
            sampling_factor_c: 5.0,
            seq_len,
            label_len: (seq_len / 2).max(1),
            pred_len,
            dropout: 0.05,
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 10,
            patience: 3,
            seed: 0,
            max_batches_per_epoch: None,
            check_finite: true,
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn dec_len(&self) -> usize {
        self.label_len + self.pred_len
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.label_len > self.seq_len {
            return Err(Error::InvalidArgument(format!(
                "label_len {} exceeds seq_len {}",
                self.label_len, self.seq_len
            )));
        }
        for (name, v) in [
            ("seq_len", self.seq_len),
            ("label_len", self.label_len),
            ("pred_len", self.pred_len),
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("d_ff", self.d_ff),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Applies overrides from a flat key-value config file.
    pub fn apply_flat(&mut self, cfg: &FlatConfig) -> Result<()> {
        if let Some(v) = cfg.get_usize("d_model")? {
            self.d_model = v;
        }
        if let Some(v) = cfg.get_usize("n_heads")? {
            self.n_heads = v;
        }
        if let Some(v) = cfg.get_usize("enc_layers")? {
            self.enc_layers = v;
        }
        if let Some(v) = cfg.get_usize("dec_layers")? {
            self.dec_layers = v;
        }
        if let Some(v) = cfg.get_usize("d_ff")? {
            self.d_ff = v;
        }
        if let Some(v) = cfg.get_f64("sampling_factor_c")? {
            self.sampling_factor_c = v;
        }
        if let Some(v) = cfg.get_usize("label_len")? {
            self.label_len = v;
        }
        if let Some(v) = cfg.get_f64("dropout")? {
            self.dropout = v;
        }
        if let Some(v) = cfg.get_f64("learning_rate")? {
            self.learning_rate = v;
        }
        if let Some(v) = cfg.get_usize("batch_size")? {
            self.batch_size = v;
        }
        if let Some(v) = cfg.get_usize("epochs")? {
            self.epochs = v;
        }
        if let Some(v) = cfg.get_usize("patience")? {
            self.patience = v;
        }
        if let Some(v) = cfg.get_u64("train_seed")? {
            self.seed = v;
        }
        if let Some(v) = cfg.get_usize("max_batches_per_epoch")? {
            self.max_batches_per_epoch = Some(v);
        }
        self.validate()
    }
}

struct EncoderLayer {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    ff: FeedForward,
    norm2: LayerNorm,
}

struct EncoderLayerCache {
    attn: MhaCache,
    drop1: DropoutCache,
    norm1: LayerNormCache,
    ff: FeedForwardCache,
    drop2: DropoutCache,
    norm2: LayerNormCache,
}

struct DecoderLayer {
    self_attn: MultiHeadAttention,
    norm1: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm2: LayerNorm,
    ff: FeedForward,
    norm3: LayerNorm,
}

struct DecoderLayerCache {
    self_attn: MhaCache,
    drop1: DropoutCache,
    norm1: LayerNormCache,
    cross_attn: MhaCache,
    drop2: DropoutCache,
    norm2: LayerNormCache,
    ff: FeedForwardCache,
    drop3: DropoutCache,
    norm3: LayerNormCache,
}

/// Activation cache of one forward pass; everything backward needs.
pub struct ForwardCache {
    emb_enc_value: LinearCache,
    emb_enc_time: LinearCache,
    emb_enc_drop: DropoutCache,
    emb_dec_value: LinearCache,
    emb_dec_time: LinearCache,
    emb_dec_drop: DropoutCache,
    enc_layers: Vec<EncoderLayerCache>,
    dec_layers: Vec<DecoderLayerCache>,
    head: LinearCache,
}

/// The forecaster. Parameter construction order is fixed, so parameter ids
/// and names are deterministic for a given config and seed.
pub struct Informer {
    pub config: TransformerConfig,
    pub params: ParamSet,
    value_emb_enc: Linear,
    time_emb_enc: Linear,
    value_emb_dec: Linear,
    time_emb_dec: Linear,
    enc: Vec<EncoderLayer>,
    dec: Vec<DecoderLayer>,
    head: Linear,
    forward_calls: AtomicU64,
}

impl Informer {
    pub fn new(config: TransformerConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let d = config.d_model;

        let value_emb_enc = Linear::new(&mut params, "embed.enc.value", 1, d, &mut rng);
        let time_emb_enc = Linear::new(&mut params, "embed.enc.time", TIME_FEATURES, d, &mut rng);
        let value_emb_dec = Linear::new(&mut params, "embed.dec.value", 1, d, &mut rng);
        let time_emb_dec = Linear::new(&mut params, "embed.dec.time", TIME_FEATURES, d, &mut rng);

        let sparse = AttentionKind::ProbSparse {
            factor_c: config.sampling_factor_c,
        };
        let mut enc = Vec::with_capacity(config.enc_layers);
        for l in 0..config.enc_layers {
            let name = format!("enc.{l}");
            enc.push(EncoderLayer {
                attn: MultiHeadAttention::new(
                    &mut params,
                    &format!("{name}.attn"),
                    d,
                    config.n_heads,
                    sparse,
                    false,
                    &mut rng,
                ),
                norm1: LayerNorm::new(&mut params, &format!("{name}.norm1"), d),
                ff: FeedForward::new(&mut params, &format!("{name}.ff"), d, config.d_ff, &mut rng),
                norm2: LayerNorm::new(&mut params, &format!("{name}.norm2"), d),
            });
        }
        let mut dec = Vec::with_capacity(config.dec_layers);
        for l in 0..config.dec_layers {
            let name = format!("dec.{l}");
            dec.push(DecoderLayer {
                self_attn: MultiHeadAttention::new(
                    &mut params,
                    &format!("{name}.self_attn"),
                    d,
                    config.n_heads,
                    sparse,
                    true,
                    &mut rng,
                ),
                norm1: LayerNorm::new(&mut params, &format!("{name}.norm1"), d),
                cross_attn: MultiHeadAttention::new(
                    &mut params,
                    &format!("{name}.cross_attn"),
                    d,
                    config.n_heads,
                    AttentionKind::Full,
                    false,
                    &mut rng,
                ),
                norm2: LayerNorm::new(&mut params, &format!("{name}.norm2"), d),
                ff: FeedForward::new(&mut params, &format!("{name}.ff"), d, config.d_ff, &mut rng),
                norm3: LayerNorm::new(&mut params, &format!("{name}.norm3"), d),
            });
        }
        let head = Linear::new(&mut params, "head", d, 1, &mut rng);

        Ok(Self {
            config,
            params,
            value_emb_enc,
            time_emb_enc,
            value_emb_dec,
            time_emb_dec,
            enc,
            dec,
            head,
            forward_calls: AtomicU64::new(0),
        })
    }

    /// Forward passes executed so far; the one-shot decoding contract is
    /// asserted against this.
    pub fn forward_count(&self) -> u64 {
        self.forward_calls.load(Ordering::Relaxed)
    }

    fn embed(
        &self,
        value_lin: &Linear,
        time_lin: &Linear,
        values: &[f64],
        time_feat: &Tensor,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> (Tensor, LinearCache, LinearCache, DropoutCache) {
        let x = Tensor::from_fn(values.len(), 1, |i, _| values[i]);
        let (mut v_emb, v_cache) = value_lin.forward(&self.params, &x);
        let (t_emb, t_cache) = time_lin.forward(&self.params, time_feat);
        v_emb.add_assign(&t_emb);
        let dropout = Dropout {
            p: self.config.dropout,
        };
        let (out, d_cache) = dropout.forward(&v_emb, dropout_rng);
        (out, v_cache, t_cache, d_cache)
    }

    fn guard(&self, t: &Tensor, ctx: &str) -> Result<()> {
        if self.config.check_finite {
            t.assert_finite(ctx)?;
        }
        Ok(())
    }

    /// Forward pass. `x_enc` has `seq_len` values; `t_enc`/`t_dec` are time
    /// feature matrices for the encoder window and the decoder span
    /// (`label_len + pred_len` rows). The decoder value input is built here:
    /// last `label_len` known values, then `pred_len` zeros. Returns the
    /// `pred_len` predictions and the activation cache.
    pub fn forward_cached(
        &self,
        x_enc: &[f64],
        t_enc: &Tensor,
        t_dec: &Tensor,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<f64>, ForwardCache)> {
        let cfg = &self.config;
        if x_enc.len() != cfg.seq_len {
            return Err(Error::ShapeMismatch(format!(
                "encoder input length {} != seq_len {}",
                x_enc.len(),
                cfg.seq_len
            )));
        }
        if t_enc.shape() != (cfg.seq_len, TIME_FEATURES) {
            return Err(Error::ShapeMismatch(format!(
                "encoder time features {:?}",
                t_enc.shape()
            )));
        }
        if t_dec.shape() != (cfg.dec_len(), TIME_FEATURES) {
            return Err(Error::ShapeMismatch(format!(
                "decoder time features {:?}, expected ({}, {})",
                t_dec.shape(),
                cfg.dec_len(),
                TIME_FEATURES
            )));
        }
        self.forward_calls.fetch_add(1, Ordering::Relaxed);

        let (mut x, emb_enc_value, emb_enc_time, emb_enc_drop) = self.embed(
            &self.value_emb_enc,
            &self.time_emb_enc,
            x_enc,
            t_enc,
            dropout_rng.as_deref_mut(),
        );
        self.guard(&x, "encoder embedding")?;

        let mut enc_caches = Vec::with_capacity(self.enc.len());
        for (li, layer) in self.enc.iter().enumerate() {
            let dropout = Dropout { p: cfg.dropout };
            let (a, attn_cache) = layer.attn.forward(&self.params, &x, &x)?;
            let (a, drop1) = dropout.forward(&a, dropout_rng.as_deref_mut());
            let mut sum = x.clone();
            sum.add_assign(&a);
            let (x1, norm1) = layer.norm1.forward(&self.params, &sum);
            let (f, ff_cache) = layer.ff.forward(&self.params, &x1);
            let (f, drop2) = dropout.forward(&f, dropout_rng.as_deref_mut());
            let mut sum2 = x1.clone();
            sum2.add_assign(&f);
            let (x2, norm2) = layer.norm2.forward(&self.params, &sum2);
            self.guard(&x2, &format!("encoder layer {li}"))?;
            x = x2;
            enc_caches.push(EncoderLayerCache {
                attn: attn_cache,
                drop1,
                norm1,
                ff: ff_cache,
                drop2,
                norm2,
            });
        }
        let enc_out = x;

        // decoder value input: last label_len known values + pred_len zeros
        let mut dec_values = vec![0.0; cfg.dec_len()];
        dec_values[..cfg.label_len].copy_from_slice(&x_enc[cfg.seq_len - cfg.label_len..]);
        let (mut y, emb_dec_value, emb_dec_time, emb_dec_drop) = self.embed(
            &self.value_emb_dec,
            &self.time_emb_dec,
            &dec_values,
            t_dec,
            dropout_rng.as_deref_mut(),
        );
        self.guard(&y, "decoder embedding")?;

        let mut dec_caches = Vec::with_capacity(self.dec.len());
        for (li, layer) in self.dec.iter().enumerate() {
            let dropout = Dropout { p: cfg.dropout };
            let (a, self_cache) = layer.self_attn.forward(&self.params, &y, &y)?;
            let (a, drop1) = dropout.forward(&a, dropout_rng.as_deref_mut());
            let mut sum = y.clone();
            sum.add_assign(&a);
            let (y1, norm1) = layer.norm1.forward(&self.params, &sum);

            let (c, cross_cache) = layer.cross_attn.forward(&self.params, &y1, &enc_out)?;
            let (c, drop2) = dropout.forward(&c, dropout_rng.as_deref_mut());
            let mut sum2 = y1.clone();
            sum2.add_assign(&c);
            let (y2, norm2) = layer.norm2.forward(&self.params, &sum2);

            let (f, ff_cache) = layer.ff.forward(&self.params, &y2);
            let (f, drop3) = dropout.forward(&f, dropout_rng.as_deref_mut());
            let mut sum3 = y2.clone();
            sum3.add_assign(&f);
            let (y3, norm3) = layer.norm3.forward(&self.params, &sum3);
            self.guard(&y3, &format!("decoder layer {li}"))?;
            y = y3;
            dec_caches.push(DecoderLayerCache {
                self_attn: self_cache,
                drop1,
                norm1,
                cross_attn: cross_cache,
                drop2,
                norm2,
                ff: ff_cache,
                drop3,
                norm3,
            });
        }

        let (out, head_cache) = self.head.forward(&self.params, &y);
        self.guard(&out, "head")?;
        let preds: Vec<f64> = (cfg.label_len..cfg.dec_len())
            .map(|i| out.at(i, 0))
            .collect();

        Ok((
            preds,
            ForwardCache {
                emb_enc_value,
                emb_enc_time,
                emb_enc_drop,
                emb_dec_value,
                emb_dec_time,
                emb_dec_drop,
                enc_layers: enc_caches,
                dec_layers: dec_caches,
                head: head_cache,
            },
        ))
    }

    /// Inference-mode forward: dropout off, deterministic.
    pub fn forward(&self, x_enc: &[f64], t_enc: &Tensor, t_dec: &Tensor) -> Result<Vec<f64>> {
        self.forward_cached(x_enc, t_enc, t_dec, None)
            .map(|(preds, _)| preds)
    }

    /// Reverse pass from the gradient of the loss w.r.t. the predictions.
    /// Accumulates parameter gradients into `grads`.
    pub fn backward(&self, cache: &ForwardCache, dpreds: &[f64], grads: &mut GradSet) {
        let cfg = &self.config;
        let dropout = Dropout { p: cfg.dropout };

        let mut dhead_out = Tensor::zeros(cfg.dec_len(), 1);
        for (i, &g) in dpreds.iter().enumerate() {
            *dhead_out.at_mut(cfg.label_len + i, 0) = g;
        }
        let mut dy = self.head.backward(&self.params, &cache.head, &dhead_out, grads);

        let mut denc_total = Tensor::zeros(cfg.seq_len, cfg.d_model);
        for (layer, lcache) in self.dec.iter().zip(&cache.dec_layers).rev() {
            let dsum3 = layer.norm3.backward(&self.params, &lcache.norm3, &dy, grads);
            let df = dropout.backward(&lcache.drop3, &dsum3);
            let mut dy2 = layer.ff.backward(&self.params, &lcache.ff, &df, grads);
            dy2.add_assign(&dsum3);

            let dsum2 = layer.norm2.backward(&self.params, &lcache.norm2, &dy2, grads);
            let dc = dropout.backward(&lcache.drop2, &dsum2);
            let (mut dy1, denc) =
                layer
                    .cross_attn
                    .backward(&self.params, &lcache.cross_attn, &dc, grads);
            denc_total.add_assign(&denc);
            dy1.add_assign(&dsum2);

            let dsum1 = layer.norm1.backward(&self.params, &lcache.norm1, &dy1, grads);
            let da = dropout.backward(&lcache.drop1, &dsum1);
            let (dself_q, dself_kv) =
                layer
                    .self_attn
                    .backward(&self.params, &lcache.self_attn, &da, grads);
            let mut dnext = dself_q;
            dnext.add_assign(&dself_kv);
            dnext.add_assign(&dsum1);
            dy = dnext;
        }

        // decoder embedding
        let demb_dec = dropout.backward(&cache.emb_dec_drop, &dy);
        let _ = self
            .value_emb_dec
            .backward(&self.params, &cache.emb_dec_value, &demb_dec, grads);
        let _ = self
            .time_emb_dec
            .backward(&self.params, &cache.emb_dec_time, &demb_dec, grads);

        // encoder stack
        let mut dx = denc_total;
        for (layer, lcache) in self.enc.iter().zip(&cache.enc_layers).rev() {
            let dsum2 = layer.norm2.backward(&self.params, &lcache.norm2, &dx, grads);
            let df = dropout.backward(&lcache.drop2, &dsum2);
            let mut dx1 = layer.ff.backward(&self.params, &lcache.ff, &df, grads);
            dx1.add_assign(&dsum2);

            let dsum1 = layer.norm1.backward(&self.params, &lcache.norm1, &dx1, grads);
            let da = dropout.backward(&lcache.drop1, &dsum1);
            let (dq, dkv) = layer.attn.backward(&self.params, &lcache.attn, &da, grads);
            let mut dxn = dq;
            dxn.add_assign(&dkv);
            dxn.add_assign(&dsum1);
            dx = dxn;
        }

        let demb_enc = dropout.backward(&cache.emb_enc_drop, &dx);
        let _ = self
            .value_emb_enc
            .backward(&self.params, &cache.emb_enc_value, &demb_enc, grads);
        let _ = self
            .time_emb_enc
            .backward(&self.params, &cache.emb_enc_time, &demb_enc, grads);
    }

    /// MSE loss and its gradient for one window; used by training and the
    /// finite-difference checks.
    pub fn loss_and_grads(
        &self,
        x_enc: &[f64],
        t_enc: &Tensor,
        t_dec: &Tensor,
        target: &[f64],
        dropout_rng: Option<&mut ChaCha8Rng>,
        grads: &mut GradSet,
    ) -> Result<f64> {
        let (preds, cache) = self.forward_cached(x_enc, t_enc, t_dec, dropout_rng)?;
        let n = preds.len() as f64;
        let mut loss = 0.0;
        let mut dpreds = vec![0.0; preds.len()];
        for (i, (p, t)) in preds.iter().zip(target).enumerate() {
            let e = p - t;
            loss += e * e / n;
            dpreds[i] = 2.0 * e / n;
        }
        self.backward(&cache, &dpreds, grads);
        Ok(loss)
    }

    /// Loss without gradients; the finite-difference oracle evaluates this.
    pub fn loss_only(
        &self,
        x_enc: &[f64],
        t_enc: &Tensor,
        t_dec: &Tensor,
        target: &[f64],
    ) -> Result<f64> {
        let (preds, _) = self.forward_cached(x_enc, t_enc, t_dec, None)?;
        let n = preds.len() as f64;
        Ok(preds
            .iter()
            .zip(target)
            .map(|(p, t)| (p - t) * (p - t) / n)
            .sum())
    }
}

/// Builds encoder/decoder time-feature matrices for a window whose
/// timestamps cover `seq_len + pred_len` ticks (window plus future horizon).
pub fn window_time_features(
    config: &TransformerConfig,
    timestamps: &[NaiveDateTime],
) -> Result<(Tensor, Tensor)> {
    if timestamps.len() != config.seq_len + config.pred_len {
        return Err(Error::ShapeMismatch(format!(
            "need {} timestamps (seq_len + pred_len), got {}",
            config.seq_len + config.pred_len,
            timestamps.len()
        )));
    }
    let all = time_features(timestamps);
    let t_enc = Tensor::from_fn(config.seq_len, TIME_FEATURES, |i, j| all.at(i, j));
    let dec_start = config.seq_len - config.label_len;
    let t_dec = Tensor::from_fn(config.dec_len(), TIME_FEATURES, |i, j| {
        all.at(dec_start + i, j)
    });
    Ok((t_enc, t_dec))
}
