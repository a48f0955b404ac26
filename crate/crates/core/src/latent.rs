//! AE, VAE and ACAI autoencoders over flattened 448-bit drum patterns.
//!
//! All three share the encoder `448 -> 64 -> 32 -> 4` (the VAE encoder ends in
//! 8 outputs: the mean and log-variance heads side by side) and the decoder
//! `4 -> 32 -> 64 -> 448` with ReLU hidden layers and a sigmoid output. ACAI
//! adds a critic `448 -> 64 -> 32 -> 1` that estimates the mixing coefficient
//! of decoded interpolants.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix4, Vector4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::checkpoint::{CheckpointError, Reader, Writer};
use crate::dataset::PatternRecord;
use crate::nn::{self, Activation, AdamConfig, AdamState, Mlp, MlpGrads, Parameters, Trace};
use crate::pattern::{decode_codes, DrumPattern, PATTERN_BITS};

pub const LATENT_DIM: usize = 4;
pub const HIDDEN: [usize; 2] = [64, 32];
/// Diagonal jitter added when the latent covariance is not positive definite.
pub const COVARIANCE_JITTER: f64 = 1e-6;

const CHECKPOINT_TAG: &[u8; 4] = b"AUTO";

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LatentPoint(pub [f64; LATENT_DIM]);

impl LatentPoint {
    /// `alpha * self + (1 - alpha) * other`, evaluated as
    /// `other + alpha * (self - other)` so equal endpoints mix to themselves.
    pub fn mix(&self, other: &LatentPoint, alpha: f64) -> LatentPoint {
        let mut z = [0.0; LATENT_DIM];
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = other.0[i] + alpha * (self.0[i] - other.0[i]);
        }
        LatentPoint(z)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Ae,
    Vae,
    Acai,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Ae, ModelKind::Vae, ModelKind::Acai];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ae => "ae",
            ModelKind::Vae => "vae",
            ModelKind::Acai => "acai",
        }
    }

    fn encoder_outputs(self) -> usize {
        match self {
            ModelKind::Vae => 2 * LATENT_DIM,
            _ => LATENT_DIM,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ae" => Ok(ModelKind::Ae),
            "vae" => Ok(ModelKind::Vae),
            "acai" => Ok(ModelKind::Acai),
            other => Err(format!("unknown model kind {other:?} (expected ae, vae or acai)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatentError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {terms:?}")]
    NonFiniteLoss { epoch: usize, batch: usize, terms: LossTerms },
    #[error("interpolation coefficient {0} outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("latent covariance is not positive definite even after jitter")]
    DegenerateCovariance,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("record {index}: {reason}")]
    BadRecord { index: usize, reason: String },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// KL weight for the VAE.
    pub kl_weight: f64,
    /// Weight of the critic penalty in the ACAI autoencoder loss.
    pub acai_lambda: f64,
    /// Blend factor of the critic's real-data regularizer.
    pub acai_gamma: f64,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            seed: 0,
            kl_weight: 1.0,
            acai_lambda: 0.5,
            acai_gamma: 0.2,
            learning_rate: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LatentError> {
        let bad = |m: &str| Err(LatentError::InvalidConfig(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.kl_weight >= 0.0 && self.acai_lambda >= 0.0 && self.acai_gamma >= 0.0) {
            return bad("kl_weight, acai_lambda and acai_gamma must be non-negative");
        }
        if self.acai_gamma > 0.5 {
            return bad("acai_gamma must not exceed 0.5");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, ..AdamConfig::default() }
    }
}

/// Mean and full covariance of the training latent codes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LatentStats {
    pub mean: [f64; LATENT_DIM],
    pub covariance: [[f64; LATENT_DIM]; LATENT_DIM],
}

impl LatentStats {
    pub fn from_points(points: &[LatentPoint]) -> Self {
        let n = points.len().max(1) as f64;
        let mut mean = [0.0; LATENT_DIM];
        for p in points {
            for i in 0..LATENT_DIM {
                mean[i] += p.0[i];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut covariance = [[0.0; LATENT_DIM]; LATENT_DIM];
        for p in points {
            for i in 0..LATENT_DIM {
                for j in 0..LATENT_DIM {
                    covariance[i][j] += (p.0[i] - mean[i]) * (p.0[j] - mean[j]);
                }
            }
        }
        covariance.iter_mut().flatten().for_each(|c| *c /= n);
        Self { mean, covariance }
    }

    pub fn std(&self) -> [f64; LATENT_DIM] {
        std::array::from_fn(|i| self.covariance[i][i].max(0.0).sqrt())
    }

    fn cholesky(&self) -> Option<Matrix4<f64>> {
        let cov = Matrix4::from_fn(|i, j| self.covariance[i][j]);
        if !cov.iter().all(|v| v.is_finite()) {
            return None;
        }
        cov.cholesky()
            .or_else(|| (cov + Matrix4::identity() * COVARIANCE_JITTER).cholesky())
            .map(|c| c.l())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub kind: ModelKind,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub critic: Option<Mlp>,
    pub latent_stats: LatentStats,
}

/// Threshold a decoded probability vector into a pattern (`bit = p > threshold`).
pub fn binarize(probs: &[f64], threshold: f64) -> DrumPattern {
    DrumPattern::from_probabilities(probs, threshold)
}

impl AutoencoderModel {
    /// Freshly initialized model for `input_dim`-bit inputs with the given
    /// hidden widths (encoder order; the decoder mirrors them).
    pub fn with_dims<R: Rng + ?Sized>(kind: ModelKind, input_dim: usize, hidden: [usize; 2], rng: &mut R) -> Self {
        let [h1, h2] = hidden;
        let encoder =
            Mlp::new(&[input_dim, h1, h2, kind.encoder_outputs()], Activation::Relu, Activation::Identity, rng);
        let decoder = Mlp::new(&[LATENT_DIM, h2, h1, input_dim], Activation::Relu, Activation::Sigmoid, rng);
        let critic = (kind == ModelKind::Acai)
            .then(|| Mlp::new(&[input_dim, h1, h2, 1], Activation::Relu, Activation::Identity, rng));
        Self { kind, encoder, decoder, critic, latent_stats: LatentStats::default() }
    }

    pub fn new<R: Rng + ?Sized>(kind: ModelKind, rng: &mut R) -> Self {
        Self::with_dims(kind, PATTERN_BITS, HIDDEN, rng)
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Deterministic code: the encoder output, or the mean head for a VAE.
    pub fn encode_bits(&self, bits: &[f64]) -> LatentPoint {
        let out = self.encoder.predict(bits).expect("input width matches the encoder");
        LatentPoint(out[..LATENT_DIM].try_into().expect("at least 4 outputs"))
    }

    pub fn encode(&self, pattern: &DrumPattern) -> LatentPoint {
        self.encode_bits(&pattern.to_bits())
    }

    pub fn decode(&self, z: &LatentPoint) -> Vec<f64> {
        self.decoder.predict(&z.0).expect("decoder takes 4 inputs")
    }

    /// Decodes `alpha * z1 + (1 - alpha) * z2`.
    pub fn interpolate(&self, z1: &LatentPoint, z2: &LatentPoint, alpha: f64) -> Result<Vec<f64>, LatentError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(LatentError::AlphaOutOfRange(alpha));
        }
        // Endpoints return the inputs untouched so they decode bit-identically.
        let z = if alpha == 1.0 {
            *z1
        } else if alpha == 0.0 {
            *z2
        } else {
            z1.mix(z2, alpha)
        };
        Ok(self.decode(&z))
    }

    /// Draws from the Gaussian fitted to the training codes.
    pub fn sample_latents(&self, n: usize, seed: u64) -> Result<Vec<LatentPoint>, LatentError> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let l = self.latent_stats.cholesky().ok_or(LatentError::DegenerateCovariance)?;
        let mean = Vector4::from_column_slice(&self.latent_stats.mean);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n)
            .map(|_| {
                let eps = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                let z = mean + l * eps;
                LatentPoint([z[0], z[1], z[2], z[3]])
            })
            .collect())
    }

    pub fn save(&self) -> Vec<u8> {
        let mut w = Writer::new(CHECKPOINT_TAG);
        w.u8(match self.kind {
            ModelKind::Ae => 0,
            ModelKind::Vae => 1,
            ModelKind::Acai => 2,
        });
        w.mlp(&self.encoder);
        w.mlp(&self.decoder);
        w.u8(u8::from(self.critic.is_some()));
        if let Some(c) = &self.critic {
            w.mlp(c);
        }
        self.latent_stats.mean.iter().for_each(|&v| w.f64(v));
        self.latent_stats.covariance.iter().flatten().for_each(|&v| w.f64(v));
        w.finish()
    }

    pub fn load(bytes: &[u8]) -> Result<Self, LatentError> {
        let mut r = Reader::new(bytes, CHECKPOINT_TAG)?;
        let kind = match r.u8()? {
            0 => ModelKind::Ae,
            1 => ModelKind::Vae,
            2 => ModelKind::Acai,
            t => return Err(CheckpointError::Invalid(format!("model kind tag {t}")).into()),
        };
        let encoder = r.mlp()?;
        let decoder = r.mlp()?;
        let critic = if r.u8()? == 1 { Some(r.mlp()?) } else { None };
        let mut stats = LatentStats::default();
        for v in stats.mean.iter_mut() {
            *v = r.f64()?;
        }
        for v in stats.covariance.iter_mut().flatten() {
            *v = r.f64()?;
        }
        r.finish()?;
        let invalid = |m: &str| LatentError::Checkpoint(CheckpointError::Invalid(m.to_string()));
        if encoder.output_dim() != kind.encoder_outputs() || decoder.input_dim() != LATENT_DIM {
            return Err(invalid("latent widths do not match the model kind"));
        }
        if decoder.output_dim() != encoder.input_dim() {
            return Err(invalid("decoder output does not match encoder input"));
        }
        if (kind == ModelKind::Acai) != critic.is_some() {
            return Err(invalid("critic presence does not match the model kind"));
        }
        Ok(Self { kind, encoder, decoder, critic, latent_stats: stats })
    }
}

/// Encoder parameters followed by decoder parameters.
impl Parameters for AutoencoderModel {
    fn parameters(&self) -> Vec<&[f64]> {
        let mut p = self.encoder.parameters();
        p.extend(self.decoder.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.encoder.parameters_mut();
        p.extend(self.decoder.parameters_mut());
        p
    }
}

// ---------------------------------------------------------------------------
// Losses

/// Per-batch random draws, fixed up front so a loss is a deterministic
/// function of the parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchNoise {
    /// VAE reparameterization noise, one vector per sample.
    pub eps: Vec<[f64; LATENT_DIM]>,
    /// ACAI mixing coefficients, one per sample.
    pub alphas: Vec<f64>,
    /// ACAI interpolation partner of each sample.
    pub partners: Vec<usize>,
}

impl BatchNoise {
    pub fn draw<R: Rng + ?Sized>(kind: ModelKind, len: usize, rng: &mut R) -> Self {
        match kind {
            ModelKind::Ae => Self::default(),
            ModelKind::Vae => Self {
                eps: (0..len).map(|_| std::array::from_fn(|_| rng.sample(StandardNormal))).collect(),
                ..Self::default()
            },
            ModelKind::Acai => Self {
                alphas: (0..len).map(|_| rng.random_range(0.0..=0.5)).collect(),
                // Pair each sample with its mirror in the (shuffled) batch.
                partners: (0..len).rev().collect(),
                ..Self::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    /// Reconstruction cross-entropy averaged over samples and bits.
    pub recon: f64,
    /// Mean per-sample KL divergence (VAE).
    pub kl: f64,
    /// `lambda * mean(critic(interpolant)^2)` (ACAI).
    pub critic_penalty: f64,
    pub total: f64,
}

/// Weight of the per-bit mean cross-entropy in the objective. The VAE
/// optimizes the negative ELBO, whose likelihood term sums over all bits;
/// AE and ACAI use the per-bit mean.
fn recon_scale(kind: ModelKind, input_dim: usize) -> f64 {
    match kind {
        ModelKind::Vae => input_dim as f64,
        _ => 1.0,
    }
}

/// Closed-form `KL(N(mu, exp(logvar)) || N(0, I))` with its gradients with
/// respect to `mu` and `logvar`.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let kl = 0.5 * mu.iter().zip(logvar).map(|(m, lv)| m * m + lv.exp() - 1.0 - lv).sum::<f64>();
    let d_logvar = logvar.iter().map(|lv| 0.5 * (lv.exp() - 1.0)).collect();
    (kl, mu.to_vec(), d_logvar)
}

/// Inputs for one critic update, detached from the autoencoder.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CriticBatch {
    pub interpolants: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    /// `gamma * x + (1 - gamma) * reconstruction(x)`.
    pub blends: Vec<Vec<f64>>,
}

pub struct AeGrads {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
}

impl AeGrads {
    /// Laid out like [`AutoencoderModel`]'s parameters.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut s = self.encoder.slices();
        s.extend(self.decoder.slices());
        s
    }
}

struct SampleForward {
    enc: Trace,
    z: LatentPoint,
    /// `exp(logvar / 2)` per dimension for the VAE.
    sigma: [f64; LATENT_DIM],
    dec: Trace,
}

fn forward_sample(model: &AutoencoderModel, x: &[f64], eps: Option<&[f64; LATENT_DIM]>) -> SampleForward {
    let enc = model.encoder.forward(x).expect("input width matches the encoder");
    let out = enc.output();
    let mut z = [0.0; LATENT_DIM];
    let mut sigma = [0.0; LATENT_DIM];
    match (model.kind, eps) {
        (ModelKind::Vae, Some(eps)) => {
            for i in 0..LATENT_DIM {
                sigma[i] = (0.5 * out[LATENT_DIM + i]).exp();
                z[i] = out[i] + sigma[i] * eps[i];
            }
        }
        _ => z.copy_from_slice(&out[..LATENT_DIM]),
    }
    let dec = model.decoder.forward(&z).expect("decoder takes 4 inputs");
    SampleForward { enc, z: LatentPoint(z), sigma, dec }
}

/// Autoencoder objective of `model.kind` on a batch, its exact gradient with
/// respect to encoder and decoder parameters, and (for ACAI) the detached
/// inputs of the matching critic update.
pub fn autoencoder_gradients(
    model: &AutoencoderModel,
    batch: &[Vec<f64>],
    noise: &BatchNoise,
    config: &TrainConfig,
) -> (LossTerms, AeGrads, CriticBatch) {
    let b = batch.len() as f64;
    let mut grads = AeGrads { encoder: MlpGrads::zeros_like(&model.encoder), decoder: MlpGrads::zeros_like(&model.decoder) };
    let mut terms = LossTerms::default();
    let mut forwards = Vec::with_capacity(batch.len());
    let mut dz = vec![[0.0; LATENT_DIM]; batch.len()];
    let scale = recon_scale(model.kind, model.input_dim());

    for (k, x) in batch.iter().enumerate() {
        let f = forward_sample(model, x, noise.eps.get(k));
        terms.recon += nn::bce_value(f.dec.output(), x) / b;
        let mut logit_grad = nn::bce_logit_grad(f.dec.output(), x);
        logit_grad.iter_mut().for_each(|g| *g *= scale / b);
        let g = model.decoder.backward_pre_into(&f.dec, &logit_grad, Some(&mut grads.decoder)).expect("shapes");
        dz[k].iter_mut().zip(&g).for_each(|(d, gi)| *d += gi);
        forwards.push(f);
    }

    let mut critic_batch = CriticBatch::default();
    if model.kind == ModelKind::Acai {
        let critic = model.critic.as_ref().expect("ACAI model has a critic");
        let lambda = config.acai_lambda;
        let gamma = config.acai_gamma;
        for k in 0..batch.len() {
            let j = noise.partners[k];
            let alpha = noise.alphas[k];
            let z_mix = forwards[k].z.mix(&forwards[j].z, alpha);
            let dec_mix = model.decoder.forward(&z_mix.0).expect("decoder takes 4 inputs");
            let c_trace = critic.forward(dec_mix.output()).expect("critic input width");
            let c = c_trace.output()[0];
            terms.critic_penalty += lambda * c * c / b;
            let dx = critic.backward_into(&c_trace, &[2.0 * lambda * c / b], None).expect("shapes");
            let dz_mix = model.decoder.backward_into(&dec_mix, &dx, Some(&mut grads.decoder)).expect("shapes");
            for i in 0..LATENT_DIM {
                dz[k][i] += alpha * dz_mix[i];
                dz[j][i] += (1.0 - alpha) * dz_mix[i];
            }
            let recon = forwards[k].dec.output();
            critic_batch.blends.push(batch[k].iter().zip(recon).map(|(x, r)| gamma * x + (1.0 - gamma) * r).collect());
            critic_batch.interpolants.push(dec_mix.activations.last().expect("output").clone());
            critic_batch.alphas.push(alpha);
        }
    }

    for (k, f) in forwards.iter().enumerate() {
        let enc_grad: Vec<f64> = if model.kind == ModelKind::Vae {
            let out = f.enc.output();
            let (kl, d_mu, d_logvar) = kl_divergence(&out[..LATENT_DIM], &out[LATENT_DIM..]);
            terms.kl += kl / b;
            let eps = &noise.eps[k];
            let beta = config.kl_weight;
            let mut g = vec![0.0; 2 * LATENT_DIM];
            for i in 0..LATENT_DIM {
                g[i] = dz[k][i] + beta * d_mu[i] / b;
                g[LATENT_DIM + i] = dz[k][i] * 0.5 * f.sigma[i] * eps[i] + beta * d_logvar[i] / b;
            }
            g
        } else {
            dz[k].to_vec()
        };
        model.encoder.backward_into(&f.enc, &enc_grad, Some(&mut grads.encoder)).expect("shapes");
    }

    terms.total = scale * terms.recon + config.kl_weight * terms.kl + terms.critic_penalty;
    (terms, grads, critic_batch)
}

/// Value of the objective computed by [`autoencoder_gradients`].
pub fn autoencoder_loss(model: &AutoencoderModel, batch: &[Vec<f64>], noise: &BatchNoise, config: &TrainConfig) -> LossTerms {
    let b = batch.len() as f64;
    let mut terms = LossTerms::default();
    let mut zs = Vec::with_capacity(batch.len());
    for (k, x) in batch.iter().enumerate() {
        let f = forward_sample(model, x, noise.eps.get(k));
        terms.recon += nn::bce_value(f.dec.output(), x) / b;
        if model.kind == ModelKind::Vae {
            let out = f.enc.output();
            terms.kl += kl_divergence(&out[..LATENT_DIM], &out[LATENT_DIM..]).0 / b;
        }
        zs.push(f.z);
    }
    if model.kind == ModelKind::Acai {
        let critic = model.critic.as_ref().expect("ACAI model has a critic");
        for k in 0..batch.len() {
            let z_mix = zs[k].mix(&zs[noise.partners[k]], noise.alphas[k]);
            let c = critic.predict(&model.decode(&z_mix)).expect("critic input width")[0];
            terms.critic_penalty += config.acai_lambda * c * c / batch.len() as f64;
        }
    }
    terms.total = recon_scale(model.kind, model.input_dim()) * terms.recon + config.kl_weight * terms.kl + terms.critic_penalty;
    terms
}

/// Critic objective `mean((d(x_alpha) - alpha)^2) + mean(d(blend)^2)`.
pub fn critic_loss(critic: &Mlp, batch: &CriticBatch) -> f64 {
    let n = batch.alphas.len().max(1) as f64;
    let mut loss = 0.0;
    for (x, &alpha) in batch.interpolants.iter().zip(&batch.alphas) {
        let d = critic.predict(x).expect("critic input width")[0] - alpha;
        loss += d * d / n;
    }
    for x in &batch.blends {
        let d = critic.predict(x).expect("critic input width")[0];
        loss += d * d / n;
    }
    loss
}

pub fn critic_gradients(critic: &Mlp, batch: &CriticBatch) -> (f64, MlpGrads) {
    let n = batch.alphas.len().max(1) as f64;
    let mut grads = MlpGrads::zeros_like(critic);
    let mut loss = 0.0;
    let targets = batch.alphas.iter().copied().chain(std::iter::repeat(0.0));
    for (x, target) in batch.interpolants.iter().chain(&batch.blends).zip(targets) {
        let trace = critic.forward(x).expect("critic input width");
        let d = trace.output()[0] - target;
        loss += d * d / n;
        critic.backward_into(&trace, &[2.0 * d / n], Some(&mut grads)).expect("shapes");
    }
    (loss, grads)
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Sample-weighted mean of each epoch's batch losses (measured before the
    /// corresponding update).
    pub epoch_losses: Vec<LossTerms>,
    pub critic_losses: Vec<f64>,
}

fn records_to_bits(records: &[PatternRecord]) -> Result<Vec<Vec<f64>>, LatentError> {
    records
        .iter()
        .enumerate()
        .map(|(index, r)| {
            decode_codes(&r.codes)
                .map(|p| p.to_bits())
                .map_err(|e| LatentError::BadRecord { index, reason: e.to_string() })
        })
        .collect()
}

pub fn train(records: &[PatternRecord], kind: ModelKind, config: &TrainConfig) -> Result<AutoencoderModel, LatentError> {
    train_with_report(records, kind, config).map(|(m, _)| m)
}

/// Mini-batch Adam on the objective of `kind`; ACAI alternates an
/// autoencoder step and a critic step on every batch. Fully determined by
/// `config.seed`.
pub fn train_with_report(
    records: &[PatternRecord],
    kind: ModelKind,
    config: &TrainConfig,
) -> Result<(AutoencoderModel, TrainReport), LatentError> {
    let data = records_to_bits(records)?;
    train_bits(&data, kind, config)
}

pub fn train_bits(
    data: &[Vec<f64>],
    kind: ModelKind,
    config: &TrainConfig,
) -> Result<(AutoencoderModel, TrainReport), LatentError> {
    config.validate()?;
    if data.is_empty() {
        return Err(LatentError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = AutoencoderModel::with_dims(kind, data[0].len(), HIDDEN, &mut rng);
    let mut ae_opt = AdamState::for_model(config.adam(), &model);
    let mut critic_opt = model.critic.as_ref().map(|c| AdamState::for_model(config.adam(), c));
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_terms = LossTerms::default();
        let mut epoch_critic = 0.0;
        for (batch_idx, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<Vec<f64>> = idx.iter().map(|&i| data[i].clone()).collect();
            let noise = BatchNoise::draw(kind, batch.len(), &mut rng);
            let (terms, grads, critic_batch) = autoencoder_gradients(&model, &batch, &noise, config);
            if !terms.total.is_finite() {
                return Err(LatentError::NonFiniteLoss { epoch, batch: batch_idx, terms });
            }
            let w = batch.len() as f64 / data.len() as f64;
            epoch_terms.recon += w * terms.recon;
            epoch_terms.kl += w * terms.kl;
            epoch_terms.critic_penalty += w * terms.critic_penalty;
            epoch_terms.total += w * terms.total;
            nn::adam_step(&mut model.parameters_mut(), &grads.slices(), &mut ae_opt).expect("shapes");

            if let (Some(critic), Some(opt)) = (model.critic.as_mut(), critic_opt.as_mut()) {
                let (c_loss, c_grads) = critic_gradients(critic, &critic_batch);
                if !c_loss.is_finite() {
                    return Err(LatentError::NonFiniteLoss { epoch, batch: batch_idx, terms });
                }
                epoch_critic += w * c_loss;
                nn::adam_step(&mut critic.parameters_mut(), &c_grads.slices(), opt).expect("shapes");
            }
        }
        log::debug!("{kind} epoch {epoch}: {epoch_terms:?} critic {epoch_critic:.5}");
        report.epoch_losses.push(epoch_terms);
        if model.critic.is_some() {
            report.critic_losses.push(epoch_critic);
        }
    }

    let codes: Vec<LatentPoint> = data.iter().map(|x| model.encode_bits(x)).collect();
    model.latent_stats = LatentStats::from_points(&codes);
    Ok((model, report))
}

/// Fraction of bits reproduced by `decode(encode(x))` thresholded at 0.5.
pub fn bit_accuracy(model: &AutoencoderModel, records: &[PatternRecord]) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    for r in records {
        let Ok(p) = decode_codes(&r.codes) else { continue };
        let recon = binarize(&model.decode(&model.encode(&p)), 0.5);
        let a = p.to_bits();
        let b = recon.to_bits();
        correct += a.iter().zip(&b).filter(|(x, y)| x == y).count();
        total += a.len();
    }
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}
