//! Deep Brownian bridges over reservoir-state and storage-utility sequences.
//!
//! An encoder maps a vector to a d-dimensional latent, the (parameter-free)
//! generator linearly interpolates between two latents with Brownian-bridge
//! statistics, and an MLP decoder maps latents back. Training combines a
//! reconstruction loss on interpolated latents with an InfoNCE contrastive
//! term over cosine similarities, so latent trajectories are pushed toward
//! bridge-linear structure while different source trajectories separate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::rng;
use crate::nn::{cosine_sim, cosine_sim_backward, Activation, Adam, AdamConfig, Mlp, MlpGrads, Normalization};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BridgeVariant {
    /// Reservoir-state sequences (x = o).
    State,
    /// Storage-utility sequences (x = r).
    Utility,
}

/// Encoder/decoder bundle for one bridge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeModel {
    pub variant: BridgeVariant,
    pub latent_dim: usize,
    pub encoder: Mlp,
    pub decoder: Mlp,
    /// Per-channel standardization fit on the training sequences; the
    /// networks see standardized vectors so channels with very different
    /// raw scales contribute comparably to reconstruction.
    pub norm: Normalization,
}

impl BridgeModel {
    /// Fresh model with 2 hidden tanh layers of `hidden` units on each side.
    pub fn new<R: Rng>(
        variant: BridgeVariant,
        input_dim: usize,
        latent_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let acts = [Activation::Tanh, Activation::Tanh, Activation::Identity];
        Ok(BridgeModel {
            variant,
            latent_dim,
            encoder: Mlp::new(&[input_dim, hidden, hidden, latent_dim], &acts, rng)?,
            decoder: Mlp::new(&[latent_dim, hidden, hidden, input_dim], &acts, rng)?,
            norm: Normalization::identity(input_dim),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.encoder.forward(&self.norm.apply(x))
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.norm.invert(&self.decoder.forward(z)?))
    }
}

/// Deterministic bridge mean: (1 - t/T) z0 + (t/T) zT.
pub fn bridge_interpolate(z0: &[f64], z_end: &[f64], t: usize, horizon: usize) -> Result<Vec<f64>> {
    if z0.len() != z_end.len() {
        return Err(Error::DimMismatch {
            expected: z0.len(),
            got: z_end.len(),
            context: "bridge endpoints".into(),
        });
    }
    if horizon < 1 || t > horizon {
        return Err(Error::RejectedInput(format!(
            "bridge time t={t} outside [0, {horizon}]"
        )));
    }
    if t == horizon {
        return Ok(z_end.to_vec());
    }
    // a + frac (b - a): exact at t = 0 and exactly constant when the
    // endpoints coincide, which the guidance-window invariants rely on
    let frac = t as f64 / horizon as f64;
    Ok(z0
        .iter()
        .zip(z_end)
        .map(|(&a, &b)| a + frac * (b - a))
        .collect())
}

/// Stochastic bridge draw: mean as [`bridge_interpolate`], isotropic
/// per-dimension variance t(T-t)/T.
pub fn bridge_sample<R: Rng>(
    z0: &[f64],
    z_end: &[f64],
    t: usize,
    horizon: usize,
    rng_: &mut R,
) -> Result<Vec<f64>> {
    let mut z = bridge_interpolate(z0, z_end, t, horizon)?;
    let var = (t * (horizon - t)) as f64 / horizon as f64;
    let std = var.sqrt();
    for v in z.iter_mut() {
        *v += std * rng::standard_normal(rng_);
    }
    Ok(z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Fixed subsequence length L.
    pub subseq_len: usize,
    pub n_samples_per_traj: usize,
    /// Noise scale relative to each channel's empirical std.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            subseq_len: 16,
            n_samples_per_traj: 8,
            alpha: 0.5,
            seed: 0,
        }
    }
}

/// A fixed-length slice of one source trajectory, with provenance retained
/// for contrastive pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsequence {
    pub source: usize,
    pub steps: Vec<Vec<f64>>,
}

/// Result of augmentation; `skipped` counts trajectories shorter than L.
#[derive(Debug, Clone)]
pub struct Augmented {
    pub subsequences: Vec<Subsequence>,
    pub skipped: usize,
}

/// Per-channel empirical std over all steps of all trajectories.
pub fn channel_std(trajectories: &[&[Vec<f64>]]) -> Vec<f64> {
    let dim = trajectories
        .iter()
        .flat_map(|t| t.iter())
        .next()
        .map_or(0, |x| x.len());
    let mut count = 0usize;
    let mut mean = vec![0.0; dim];
    for traj in trajectories {
        for x in traj.iter() {
            for (m, &v) in mean.iter_mut().zip(x) {
                *m += v;
            }
            count += 1;
        }
    }
    for m in mean.iter_mut() {
        *m /= count as f64;
    }
    let mut var = vec![0.0; dim];
    for traj in trajectories {
        for x in traj.iter() {
            for ((v, &xi), &m) in var.iter_mut().zip(x).zip(&mean) {
                *v += (xi - m) * (xi - m);
            }
        }
    }
    var.iter().map(|v| (v / count as f64).sqrt()).collect()
}

/// Two-step augmentation: contiguous fixed-length slices plus per-channel
/// Gaussian noise of std `alpha * channel_std`.
pub fn augment(trajectories: &[&[Vec<f64>]], cfg: &AugmentConfig) -> Result<Augmented> {
    if cfg.subseq_len < 2 {
        return Err(Error::Config("subseq_len must be >= 2".into()));
    }
    let sigma = channel_std(trajectories);
    let mut r = rng::seeded(cfg.seed);
    let mut subsequences = Vec::new();
    let mut skipped = 0;
    for (source, traj) in trajectories.iter().enumerate() {
        if traj.len() < cfg.subseq_len {
            skipped += 1;
            continue;
        }
        for _ in 0..cfg.n_samples_per_traj {
            let start = r.random_range(0..=traj.len() - cfg.subseq_len);
            let steps = traj[start..start + cfg.subseq_len]
                .iter()
                .map(|x| {
                    x.iter()
                        .zip(&sigma)
                        .map(|(&v, &s)| {
                            if cfg.alpha == 0.0 {
                                v
                            } else {
                                v + cfg.alpha * s * rng::standard_normal(&mut r)
                            }
                        })
                        .collect()
                })
                .collect();
            subsequences.push(Subsequence { source, steps });
        }
    }
    Ok(Augmented {
        subsequences,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BridgeTrainConfig {
    pub temperature: f64,
    pub contrastive_weight: f64,
    /// Subsequences per batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Negatives per anchor.
    pub negatives: usize,
    pub hidden: usize,
    pub latent_dim: usize,
    pub seed: u64,
}

impl Default for BridgeTrainConfig {
    fn default() -> Self {
        BridgeTrainConfig {
            temperature: 0.1,
            contrastive_weight: 0.1,
            batch_size: 8,
            epochs: 30,
            learning_rate: 1e-3,
            negatives: 8,
            hidden: 64,
            latent_dim: 8,
            seed: 0,
        }
    }
}

impl BridgeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.temperature <= 0.0 {
            errs.push("temperature must be > 0".to_string());
        }
        if self.negatives < 1 {
            errs.push("negatives must be >= 1".to_string());
        }
        if self.batch_size < 1 || self.epochs < 1 {
            errs.push("batch_size and epochs must be >= 1".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigList(errs))
        }
    }
}

/// Loss value plus gradients for both bridge networks.
pub struct BridgeLossOut {
    pub loss: f64,
    pub reconstruction: f64,
    pub contrastive: f64,
    /// Set when a single-trajectory batch made the contrastive term
    /// undefined (it is skipped).
    pub contrastive_skipped: bool,
    pub encoder_grads: MlpGrads,
    pub decoder_grads: MlpGrads,
}

/// InfoNCE over precomputed similarities: -log softmax of the positive
/// against positive + negatives at temperature tau. Returns the loss and
/// d loss / d sim for (positive, negatives...).
fn infonce(sim_pos: f64, sim_negs: &[f64], tau: f64) -> (f64, f64, Vec<f64>) {
    let ep = (sim_pos / tau).exp();
    let ens: Vec<f64> = sim_negs.iter().map(|s| (s / tau).exp()).collect();
    let denom = ep + ens.iter().sum::<f64>();
    let loss = -(ep / denom).ln();
    // d/ds_pos = (p_pos - 1)/tau, d/ds_k = p_k/tau
    let d_pos = (ep / denom - 1.0) / tau;
    let d_negs = ens.iter().map(|e| (e / denom) / tau).collect();
    (loss, d_pos, d_negs)
}

/// Joint reconstruction + contrastive loss over a batch of subsequences,
/// with gradients for encoder and decoder.
///
/// Reconstruction decodes the *interpolated* latent at every step against
/// the raw step, forcing latents toward bridge-linear structure. The
/// contrastive term uses one sampled anchor per subsequence, a positive
/// from the same subsequence, and negatives from other source trajectories.
pub fn bridge_loss<R: Rng>(
    model: &BridgeModel,
    batch: &[&Subsequence],
    cfg: &BridgeTrainConfig,
    rng_: &mut R,
) -> Result<BridgeLossOut> {
    if batch.is_empty() {
        return Err(Error::RejectedInput("empty bridge batch".into()));
    }
    let x_dim = model.input_dim();
    let mut enc_grads = MlpGrads::zeros_like(&model.encoder);
    let mut dec_grads = MlpGrads::zeros_like(&model.decoder);

    // encode every step of every subsequence once, caches kept for backward
    let mut caches = Vec::with_capacity(batch.len());
    for sub in batch {
        let mut per_step = Vec::with_capacity(sub.steps.len());
        for x in &sub.steps {
            per_step.push(model.encoder.forward_cached(x)?);
        }
        caches.push(per_step);
    }
    // dL/dz accumulated per (subsequence, step)
    let mut dz: Vec<Vec<Vec<f64>>> = batch
        .iter()
        .map(|s| vec![vec![0.0; model.latent_dim]; s.steps.len()])
        .collect();

    // reconstruction over all intermediate steps with interpolated latents
    let mut recon = 0.0;
    let n_anchor_steps: usize = batch.iter().map(|s| s.steps.len()).sum();
    let recon_scale = 1.0 / (n_anchor_steps as f64 * x_dim as f64);
    for (si, sub) in batch.iter().enumerate() {
        let last = sub.steps.len() - 1;
        let z0 = caches[si][0].output().to_vec();
        let z_end = caches[si][last].output().to_vec();
        for (t, x) in sub.steps.iter().enumerate() {
            let z_hat = bridge_interpolate(&z0, &z_end, t, last)?;
            let dcache = model.decoder.forward_cached(&z_hat)?;
            let out = dcache.output();
            let mut dl_dout = vec![0.0; x_dim];
            for (j, (&o, &xi)) in out.iter().zip(x).enumerate() {
                let diff = o - xi;
                recon += diff * diff * recon_scale;
                dl_dout[j] = 2.0 * diff * recon_scale;
            }
            let dl_dzhat = model.decoder.backward(&dcache, &dl_dout, &mut dec_grads);
            let frac = t as f64 / last as f64;
            for (k, &g) in dl_dzhat.iter().enumerate() {
                dz[si][0][k] += (1.0 - frac) * g;
                dz[si][last][k] += frac * g;
            }
        }
    }

    // contrastive term: anchors need negatives from a different source
    let sources: Vec<usize> = batch.iter().map(|s| s.source).collect();
    let multi_source = sources.iter().any(|&s| s != sources[0]);
    let mut contrastive = 0.0;
    let mut contrastive_skipped = false;
    if multi_source {
        let mut n_contrastive = 0usize;
        // pre-pick anchors so the gradient scale is known
        let mut picks = Vec::new();
        for (si, sub) in batch.iter().enumerate() {
            let others: Vec<usize> = (0..batch.len())
                .filter(|&sj| sources[sj] != sources[si])
                .collect();
            if others.is_empty() {
                continue;
            }
            let len = sub.steps.len();
            let a = rng_.random_range(0..len);
            let mut p = rng_.random_range(0..len - 1);
            if p >= a {
                p += 1;
            }
            let negs: Vec<(usize, usize)> = (0..cfg.negatives)
                .map(|_| {
                    let sj = others[rng_.random_range(0..others.len())];
                    let tk = rng_.random_range(0..batch[sj].steps.len());
                    (sj, tk)
                })
                .collect();
            picks.push((si, a, p, negs));
            n_contrastive += 1;
        }
        let cscale = 1.0 / n_contrastive as f64;
        for (si, a, p, negs) in picks {
            let za = caches[si][a].output().to_vec();
            let zp = caches[si][p].output().to_vec();
            let sim_pos = cosine_sim(&za, &zp);
            let sim_negs: Vec<f64> = negs
                .iter()
                .map(|&(sj, tk)| cosine_sim(&za, caches[sj][tk].output()))
                .collect();
            let (l, d_pos, d_negs) = infonce(sim_pos, &sim_negs, cfg.temperature);
            contrastive += l * cscale;
            let w = cfg.contrastive_weight * cscale;
            let (da, dp_) = cosine_sim_backward(&za, &zp);
            for k in 0..model.latent_dim {
                dz[si][a][k] += w * d_pos * da[k];
                dz[si][p][k] += w * d_pos * dp_[k];
            }
            for (&(sj, tk), &dn) in negs.iter().zip(&d_negs) {
                let (da_n, dk) = cosine_sim_backward(&za, caches[sj][tk].output());
                for k in 0..model.latent_dim {
                    dz[si][a][k] += w * dn * da_n[k];
                    dz[sj][tk][k] += w * dn * dk[k];
                }
            }
        }
    } else {
        contrastive_skipped = true;
    }

    // push accumulated latent gradients through the encoder
    for (si, per_step) in caches.iter().enumerate() {
        for (t, cache) in per_step.iter().enumerate() {
            if dz[si][t].iter().any(|&g| g != 0.0) {
                model.encoder.backward(cache, &dz[si][t], &mut enc_grads);
            }
        }
    }

    let loss = recon + cfg.contrastive_weight * contrastive;
    if !loss.is_finite() {
        return Err(Error::Divergence("non-finite bridge loss".into()));
    }
    Ok(BridgeLossOut {
        loss,
        reconstruction: recon,
        contrastive,
        contrastive_skipped,
        encoder_grads: enc_grads,
        decoder_grads: dec_grads,
    })
}

/// Trained bridge plus its recorded loss curve.
pub struct TrainedBridge {
    pub model: BridgeModel,
    pub loss_curve: Vec<f64>,
}

/// Train one bridge variant on raw vector sequences.
pub fn train_bridge(
    trajectories: &[&[Vec<f64>]],
    variant: BridgeVariant,
    aug_cfg: &AugmentConfig,
    cfg: &BridgeTrainConfig,
) -> Result<TrainedBridge> {
    cfg.validate()?;
    if trajectories.is_empty() {
        return Err(Error::Config("empty bridge training set".into()));
    }
    let x_dim = trajectories[0][0].len();
    let norm = Normalization::fit(trajectories.iter().flat_map(|t| t.iter().map(|x| x.as_slice())));
    let normalized: Vec<Vec<Vec<f64>>> = trajectories
        .iter()
        .map(|t| t.iter().map(|x| norm.apply(x)).collect())
        .collect();
    let norm_refs: Vec<&[Vec<f64>]> = normalized.iter().map(|t| t.as_slice()).collect();
    let augmented = augment(&norm_refs, aug_cfg)?;
    if augmented.subsequences.is_empty() {
        return Err(Error::Config("augmentation produced no subsequences".into()));
    }
    let mut r = rng::seeded(cfg.seed);
    let mut model = BridgeModel::new(variant, x_dim, cfg.latent_dim, cfg.hidden, &mut r)?;
    model.norm = norm;
    let adam_cfg = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut enc_opt = Adam::new(adam_cfg, model.encoder.param_count());
    let mut dec_opt = Adam::new(adam_cfg, model.decoder.param_count());

    let n = augmented.subsequences.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        // deterministic shuffle per epoch
        for i in (1..n).rev() {
            let j = r.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Subsequence> =
                chunk.iter().map(|&i| &augmented.subsequences[i]).collect();
            let out = bridge_loss(&model, &batch, cfg, &mut r)
                .map_err(|e| Error::Divergence(format!("epoch {epoch}: {e}")))?;
            enc_opt.step(&mut model.encoder, &out.encoder_grads)?;
            dec_opt.step(&mut model.decoder, &out.decoder_grads)?;
            epoch_loss += out.loss;
            n_batches += 1;
        }
        loss_curve.push(epoch_loss / n_batches as f64);
    }
    Ok(TrainedBridge { model, loss_curve })
}
