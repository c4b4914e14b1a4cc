//! Learnable surrogate simulator: (o_t, s_t) -> (r̂_t, ẑ_{t+1}).
//!
//! A shared tanh trunk feeds two linear heads: a utility head predicting
//! the (normalized) storage utility and a latent head predicting the next
//! reservoir state's embedding under the frozen state bridge. The latent
//! term is auxiliary supervision weighted by eta.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::BridgeModel;
use crate::env::{EnvConfig, LifecycleTrajectory};
use crate::error::{Error, Result};
use crate::nn::rng;
use crate::nn::{Activation, Adam, AdamConfig, Mlp, MlpGrads};
pub use crate::nn::Normalization;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub trunk: Mlp,
    pub utility_head: Mlp,
    pub latent_head: Mlp,
    pub eta: f64,
    pub obs_norm: Normalization,
    pub plan_norm: Normalization,
    pub util_norm: Normalization,
}

impl SurrogateModel {
    pub fn obs_dim(&self) -> usize {
        self.obs_norm.mean.len()
    }

    pub fn plan_dim(&self) -> usize {
        self.plan_norm.mean.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_head.output_dim()
    }

    fn input(&self, o: &[f64], s: &[f64]) -> Result<Vec<f64>> {
        if o.len() != self.obs_dim() {
            return Err(Error::DimMismatch {
                expected: self.obs_dim(),
                got: o.len(),
                context: "surrogate observation".into(),
            });
        }
        if s.len() != self.plan_dim() {
            return Err(Error::DimMismatch {
                expected: self.plan_dim(),
                got: s.len(),
                context: "surrogate plan".into(),
            });
        }
        let mut x = self.obs_norm.apply(o);
        x.extend(self.plan_norm.apply(s));
        Ok(x)
    }

    /// Forward pass in normalized utility units.
    pub fn predict_normalized(&self, o: &[f64], s: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = self.input(o, s)?;
        let h = self.trunk.forward(&x)?;
        Ok((self.utility_head.forward(&h)?, self.latent_head.forward(&h)?))
    }

    /// (r̂_t, ẑ_{t+1}) with the utility in raw units.
    pub fn simulate(&self, o: &[f64], s: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (r_norm, z) = self.predict_normalized(o, s)?;
        Ok((self.util_norm.invert(&r_norm), z))
    }

    /// Gradient of a scalar loss wrt the raw plan entries, given dL/dr̂ in
    /// normalized units. Parameters stay untouched (frozen use).
    pub fn plan_gradient(&self, o: &[f64], s: &[f64], dl_dr_norm: &[f64]) -> Result<Vec<f64>> {
        let x = self.input(o, s)?;
        let tcache = self.trunk.forward_cached(&x)?;
        let ucache = self.utility_head.forward_cached(tcache.output())?;
        let mut scratch_u = MlpGrads::zeros_like(&self.utility_head);
        let dl_dh = self.utility_head.backward(&ucache, dl_dr_norm, &mut scratch_u);
        let mut scratch_t = MlpGrads::zeros_like(&self.trunk);
        let dl_dx = self.trunk.backward(&tcache, &dl_dh, &mut scratch_t);
        let o_dim = self.obs_dim();
        Ok(dl_dx[o_dim..]
            .iter()
            .zip(&self.plan_norm.std)
            .map(|(&g, &std)| g / std)
            .collect())
    }

    /// Decode the predicted next-state latent back to a full observation,
    /// clamping the saturation channel to [0, 1] and pressure to >= 0.
    pub fn simulate_next_state(
        &self,
        state_bridge: &BridgeModel,
        env: &EnvConfig,
        o: &[f64],
        s: &[f64],
    ) -> Result<Vec<f64>> {
        let (_, z) = self.simulate(o, s)?;
        decode_state(state_bridge, env, &z)
    }

    pub fn param_vector(&self) -> Vec<f64> {
        let mut p = self.trunk.param_vector();
        p.extend(self.utility_head.param_vector());
        p.extend(self.latent_head.param_vector());
        p
    }
}

/// Decode a state latent to an observation with physical clamps applied.
pub fn decode_state(state_bridge: &BridgeModel, env: &EnvConfig, z: &[f64]) -> Result<Vec<f64>> {
    let mut o = state_bridge.decode(z)?;
    let n = env.n_cells();
    if o.len() != 2 * n {
        return Err(Error::DimMismatch {
            expected: 2 * n,
            got: o.len(),
            context: "decoded state".into(),
        });
    }
    for v in o[..n].iter_mut() {
        *v = v.max(0.0);
    }
    for v in o[n..].iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(o)
}

/// One training sample: step t of a trajectory with its successor state.
#[derive(Debug, Clone)]
pub struct TransitionSample {
    pub obs: Vec<f64>,
    pub plan: Vec<f64>,
    pub utility: Vec<f64>,
    pub next_obs: Vec<f64>,
}

/// All (t, t+1) pairs; the final step of each trajectory is excluded since
/// it has no successor.
pub fn transition_samples(trajectories: &[&LifecycleTrajectory]) -> Vec<TransitionSample> {
    let mut out = Vec::new();
    for traj in trajectories {
        for t in 0..traj.len().saturating_sub(1) {
            out.push(TransitionSample {
                obs: traj.states[t].clone(),
                plan: traj.plans[t].clone(),
                utility: traj.utilities[t].clone(),
                next_obs: traj.states[t + 1].clone(),
            });
        }
    }
    out
}

pub struct SurrogateLossOut {
    pub loss: f64,
    pub utility_term: f64,
    pub latent_term: f64,
    pub trunk_grads: MlpGrads,
    pub utility_grads: MlpGrads,
    pub latent_grads: MlpGrads,
}

/// Eq-style two-term loss: utility MSE plus eta times latent MSE, both in
/// per-element mean form, averaged over the batch. `z_targets` must be the
/// frozen bridge's encodings of each sample's next observation.
pub fn surrogate_loss_cached(
    model: &SurrogateModel,
    batch: &[&TransitionSample],
    z_targets: &[&[f64]],
) -> Result<SurrogateLossOut> {
    if batch.is_empty() || batch.len() != z_targets.len() {
        return Err(Error::RejectedInput("empty or misaligned surrogate batch".into()));
    }
    let r_dim = model.utility_head.output_dim();
    let d = model.latent_dim();
    let n = batch.len() as f64;
    // fixed-size sub-chunks evaluated in parallel, merged in chunk order,
    // so the result is bit-identical regardless of thread count
    const CHUNK: usize = 8;
    let paired: Vec<(&[&TransitionSample], &[&[f64]])> = batch
        .chunks(CHUNK)
        .zip(z_targets.chunks(CHUNK))
        .collect();
    let partials: Vec<Result<SamplePartial>> = paired
        .par_iter()
        .map(|(samples, zs)| chunk_partial(model, samples, zs, n, r_dim, d))
        .collect();
    let mut trunk_grads = MlpGrads::zeros_like(&model.trunk);
    let mut utility_grads = MlpGrads::zeros_like(&model.utility_head);
    let mut latent_grads = MlpGrads::zeros_like(&model.latent_head);
    let mut utility_term = 0.0;
    let mut latent_term = 0.0;
    for partial in partials {
        let p = partial?;
        trunk_grads.add(&p.trunk_grads);
        utility_grads.add(&p.utility_grads);
        latent_grads.add(&p.latent_grads);
        utility_term += p.utility_term;
        latent_term += p.latent_term;
    }
    let loss = utility_term + model.eta * latent_term;
    if !loss.is_finite() {
        return Err(Error::Divergence("non-finite surrogate loss".into()));
    }
    Ok(SurrogateLossOut {
        loss,
        utility_term,
        latent_term,
        trunk_grads,
        utility_grads,
        latent_grads,
    })
}

struct SamplePartial {
    utility_term: f64,
    latent_term: f64,
    trunk_grads: MlpGrads,
    utility_grads: MlpGrads,
    latent_grads: MlpGrads,
}

fn chunk_partial(
    model: &SurrogateModel,
    batch: &[&TransitionSample],
    z_targets: &[&[f64]],
    n: f64,
    r_dim: usize,
    d: usize,
) -> Result<SamplePartial> {
    let mut trunk_grads = MlpGrads::zeros_like(&model.trunk);
    let mut utility_grads = MlpGrads::zeros_like(&model.utility_head);
    let mut latent_grads = MlpGrads::zeros_like(&model.latent_head);
    let mut utility_term = 0.0;
    let mut latent_term = 0.0;
    for (sample, z_target) in batch.iter().zip(z_targets) {
        let x = model.input(&sample.obs, &sample.plan)?;
        let tcache = model.trunk.forward_cached(&x)?;
        let h = tcache.output();
        let ucache = model.utility_head.forward_cached(h)?;
        let lcache = model.latent_head.forward_cached(h)?;
        let r_target = model.util_norm.apply(&sample.utility);

        let mut dl_dr = vec![0.0; r_dim];
        for (k, (&pred, &tgt)) in ucache.output().iter().zip(&r_target).enumerate() {
            let diff = pred - tgt;
            utility_term += diff * diff / (n * r_dim as f64);
            dl_dr[k] = 2.0 * diff / (n * r_dim as f64);
        }
        let mut dl_dz = vec![0.0; d];
        for (k, (&pred, &tgt)) in lcache.output().iter().zip(z_target.iter()).enumerate() {
            let diff = pred - tgt;
            latent_term += diff * diff / (n * d as f64);
            dl_dz[k] = model.eta * 2.0 * diff / (n * d as f64);
        }
        let mut dl_dh = model.utility_head.backward(&ucache, &dl_dr, &mut utility_grads);
        let dl_dh2 = model.latent_head.backward(&lcache, &dl_dz, &mut latent_grads);
        for (a, b) in dl_dh.iter_mut().zip(&dl_dh2) {
            *a += b;
        }
        model.trunk.backward(&tcache, &dl_dh, &mut trunk_grads);
    }
    Ok(SamplePartial {
        utility_term,
        latent_term,
        trunk_grads,
        utility_grads,
        latent_grads,
    })
}

/// As [`surrogate_loss_cached`] but encoding the latent targets through the
/// frozen bridge on the fly.
pub fn surrogate_loss(
    model: &SurrogateModel,
    state_bridge: &BridgeModel,
    batch: &[&TransitionSample],
) -> Result<SurrogateLossOut> {
    let z: Vec<Vec<f64>> = batch
        .iter()
        .map(|s| state_bridge.encode(&s.next_obs))
        .collect::<Result<_>>()?;
    let z_refs: Vec<&[f64]> = z.iter().map(|v| v.as_slice()).collect();
    surrogate_loss_cached(model, batch, &z_refs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateTrainConfig {
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for SurrogateTrainConfig {
    fn default() -> Self {
        SurrogateTrainConfig {
            eta: 1e-3,
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            hidden: 128,
            seed: 0,
        }
    }
}

pub struct TrainedSurrogate {
    pub model: SurrogateModel,
    /// Held-out utility MSE (normalized units) per epoch.
    pub val_curve: Vec<f64>,
}

/// Held-out utility MSE in normalized units over all steps with successors.
pub fn validation_mse(model: &SurrogateModel, trajectories: &[&LifecycleTrajectory]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for traj in trajectories {
        for t in 0..traj.len().saturating_sub(1) {
            let (pred, _) = model.predict_normalized(&traj.states[t], &traj.plans[t])?;
            let target = model.util_norm.apply(&traj.utilities[t]);
            for (&p, &g) in pred.iter().zip(&target) {
                sum += (p - g) * (p - g);
                count += 1;
            }
        }
    }
    Ok(sum / count as f64)
}

/// Held-out utility MSE over closed-loop surrogate rollouts: starting from
/// each trajectory's first observation, states advance through the decoded
/// latent prediction while utilities are scored against ground truth in
/// normalized units. This is the regime the planner consumes, and the one
/// where the latent head matters.
pub fn rollout_utility_mse(
    model: &SurrogateModel,
    state_bridge: &BridgeModel,
    env: &EnvConfig,
    trajectories: &[&LifecycleTrajectory],
    horizon: usize,
) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::RejectedInput("rollout horizon must be positive".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for traj in trajectories {
        let mut o = traj.states[0].clone();
        for t in 0..traj.len() {
            // Re-anchor on the true state at the start of each window so errors
            // compound only within a window, not across the whole lifecycle.
            if t % horizon == 0 {
                o = traj.states[t].clone();
            }
            let (pred, _) = model.predict_normalized(&o, &traj.plans[t])?;
            let target = model.util_norm.apply(&traj.utilities[t]);
            for (&p, &g) in pred.iter().zip(&target) {
                sum += (p - g) * (p - g);
                count += 1;
            }
            if t + 1 < traj.len() {
                o = model.simulate_next_state(state_bridge, env, &o, &traj.plans[t])?;
            }
        }
    }
    if count == 0 {
        return Err(Error::RejectedInput("empty rollout evaluation set".into()));
    }
    let mse = sum / count as f64;
    if !mse.is_finite() {
        return Err(Error::Divergence("non-finite rollout utility mse".into()));
    }
    Ok(mse)
}

/// Train the surrogate against a frozen state bridge.
pub fn train_surrogate(
    train: &[&LifecycleTrajectory],
    val: &[&LifecycleTrajectory],
    state_bridge: &BridgeModel,
    cfg: &SurrogateTrainConfig,
) -> Result<TrainedSurrogate> {
    if cfg.eta < 0.0 {
        return Err(Error::Config("eta must be >= 0".into()));
    }
    let samples = transition_samples(train);
    if samples.is_empty() {
        return Err(Error::Config("no training transitions".into()));
    }
    let obs_dim = samples[0].obs.len();
    let plan_dim = samples[0].plan.len();
    let r_dim = samples[0].utility.len();
    let d = state_bridge.latent_dim;

    let obs_norm = Normalization::fit(samples.iter().map(|s| s.obs.as_slice()));
    let plan_norm = Normalization::fit(samples.iter().map(|s| s.plan.as_slice()));
    let util_norm = Normalization::fit(samples.iter().map(|s| s.utility.as_slice()));

    let mut r = rng::seeded(cfg.seed);
    let tanh2 = [Activation::Tanh, Activation::Tanh];
    let mut model = SurrogateModel {
        trunk: Mlp::new(&[obs_dim + plan_dim, cfg.hidden, cfg.hidden], &tanh2, &mut r)?,
        utility_head: Mlp::new(&[cfg.hidden, r_dim], &[Activation::Identity], &mut r)?,
        latent_head: Mlp::new(&[cfg.hidden, d], &[Activation::Identity], &mut r)?,
        eta: cfg.eta,
        obs_norm,
        plan_norm,
        util_norm,
    };

    // latent targets are fixed by the frozen bridge; encode once
    let z_targets: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| state_bridge.encode(&s.next_obs))
        .collect::<Result<_>>()?;

    let adam_cfg = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut opt_t = Adam::new(adam_cfg, model.trunk.param_count());
    let mut opt_u = Adam::new(adam_cfg, model.utility_head.param_count());
    let mut opt_l = Adam::new(adam_cfg, model.latent_head.param_count());

    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut val_curve = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, SurrogateModel)> = None;
    for epoch in 0..cfg.epochs {
        // cosine decay from the configured rate toward zero
        let lr = cfg.learning_rate
            * 0.5
            * (1.0 + (std::f64::consts::PI * epoch as f64 / cfg.epochs as f64).cos());
        opt_t.set_lr(lr);
        opt_u.set_lr(lr);
        opt_l.set_lr(lr);
        for i in (1..n).rev() {
            let j = r.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TransitionSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let z_refs: Vec<&[f64]> = chunk.iter().map(|&i| z_targets[i].as_slice()).collect();
            let out = surrogate_loss_cached(&model, &batch, &z_refs)
                .map_err(|e| Error::Divergence(format!("epoch {epoch}: {e}")))?;
            opt_t.step(&mut model.trunk, &out.trunk_grads)?;
            opt_u.step(&mut model.utility_head, &out.utility_grads)?;
            opt_l.step(&mut model.latent_head, &out.latent_grads)?;
        }
        let mse = if val.is_empty() {
            f64::NAN
        } else {
            validation_mse(&model, val)?
        };
        val_curve.push(mse);
        if best.is_none() || mse < best.as_ref().map(|(m, _)| *m).unwrap() {
            best = Some((mse, model.clone()));
        }
    }
    // keep the epoch with the best held-out MSE, not the last one
    if let Some((_, snapshot)) = best {
        model = snapshot;
    }
    Ok(TrainedSurrogate { model, val_curve })
}
