//! Goal-conditioned injection planner.
//!
//! The planner maps [standardized state ‖ flattened guidance window ‖ t/T]
//! to a bounded per-well rate vector. The guidance window is the utility
//! bridge's latent interpolation from the last realized utility toward a
//! fixed target r*, so the planner always sees the path it is supposed to
//! track; training minimizes the gap between the frozen surrogate's
//! predicted utility and the decoded desired utility.

use serde::{Deserialize, Serialize};

use crate::bridge::{bridge_interpolate, BridgeModel};
use crate::env::{
    self, EnvConfig, InjectionPlan, LifecycleTrajectory, ReservoirState, UTILITY_DIM,
};
use crate::error::{Error, Result};
use crate::nn::rng;
use crate::nn::{Activation, Adam, AdamConfig, Mlp, MlpGrads};
use crate::surrogate::{decode_state, Normalization, SurrogateModel};

/// Componentwise utility target r*: maxima for injection-side channels,
/// minima for production-side channels, training mean for field pressure.
pub fn compute_target(trajectories: &[&LifecycleTrajectory]) -> Result<Vec<f64>> {
    let mut any = false;
    let mut target = vec![0.0; UTILITY_DIM];
    let mut fpr_sum = 0.0;
    let mut count = 0usize;
    for traj in trajectories {
        for r in &traj.utilities {
            if !any {
                target[env::FGIR] = r[env::FGIR];
                target[env::FGIT] = r[env::FGIT];
                target[env::FGPR] = r[env::FGPR];
                target[env::FGPT] = r[env::FGPT];
                any = true;
            } else {
                target[env::FGIR] = target[env::FGIR].max(r[env::FGIR]);
                target[env::FGIT] = target[env::FGIT].max(r[env::FGIT]);
                target[env::FGPR] = target[env::FGPR].min(r[env::FGPR]);
                target[env::FGPT] = target[env::FGPT].min(r[env::FGPT]);
            }
            fpr_sum += r[env::FPR];
            count += 1;
        }
    }
    if !any {
        return Err(Error::Config("empty dataset for utility target".into()));
    }
    target[env::FPR] = fpr_sum / count as f64;
    Ok(target)
}

/// W latent guidance entries: the bridge path from encode(r_prev) to
/// encode(r_star) sampled at t' = t..t+W-1, clamped at the horizon.
pub fn guidance_window(
    utility_bridge: &BridgeModel,
    r_prev: &[f64],
    r_star: &[f64],
    t: usize,
    horizon: usize,
    window: usize,
) -> Result<Vec<Vec<f64>>> {
    if t > horizon {
        return Err(Error::RejectedInput(format!(
            "guidance time t={t} outside [0, {horizon}]"
        )));
    }
    let z_start = utility_bridge.encode(r_prev)?;
    let z_goal = utility_bridge.encode(r_star)?;
    (0..window)
        .map(|k| bridge_interpolate(&z_start, &z_goal, (t + k).min(horizon), horizon))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerModel {
    pub net: Mlp,
    pub window: usize,
    pub max_rate: f64,
    /// Utility target r*.
    pub target: Vec<f64>,
    /// When false the guidance window is replaced with zeros everywhere
    /// (the no-guidance ablation arm).
    pub guided: bool,
    pub obs_norm: Normalization,
}

impl PlannerModel {
    pub fn new<R: rand::Rng>(
        obs_dim: usize,
        latent_dim: usize,
        plan_dim: usize,
        window: usize,
        max_rate: f64,
        target: Vec<f64>,
        guided: bool,
        obs_norm: Normalization,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let sizes = [obs_dim + window * latent_dim + 1, hidden, hidden, plan_dim];
        let acts = [Activation::Tanh, Activation::Tanh, Activation::Identity];
        Ok(PlannerModel {
            net: Mlp::new(&sizes, &acts, rng)?,
            window,
            max_rate,
            target,
            guided,
            obs_norm,
        })
    }

    fn input(&self, o: &[f64], window: &[Vec<f64>], t: usize, horizon: usize) -> Result<Vec<f64>> {
        let mut x = self.obs_norm.apply(o);
        if window.len() != self.window {
            return Err(Error::DimMismatch {
                expected: self.window,
                got: window.len(),
                context: "guidance window".into(),
            });
        }
        for entry in window {
            if self.guided {
                x.extend_from_slice(entry);
            } else {
                x.extend(std::iter::repeat(0.0).take(entry.len()));
            }
        }
        x.push(t as f64 / horizon as f64);
        Ok(x)
    }

    /// Deterministic bounded plan in [0, max_rate]^{|s|}.
    pub fn plan(&self, o: &[f64], window: &[Vec<f64>], t: usize, horizon: usize) -> Result<InjectionPlan> {
        let x = self.input(o, window, t, horizon)?;
        let y = self.net.forward(&x)?;
        Ok(InjectionPlan(y.iter().map(|&v| self.max_rate * sigmoid(v)).collect()))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub struct PlannerLossOut {
    pub loss: f64,
    pub plan: InjectionPlan,
    pub grads: MlpGrads,
}

/// Tracking loss at one step: MSE (normalized utility units) between the
/// frozen surrogate's prediction for the emitted plan and the decoded
/// desired utility on the bridge path. Gradients reach only the planner.
pub fn planner_loss(
    planner: &PlannerModel,
    surrogate: &SurrogateModel,
    utility_bridge: &BridgeModel,
    o: &[f64],
    r_prev: &[f64],
    t: usize,
    horizon: usize,
) -> Result<PlannerLossOut> {
    let window = guidance_window(utility_bridge, r_prev, &planner.target, t, horizon, planner.window)?;
    let x = planner.input(o, &window, t, horizon)?;
    let cache = planner.net.forward_cached(&x)?;
    let raw = cache.output();
    let plan: Vec<f64> = raw.iter().map(|&v| planner.max_rate * sigmoid(v)).collect();

    // desired utility: decode the bridge path point at t, then normalize
    let z_start = utility_bridge.encode(r_prev)?;
    let z_goal = utility_bridge.encode(&planner.target)?;
    let z_desired = bridge_interpolate(&z_start, &z_goal, t, horizon)?;
    let desired_raw = utility_bridge.decode(&z_desired)?;
    let desired = surrogate.util_norm.apply(&desired_raw);

    let (pred, _) = surrogate.predict_normalized(o, &plan)?;
    let r_dim = pred.len();
    let mut loss = 0.0;
    let mut dl_dr = vec![0.0; r_dim];
    for (k, (&p, &d)) in pred.iter().zip(&desired).enumerate() {
        let diff = p - d;
        loss += diff * diff / r_dim as f64;
        dl_dr[k] = 2.0 * diff / r_dim as f64;
    }
    if !loss.is_finite() {
        return Err(Error::Divergence("non-finite planner loss".into()));
    }

    // chain: surrogate input gradient -> squash derivative -> planner net
    let dl_dplan = surrogate.plan_gradient(o, &plan, &dl_dr)?;
    let dl_draw: Vec<f64> = dl_dplan
        .iter()
        .zip(raw)
        .map(|(&g, &v)| {
            let s = sigmoid(v);
            g * planner.max_rate * s * (1.0 - s)
        })
        .collect();
    let mut grads = MlpGrads::zeros_like(&planner.net);
    planner.net.backward(&cache, &dl_draw, &mut grads);
    Ok(PlannerLossOut {
        loss,
        plan: InjectionPlan(plan),
        grads,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RolloutMode {
    /// States advance through the frozen surrogate's decoded latent; the
    /// environment is never queried.
    Surrogate,
    /// States advance through the toy physics.
    Env,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub window: usize,
    pub hidden: usize,
    pub rollout_mode: RolloutMode,
    pub guided: bool,
    pub seed: u64,
}

impl Default for PlannerTrainConfig {
    fn default() -> Self {
        PlannerTrainConfig {
            epochs: 10,
            learning_rate: 1e-3,
            window: 8,
            hidden: 64,
            rollout_mode: RolloutMode::Surrogate,
            guided: true,
            seed: 0,
        }
    }
}

pub struct TrainedPlanner {
    pub model: PlannerModel,
    /// Mean tracking loss per epoch.
    pub loss_curve: Vec<f64>,
    /// env_step invocations during training; zero in surrogate mode.
    pub env_calls: usize,
}

/// Train the planner by rolling lifecycles from each training start state.
/// Gradients accumulate over one lifecycle then apply as a single step.
pub fn train_planner(
    train: &[&LifecycleTrajectory],
    surrogate: &SurrogateModel,
    state_bridge: &BridgeModel,
    utility_bridge: &BridgeModel,
    env_cfg: &EnvConfig,
    cfg: &PlannerTrainConfig,
) -> Result<TrainedPlanner> {
    if train.is_empty() {
        return Err(Error::Config("no planner training trajectories".into()));
    }
    let target = compute_target(train)?;
    let mut r = rng::seeded(cfg.seed);
    let mut planner = PlannerModel::new(
        env_cfg.state_dim(),
        utility_bridge.latent_dim,
        env_cfg.plan_dim(),
        cfg.window,
        env_cfg.max_rate,
        target,
        cfg.guided,
        surrogate.obs_norm.clone(),
        cfg.hidden,
        &mut r,
    )?;
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        },
        planner.net.param_count(),
    );
    let horizon = env_cfg.horizon;
    let starts: Vec<Vec<f64>> = train.iter().map(|t| t.states[0].clone()).collect();
    let mut env_calls = 0usize;
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let mut n_steps = 0usize;
        for start in &starts {
            let mut o = start.clone();
            let mut env_state = ReservoirState::from_observation(start, env_cfg)?;
            let mut r_prev = vec![0.0; UTILITY_DIM];
            let mut grads = MlpGrads::zeros_like(&planner.net);
            for t in 0..horizon {
                let out = planner_loss(&planner, surrogate, utility_bridge, &o, &r_prev, t, horizon)
                    .map_err(|e| Error::Divergence(format!("epoch {epoch}, step {t}: {e}")))?;
                epoch_loss += out.loss;
                n_steps += 1;
                grads.add(&out.grads);
                match cfg.rollout_mode {
                    RolloutMode::Surrogate => {
                        let (r_hat, z_next) = surrogate.simulate(&o, &out.plan.0)?;
                        o = decode_state(state_bridge, env_cfg, &z_next)?;
                        r_prev = r_hat;
                    }
                    RolloutMode::Env => {
                        let (next, utility) = env::env_step(&env_state, &out.plan, env_cfg)?;
                        env_calls += 1;
                        env_state = next;
                        o = env_state.observation();
                        r_prev = utility;
                    }
                }
            }
            grads.scale(1.0 / horizon as f64);
            opt.step(&mut planner.net, &grads)?;
        }
        loss_curve.push(epoch_loss / n_steps as f64);
    }
    Ok(TrainedPlanner {
        model: planner,
        loss_curve,
        env_calls,
    })
}

/// Closed-loop rollout of a trained planner, in the environment or through
/// the frozen surrogate, rebuilding the guidance window from each realized
/// utility (r_{-1} is the zero utility).
pub fn rollout(
    planner: &PlannerModel,
    surrogate: &SurrogateModel,
    state_bridge: &BridgeModel,
    utility_bridge: &BridgeModel,
    env_cfg: &EnvConfig,
    mode: RolloutMode,
) -> Result<LifecycleTrajectory> {
    let horizon = env_cfg.horizon;
    let mut env_state = env::env_init(env_cfg)?;
    let mut o = env_state.observation();
    let mut r_prev = vec![0.0; UTILITY_DIM];
    let mut traj = LifecycleTrajectory {
        states: Vec::with_capacity(horizon),
        plans: Vec::with_capacity(horizon),
        utilities: Vec::with_capacity(horizon),
    };
    for t in 0..horizon {
        let window = guidance_window(utility_bridge, &r_prev, &planner.target, t, horizon, planner.window)?;
        let plan = planner.plan(&o, &window, t, horizon)?;
        traj.states.push(o.clone());
        match mode {
            RolloutMode::Env => {
                let (next, utility) = env::env_step(&env_state, &plan, env_cfg)?;
                env_state = next;
                o = env_state.observation();
                r_prev = utility.clone();
                traj.utilities.push(utility);
            }
            RolloutMode::Surrogate => {
                let (r_hat, z_next) = surrogate.simulate(&o, &plan.0)?;
                o = decode_state(state_bridge, env_cfg, &z_next)?;
                r_prev = r_hat.clone();
                traj.utilities.push(r_hat);
            }
        }
        traj.plans.push(plan.0);
    }
    Ok(traj)
}
