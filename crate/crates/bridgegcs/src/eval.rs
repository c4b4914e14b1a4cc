//! Metrics, baselines, sweeps, and ablation comparisons.
//!
//! SPI = mean(FGIR) - mean(FGPR) + (FGIT - FGPT)/FGIT - popstd(FPR);
//! higher is better. Lifecycles with zero cumulative injection have an
//! undefined retention ratio and are excluded with a count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{
    bridge_interpolate, train_bridge, AugmentConfig, BridgeModel, BridgeTrainConfig, BridgeVariant,
};
use crate::env::{
    self, EnvConfig, LifecycleTrajectory, FGIR, FGIT, FGPR, FGPT, FPR,
};
use crate::error::{Error, Result};
use crate::nn::{cosine_sim, rng};
use crate::planner::{train_planner, PlannerTrainConfig, RolloutMode};
use crate::surrogate::{train_surrogate, SurrogateTrainConfig, TrainedSurrogate};

/// Storage Performance Index of one lifecycle's utility sequence.
pub fn spi(utilities: &[Vec<f64>], _dt: f64) -> Result<f64> {
    if utilities.len() < 2 {
        return Err(Error::RejectedInput("SPI needs >= 2 steps".into()));
    }
    let n = utilities.len() as f64;
    let last = utilities.last().unwrap();
    if last[FGIT] <= 0.0 {
        return Err(Error::UndefinedRetention);
    }
    let mean_fgir = utilities.iter().map(|r| r[FGIR]).sum::<f64>() / n;
    let mean_fgpr = utilities.iter().map(|r| r[FGPR]).sum::<f64>() / n;
    let retention = (last[FGIT] - last[FGPT]) / last[FGIT];
    let mean_fpr = utilities.iter().map(|r| r[FPR]).sum::<f64>() / n;
    let sigma_fpr = (utilities
        .iter()
        .map(|r| (r[FPR] - mean_fpr) * (r[FPR] - mean_fpr))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(mean_fgir - mean_fgpr + retention - sigma_fpr)
}

/// Mean squared componentwise error over all steps.
pub fn utility_mse(predictions: &[Vec<f64>], ground_truth: &[Vec<f64>]) -> Result<f64> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::DimMismatch {
            expected: ground_truth.len(),
            got: predictions.len(),
            context: "utility sequences".into(),
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, g) in predictions.iter().zip(ground_truth) {
        if p.len() != g.len() {
            return Err(Error::DimMismatch {
                expected: g.len(),
                got: p.len(),
                context: "utility vector".into(),
            });
        }
        for (&a, &b) in p.iter().zip(g) {
            sum += (a - b) * (a - b);
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Per-lifecycle SPI values plus a component breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpiReport {
    pub per_lifecycle: Vec<f64>,
    pub mean_spi: f64,
    pub excluded: usize,
    pub mean_fgir: f64,
    pub mean_fgpr: f64,
    pub mean_retention: f64,
    pub mean_sigma_fpr: f64,
}

impl SpiReport {
    /// Summarize finished lifecycles; those with undefined retention are
    /// excluded and counted.
    pub fn from_trajectories(trajectories: &[&LifecycleTrajectory], dt: f64) -> Self {
        let mut per_lifecycle = Vec::new();
        let mut excluded = 0usize;
        let mut comp = [0.0f64; 4];
        for traj in trajectories {
            match spi(&traj.utilities, dt) {
                Ok(v) => {
                    per_lifecycle.push(v);
                    let n = traj.utilities.len() as f64;
                    let last = traj.utilities.last().unwrap();
                    comp[0] += traj.utilities.iter().map(|r| r[FGIR]).sum::<f64>() / n;
                    comp[1] += traj.utilities.iter().map(|r| r[FGPR]).sum::<f64>() / n;
                    comp[2] += (last[FGIT] - last[FGPT]) / last[FGIT];
                    let mean_fpr = traj.utilities.iter().map(|r| r[FPR]).sum::<f64>() / n;
                    comp[3] += (traj
                        .utilities
                        .iter()
                        .map(|r| (r[FPR] - mean_fpr) * (r[FPR] - mean_fpr))
                        .sum::<f64>()
                        / n)
                        .sqrt();
                }
                Err(Error::UndefinedRetention) => excluded += 1,
                Err(_) => excluded += 1,
            }
        }
        let k = per_lifecycle.len() as f64;
        let mean_spi = if per_lifecycle.is_empty() {
            f64::NAN
        } else {
            per_lifecycle.iter().sum::<f64>() / k
        };
        SpiReport {
            per_lifecycle,
            mean_spi,
            excluded,
            mean_fgir: comp[0] / k.max(1.0),
            mean_fgpr: comp[1] / k.max(1.0),
            mean_retention: comp[2] / k.max(1.0),
            mean_sigma_fpr: comp[3] / k.max(1.0),
        }
    }
}

/// Uniform-random bounded plans rolled in the environment, `repeats`
/// repetitions of `n_lifecycles` each; deterministic given seed.
pub fn random_policy_eval(
    config: &EnvConfig,
    n_lifecycles: usize,
    repeats: usize,
    seed: u64,
) -> Result<SpiReport> {
    if n_lifecycles < 1 || repeats < 1 {
        return Err(Error::Config("n_lifecycles and repeats must be >= 1".into()));
    }
    config.validate()?;
    let total = n_lifecycles * repeats;
    let results: Vec<Result<LifecycleTrajectory>> = (0..total)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::derive(seed, i as u64);
            let mut pol =
                |_t: usize, _s: &env::ReservoirState| env::random_plan(config, &mut r);
            env::rollout_policy(config, &mut pol)
        })
        .collect();
    let mut kept = Vec::new();
    let mut diverged = 0usize;
    for res in results {
        match res {
            Ok(t) => kept.push(t),
            Err(Error::PhysicsDivergence(_)) => diverged += 1,
            Err(e) => return Err(e),
        }
    }
    let refs: Vec<&LifecycleTrajectory> = kept.iter().collect();
    let mut report = SpiReport::from_trajectories(&refs, config.dt);
    report.excluded += diverged;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    SurrogateEta0,
    PlannerNoGuidance,
}

/// One paired seed of an ablation: treatment keeps the full method,
/// control removes the ablated factor, everything else shared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub treatment: f64,
    pub control: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub kind: AblationKind,
    /// Metric name: "rollout_utility_mse" (lower is better) or "spi" (higher).
    pub metric: String,
    pub rows: Vec<AblationRow>,
    pub treatment_wins: usize,
}

/// Everything the ablation/sweep runners need in one place.
pub struct EvalContext<'a> {
    pub env: &'a EnvConfig,
    pub train: Vec<&'a LifecycleTrajectory>,
    pub val: Vec<&'a LifecycleTrajectory>,
    pub test: Vec<&'a LifecycleTrajectory>,
    pub state_bridge: &'a BridgeModel,
    pub utility_bridge: &'a BridgeModel,
    pub surrogate_cfg: SurrogateTrainConfig,
    pub planner_cfg: PlannerTrainConfig,
}

/// Held-out utility MSE with the surrogate rolled out closed-loop (latent
/// head + bridge decoder propagate the state), re-anchored on the true state
/// every guidance-window steps. One-step MSE never exercises the latent head,
/// so this is the metric on which the auxiliary latent loss matters.
fn test_mse(surrogate: &TrainedSurrogate, ctx: &EvalContext) -> Result<f64> {
    crate::surrogate::rollout_utility_mse(
        &surrogate.model,
        ctx.state_bridge,
        ctx.env,
        &ctx.test,
        ctx.planner_cfg.window,
    )
}

/// eta = configured value vs eta = 0, paired per seed on held-out
/// closed-loop utility MSE.
pub fn ablation_surrogate_eta0(ctx: &EvalContext, seeds: &[u64]) -> Result<AblationReport> {
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut cfg = ctx.surrogate_cfg.clone();
        cfg.seed = seed;
        let treatment = train_surrogate(&ctx.train, &ctx.val, ctx.state_bridge, &cfg)?;
        let mut cfg0 = cfg.clone();
        cfg0.eta = 0.0;
        let control = train_surrogate(&ctx.train, &ctx.val, ctx.state_bridge, &cfg0)?;
        rows.push(AblationRow {
            seed,
            treatment: test_mse(&treatment, ctx)?,
            control: test_mse(&control, ctx)?,
        });
    }
    let treatment_wins = rows.iter().filter(|r| r.treatment <= r.control).count();
    Ok(AblationReport {
        kind: AblationKind::SurrogateEta0,
        metric: "rollout_utility_mse".into(),
        rows,
        treatment_wins,
    })
}

/// Bridge-guided planner vs zero-guidance planner, paired per seed on
/// env-rollout SPI.
pub fn ablation_planner_guidance(ctx: &EvalContext, seeds: &[u64]) -> Result<AblationReport> {
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut surr_cfg = ctx.surrogate_cfg.clone();
        surr_cfg.seed = seed;
        let surrogate = train_surrogate(&ctx.train, &ctx.val, ctx.state_bridge, &surr_cfg)?;
        let arm = |guided: bool| -> Result<f64> {
            let mut cfg = ctx.planner_cfg.clone();
            cfg.seed = seed;
            cfg.guided = guided;
            let planner = train_planner(
                &ctx.train,
                &surrogate.model,
                ctx.state_bridge,
                ctx.utility_bridge,
                ctx.env,
                &cfg,
            )?;
            let traj = crate::planner::rollout(
                &planner.model,
                &surrogate.model,
                ctx.state_bridge,
                ctx.utility_bridge,
                ctx.env,
                RolloutMode::Env,
            )?;
            spi(&traj.utilities, ctx.env.dt)
        };
        rows.push(AblationRow {
            seed,
            treatment: arm(true)?,
            control: arm(false)?,
        });
    }
    let treatment_wins = rows.iter().filter(|r| r.treatment > r.control).count();
    Ok(AblationReport {
        kind: AblationKind::PlannerNoGuidance,
        metric: "spi".into(),
        rows,
        treatment_wins,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Alpha,
    Eta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub metric: Option<f64>,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub param: SweepParam,
    pub points: Vec<SweepPoint>,
    pub argbest: Option<f64>,
}

/// Mean cosine similarity between bridge-interpolated-and-decoded held-out
/// trajectories and the ground truth, in decoded (original) space.
pub fn bridge_trajectory_similarity(
    bridge: &BridgeModel,
    held_out: &[&LifecycleTrajectory],
    extract: impl Fn(&LifecycleTrajectory) -> &[Vec<f64>],
) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for traj in held_out {
        let seq = extract(traj);
        let last = seq.len() - 1;
        let z0 = bridge.encode(&seq[0])?;
        let z_end = bridge.encode(&seq[last])?;
        for (t, x) in seq.iter().enumerate() {
            let z = bridge_interpolate(&z0, &z_end, t, last)?;
            let decoded = bridge.decode(&z)?;
            sum += cosine_sim(&decoded, x);
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Grid sweep over alpha (bridge noise scale; metric = decoded-space cosine
/// similarity, higher better) or eta (surrogate auxiliary weight; metric =
/// held-out closed-loop utility MSE, lower better). A diverging grid point is marked
/// failed and the sweep continues.
pub fn sweep(
    param: SweepParam,
    grid: &[f64],
    ctx: &EvalContext,
    bridge_aug: &AugmentConfig,
    bridge_cfg: &BridgeTrainConfig,
    seed: u64,
) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid must be nonempty".into()));
    }
    let mut points = Vec::with_capacity(grid.len());
    for (i, &value) in grid.iter().enumerate() {
        let metric = match param {
            SweepParam::Alpha => {
                let mut aug = bridge_aug.clone();
                aug.alpha = value;
                aug.seed = seed.wrapping_add(i as u64);
                let states: Vec<&[Vec<f64>]> =
                    ctx.train.iter().map(|t| t.states.as_slice()).collect();
                train_bridge(&states, BridgeVariant::State, &aug, bridge_cfg).and_then(|tb| {
                    bridge_trajectory_similarity(&tb.model, &ctx.test, |t| &t.states)
                })
            }
            SweepParam::Eta => {
                let mut cfg = ctx.surrogate_cfg.clone();
                cfg.eta = value;
                cfg.seed = seed;
                train_surrogate(&ctx.train, &ctx.val, ctx.state_bridge, &cfg)
                    .and_then(|ts| test_mse(&ts, ctx))
            }
        };
        match metric {
            Ok(m) => points.push(SweepPoint {
                value,
                metric: Some(m),
                failed: false,
            }),
            Err(Error::Divergence(_)) => points.push(SweepPoint {
                value,
                metric: None,
                failed: true,
            }),
            Err(e) => return Err(e),
        }
    }
    let argbest = points
        .iter()
        .filter_map(|p| p.metric.map(|m| (p.value, m)))
        .reduce(|best, cur| {
            let better = match param {
                SweepParam::Alpha => cur.1 > best.1,
                SweepParam::Eta => cur.1 < best.1,
            };
            if better {
                cur
            } else {
                best
            }
        })
        .map(|(v, _)| v);
    Ok(SweepReport {
        param,
        points,
        argbest,
    })
}
