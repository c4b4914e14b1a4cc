//! Acceptance suite: nine criteria covering bridge statistics, gradient
//! oracles, metric exactness, environment invariants, the directional
//! training claims, determinism/persistence, and guidance properties.
//!
//! Everything runs inside one test function so the criteria execute
//! sequentially (several share trained artifacts, and the runtime budgets
//! assume exclusive use of the machine). Each criterion prints one
//! `criterion N ... PASS/FAIL` line; run with `--nocapture` to see the
//! lines for passing runs too.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;

use bridgegcs::bridge::{
    bridge_interpolate, bridge_loss, bridge_sample, AugmentConfig, BridgeModel,
    BridgeTrainConfig, BridgeVariant, Subsequence,
};
use bridgegcs::config::RunConfig;
use bridgegcs::env::{
    self, env_init, env_step, generate_dataset, random_plan, rollout_policy, select,
    split_dataset, EnvConfig, InjectionPlan, LifecycleTrajectory, Policy, FGIR, FGIT,
    UTILITY_DIM,
};
use bridgegcs::eval::{random_policy_eval, spi};
use bridgegcs::nn::{rng, Activation, Mlp, Normalization};
use bridgegcs::planner::{
    guidance_window, planner_loss, rollout, train_planner, PlannerModel, PlannerTrainConfig,
    RolloutMode,
};
use bridgegcs::surrogate::{
    rollout_utility_mse, surrogate_loss, train_surrogate, SurrogateModel, SurrogateTrainConfig,
    TransitionSample,
};
use bridgegcs::{pipeline, Error};

type CriterionResult = Result<String, String>;

fn check(cond: bool, detail: String) -> CriterionResult {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- criterion 1

/// Bridge sample statistics: for (T, t) in {(120,60), (4,1), (60,15)} with
/// fixed endpoints in latent dimension 8, 10^4 draws have per-dimension
/// empirical mean within 1% of the endpoint scale and variance within 5%
/// of t(T-t)/T. Budget: 10 s.
fn criterion_1() -> CriterionResult {
    let start = Instant::now();
    let d = 8;
    let mut r = rng::seeded(41);
    let z0: Vec<f64> = (0..d).map(|_| r.random_range(12.0..24.0)).collect();
    let z_end: Vec<f64> = (0..d).map(|_| r.random_range(-24.0..-12.0)).collect();
    let scale = z0
        .iter()
        .chain(&z_end)
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    let n = 10_000usize;
    let mut worst_mean = 0.0f64;
    let mut worst_var = 0.0f64;
    for &(horizon, t) in &[(120usize, 60usize), (4, 1), (60, 15)] {
        let expected_mean = bridge_interpolate(&z0, &z_end, t, horizon).unwrap();
        let expected_var = (t * (horizon - t)) as f64 / horizon as f64;
        let mut sum = vec![0.0; d];
        let mut sumsq = vec![0.0; d];
        for _ in 0..n {
            let z = bridge_sample(&z0, &z_end, t, horizon, &mut r).unwrap();
            for (k, &v) in z.iter().enumerate() {
                sum[k] += v;
                sumsq[k] += v * v;
            }
        }
        for k in 0..d {
            let m = sum[k] / n as f64;
            let v = sumsq[k] / n as f64 - m * m;
            worst_mean = worst_mean.max((m - expected_mean[k]).abs() / scale);
            worst_var = worst_var.max((v - expected_var).abs() / expected_var);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst_mean < 0.01 && worst_var < 0.05 && secs < 10.0,
        format!(
            "max |mean err|/scale {worst_mean:.5} (tol 0.01), max var rel err {worst_var:.4} \
             (tol 0.05), {secs:.1}s (budget 10s)"
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

/// Central finite difference of `f` at the parameter vector `params`,
/// compared against `analytic`; returns the max relative error over all
/// parameters (denominator floored at 1e-6 times the gradient scale).
fn fd_max_rel_err(
    params: &[f64],
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let h = 1e-5;
    let gmax = analytic.iter().fold(0.0f64, |m, &g| m.max(g.abs()));
    let floor = (gmax * 1e-6).max(1e-12);
    let mut worst = 0.0f64;
    let mut p = params.to_vec();
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let lp = f(&p);
        p[i] = orig - h;
        let lm = f(&p);
        p[i] = orig;
        let fd = (lp - lm) / (2.0 * h);
        let denom = analytic[i].abs().max(fd.abs()).max(floor);
        worst = worst.max((analytic[i] - fd).abs() / denom);
    }
    worst
}

fn small_bridge<R: Rng>(input_dim: usize, latent_dim: usize, r: &mut R) -> BridgeModel {
    BridgeModel::new(BridgeVariant::State, input_dim, latent_dim, 4, r).unwrap()
}

fn bridge_fd(seed: u64) -> f64 {
    let mut r = rng::seeded(seed);
    let model = small_bridge(3, 2, &mut r);
    // two sources so the contrastive term is active
    let subs: Vec<Subsequence> = (0..3)
        .map(|i| Subsequence {
            source: i % 2,
            steps: (0..4)
                .map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect())
                .collect(),
        })
        .collect();
    let batch: Vec<&Subsequence> = subs.iter().collect();
    let cfg = BridgeTrainConfig {
        negatives: 2,
        ..BridgeTrainConfig::default()
    };
    // the anchor/negative picks depend only on the rng stream, so reseeding
    // per evaluation keeps them identical across perturbations
    let eval = |m: &BridgeModel| {
        bridge_loss(m, &batch, &cfg, &mut rng::seeded(seed ^ 0x9e37))
            .unwrap()
    };
    let out = eval(&model);
    let mut analytic = out.encoder_grads.flat();
    analytic.extend(out.decoder_grads.flat());
    let mut params = model.encoder.param_vector();
    let n_enc = params.len();
    params.extend(model.decoder.param_vector());
    fd_max_rel_err(&params, &analytic, |p| {
        let mut m = model.clone();
        m.encoder.set_param_vector(&p[..n_enc]).unwrap();
        m.decoder.set_param_vector(&p[n_enc..]).unwrap();
        eval(&m).loss
    })
}

fn small_surrogate<R: Rng>(
    obs_dim: usize,
    plan_dim: usize,
    r_dim: usize,
    d: usize,
    eta: f64,
    r: &mut R,
) -> SurrogateModel {
    let tanh2 = [Activation::Tanh, Activation::Tanh];
    SurrogateModel {
        trunk: Mlp::new(&[obs_dim + plan_dim, 4, 4], &tanh2, r).unwrap(),
        utility_head: Mlp::new(&[4, r_dim], &[Activation::Identity], r).unwrap(),
        latent_head: Mlp::new(&[4, d], &[Activation::Identity], r).unwrap(),
        eta,
        obs_norm: Normalization::identity(obs_dim),
        plan_norm: Normalization::identity(plan_dim),
        util_norm: Normalization::identity(r_dim),
    }
}

fn surrogate_fd(seed: u64) -> f64 {
    let mut r = rng::seeded(seed);
    let (obs_dim, plan_dim, r_dim, d) = (3, 2, 2, 2);
    let model = small_surrogate(obs_dim, plan_dim, r_dim, d, 0.7, &mut r);
    let state_bridge = small_bridge(obs_dim, d, &mut r);
    let samples: Vec<TransitionSample> = (0..4)
        .map(|_| TransitionSample {
            obs: (0..obs_dim).map(|_| r.random_range(-1.0..1.0)).collect(),
            plan: (0..plan_dim).map(|_| r.random_range(0.0..1.0)).collect(),
            utility: (0..r_dim).map(|_| r.random_range(-1.0..1.0)).collect(),
            next_obs: (0..obs_dim).map(|_| r.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    let batch: Vec<&TransitionSample> = samples.iter().collect();
    let out = surrogate_loss(&model, &state_bridge, &batch).unwrap();
    let mut analytic = out.trunk_grads.flat();
    analytic.extend(out.utility_grads.flat());
    analytic.extend(out.latent_grads.flat());
    let mut params = model.trunk.param_vector();
    let n_t = params.len();
    params.extend(model.utility_head.param_vector());
    let n_u = params.len();
    params.extend(model.latent_head.param_vector());
    fd_max_rel_err(&params, &analytic, |p| {
        let mut m = model.clone();
        m.trunk.set_param_vector(&p[..n_t]).unwrap();
        m.utility_head.set_param_vector(&p[n_t..n_u]).unwrap();
        m.latent_head.set_param_vector(&p[n_u..]).unwrap();
        surrogate_loss(&m, &state_bridge, &batch).unwrap().loss
    })
}

fn planner_fd(seed: u64) -> f64 {
    let mut r = rng::seeded(seed);
    let (obs_dim, plan_dim, r_dim, d, d_u, window) = (3, 2, 2, 2, 2, 2);
    let surrogate = small_surrogate(obs_dim, plan_dim, r_dim, d, 0.7, &mut r);
    let utility_bridge = small_bridge(r_dim, d_u, &mut r);
    let target: Vec<f64> = (0..r_dim).map(|_| r.random_range(-1.0..1.0)).collect();
    let planner = PlannerModel::new(
        obs_dim,
        d_u,
        plan_dim,
        window,
        1.0,
        target,
        true,
        Normalization::identity(obs_dim),
        4,
        &mut r,
    )
    .unwrap();
    let o: Vec<f64> = (0..obs_dim).map(|_| r.random_range(-1.0..1.0)).collect();
    let r_prev: Vec<f64> = (0..r_dim).map(|_| r.random_range(-1.0..1.0)).collect();
    let (t, horizon) = (2usize, 6usize);
    let out = planner_loss(&planner, &surrogate, &utility_bridge, &o, &r_prev, t, horizon)
        .unwrap();
    let analytic = out.grads.flat();
    let params = planner.net.param_vector();
    fd_max_rel_err(&params, &analytic, |p| {
        let mut m = planner.clone();
        m.net.set_param_vector(p).unwrap();
        planner_loss(&m, &surrogate, &utility_bridge, &o, &r_prev, t, horizon)
            .unwrap()
            .loss
    })
}

/// Gradient oracle: analytic gradients of the bridge, surrogate, and
/// planner losses match central finite differences (step 1e-5) to a max
/// relative error below 1e-4 over 10 seeds on reduced networks. Budget: 60 s.
fn criterion_2() -> CriterionResult {
    let start = Instant::now();
    let mut worst = [0.0f64; 3];
    for seed in 0..10u64 {
        worst[0] = worst[0].max(bridge_fd(seed));
        worst[1] = worst[1].max(surrogate_fd(seed));
        worst[2] = worst[2].max(planner_fd(seed));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst.iter().all(|&w| w < 1e-4) && secs < 60.0,
        format!(
            "max rel err bridge {:.2e}, surrogate {:.2e}, planner {:.2e} (tol 1e-4), \
             {secs:.1}s (budget 60s)",
            worst[0], worst[1], worst[2]
        ),
    )
}

// ---------------------------------------------------------------- criterion 3

/// SPI exactness: the hand example evaluates to 1.6 and the constant-rate
/// zero-production case to q + 1, both to 1e-12.
fn criterion_3() -> CriterionResult {
    // means 1.0 / 0.1, cumulative totals 100 / 10, FPR population std 0.2
    let hand: Vec<Vec<f64>> = (0..10)
        .map(|i| {
            let fpr = if i % 2 == 0 { 0.8 } else { 1.2 };
            vec![1.0, 0.1, 100.0, 10.0, fpr]
        })
        .collect();
    let s1 = spi(&hand, 0.1).unwrap();
    let err1 = (s1 - 1.6).abs();

    let q = 0.37;
    let constant: Vec<Vec<f64>> = (1..=10)
        .map(|i| vec![q, 0.0, q * 0.1 * i as f64, 0.0, 1.0])
        .collect();
    let s2 = spi(&constant, 0.1).unwrap();
    let err2 = (s2 - (q + 1.0)).abs();
    check(
        err1 < 1e-12 && err2 < 1e-12,
        format!("hand example err {err1:.2e}, constant-rate err {err2:.2e} (tol 1e-12)"),
    )
}

// ---------------------------------------------------------------- criterion 4

/// Environment conservation: cumulative injection totals match the sum of
/// rates times dt to 1e-9 relative on 100 random-policy lifecycles, and the
/// zero plan is an exact fixed point of the dynamics.
fn criterion_4() -> CriterionResult {
    let cfg = EnvConfig::default();
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut r = rng::seeded(seed);
        let mut policy = |_t: usize, _s: &env::ReservoirState| random_plan(&cfg, &mut r);
        let traj = rollout_policy(&cfg, &mut policy).map_err(|e| e.to_string())?;
        let sum_inj: f64 = traj.utilities.iter().map(|u| u[FGIR] * cfg.dt).sum();
        let fgit = traj.utilities.last().unwrap()[FGIT];
        worst = worst.max((fgit - sum_inj).abs() / fgit);
    }

    let mut state = env_init(&cfg).unwrap();
    let zero = InjectionPlan(vec![0.0; cfg.n_wells]);
    let mut fixed = true;
    for _ in 0..10 {
        let (next, _) = env_step(&state, &zero, &cfg).map_err(|e| e.to_string())?;
        fixed &= next.observation() == state.observation();
        state = next;
    }
    check(
        worst < 1e-9 && fixed,
        format!("max conservation rel err {worst:.2e} (tol 1e-9), zero-plan fixed point: {fixed}"),
    )
}

// ----------------------------------------------------- shared trained stack

struct Stack {
    env: EnvConfig,
    trajectories: Vec<LifecycleTrajectory>,
    train_idx: Vec<usize>,
    val_idx: Vec<usize>,
    test_idx: Vec<usize>,
    state_bridge: BridgeModel,
    utility_bridge: BridgeModel,
}

impl Stack {
    fn train(&self) -> Vec<&LifecycleTrajectory> {
        self.train_idx.iter().map(|&i| &self.trajectories[i]).collect()
    }
    fn val(&self) -> Vec<&LifecycleTrajectory> {
        self.val_idx.iter().map(|&i| &self.trajectories[i]).collect()
    }
    fn test(&self) -> Vec<&LifecycleTrajectory> {
        self.test_idx.iter().map(|&i| &self.trajectories[i]).collect()
    }
}

/// Default-scale dataset (64 lifecycles, 16x16 grid, horizon 60, 8:1:1
/// split) plus both bridges, trained once and shared by criteria 5-7.
fn build_stack() -> Result<Stack, String> {
    let env_cfg = EnvConfig::default();
    let ds = generate_dataset(&env_cfg, 64, Policy::Mixed, 0).map_err(|e| e.to_string())?;
    let (train_idx, val_idx, test_idx) = split_dataset(&ds, 7).map_err(|e| e.to_string())?;
    let train = select(&ds, &train_idx);
    let aug = AugmentConfig::default();
    let bridge_cfg = BridgeTrainConfig::default();
    let states: Vec<&[Vec<f64>]> = train.iter().map(|t| t.states.as_slice()).collect();
    let state_bridge =
        bridgegcs::bridge::train_bridge(&states, BridgeVariant::State, &aug, &bridge_cfg)
            .map_err(|e| e.to_string())?
            .model;
    let utils: Vec<&[Vec<f64>]> = train.iter().map(|t| t.utilities.as_slice()).collect();
    let utility_bridge =
        bridgegcs::bridge::train_bridge(&utils, BridgeVariant::Utility, &aug, &bridge_cfg)
            .map_err(|e| e.to_string())?
            .model;
    Ok(Stack {
        env: env_cfg,
        trajectories: ds.trajectories,
        train_idx,
        val_idx,
        test_idx,
        state_bridge,
        utility_bridge,
    })
}

// ------------------------------------------------------------ criteria 5 & 6

const ETA_GRID: [f64; 5] = [0.0, 1e-4, 1e-3, 1e-2, 1e-1];
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct EtaGridOut {
    /// (seed, eta-index) -> held-out closed-loop utility MSE.
    mse: BTreeMap<(u64, usize), f64>,
    /// trained eta = 1e-3 surrogates per seed, reused by criterion 7
    default_eta_models: Vec<SurrogateModel>,
    /// wall-clock seconds spent on the eta in {0, 1e-3} arms only
    ablation_secs: f64,
}

/// Train the surrogate over the full eta grid x 5 seeds and score each on
/// held-out closed-loop utility MSE (surrogate rollouts re-anchored on the
/// true state every 8 steps, the planner's guidance window length).
fn run_eta_grid(stack: &Stack) -> Result<EtaGridOut, String> {
    let train = stack.train();
    let val = stack.val();
    let test = stack.test();
    let horizon = PlannerTrainConfig::default().window;
    let mut mse = BTreeMap::new();
    let mut default_eta_models = Vec::new();
    let mut ablation_secs = 0.0;
    for &seed in &SEEDS {
        for (ei, &eta) in ETA_GRID.iter().enumerate() {
            let t0 = Instant::now();
            let cfg = SurrogateTrainConfig {
                eta,
                seed,
                ..SurrogateTrainConfig::default()
            };
            let out = train_surrogate(&train, &val, &stack.state_bridge, &cfg)
                .map_err(|e| e.to_string())?;
            let m =
                rollout_utility_mse(&out.model, &stack.state_bridge, &stack.env, &test, horizon)
                    .map_err(|e| e.to_string())?;
            mse.insert((seed, ei), m);
            if eta == 0.0 || eta == 1e-3 {
                ablation_secs += t0.elapsed().as_secs_f64();
            }
            if eta == 1e-3 {
                default_eta_models.push(out.model);
            }
        }
    }
    Ok(EtaGridOut {
        mse,
        default_eta_models,
        ablation_secs,
    })
}

/// Surrogate directional claim: the eta = 1e-3 surrogate achieves held-out
/// utility MSE at or below the eta = 0 ablation in at least 4 of 5 seeds.
/// Budget: 10 min for the ten trainings involved.
fn criterion_5(grid: &EtaGridOut) -> CriterionResult {
    let e0 = ETA_GRID.iter().position(|&e| e == 0.0).unwrap();
    let e3 = ETA_GRID.iter().position(|&e| e == 1e-3).unwrap();
    let mut wins = 0;
    let mut detail = String::new();
    for &seed in &SEEDS {
        let t = grid.mse[&(seed, e3)];
        let c = grid.mse[&(seed, e0)];
        if t <= c {
            wins += 1;
        }
        detail.push_str(&format!(" s{seed} {t:.3}v{c:.3}"));
    }
    let secs = grid.ablation_secs;
    check(
        wins >= 4 && secs < 600.0,
        format!(
            "eta=1e-3 beats eta=0 in {wins}/5 seeds (need 4):{detail}; \
             {secs:.0}s (budget 600s)"
        ),
    )
}

/// Eta U-shape: the best held-out MSE over the grid {0, 1e-4, 1e-3, 1e-2,
/// 1e-1} lands at an interior grid point in at least 3 of 5 seeds.
fn criterion_6(grid: &EtaGridOut) -> CriterionResult {
    let mut interior = 0;
    let mut detail = String::new();
    for &seed in &SEEDS {
        let best = (0..ETA_GRID.len())
            .min_by(|&a, &b| {
                grid.mse[&(seed, a)]
                    .partial_cmp(&grid.mse[&(seed, b)])
                    .unwrap()
            })
            .unwrap();
        if best != 0 && best != ETA_GRID.len() - 1 {
            interior += 1;
        }
        detail.push_str(&format!(" s{seed}:eta={:.0e}", ETA_GRID[best]));
    }
    check(
        interior >= 3,
        format!("interior minimum in {interior}/5 seeds (need 3); argmin per seed:{detail}"),
    )
}

// ---------------------------------------------------------------- criterion 7

/// Planner directional claims: env-rollout SPI of the bridge-guided planner
/// beats (a) the random policy over 10 lifecycles and (b) the zero-guidance
/// ablation, each in at least 4 of 5 seeds. Budget: 15 min for the planner
/// trainings, rollouts, and baseline.
fn criterion_7(stack: &Stack, surrogates: &[SurrogateModel]) -> CriterionResult {
    let start = Instant::now();
    let train = stack.train();
    let random_spi = random_policy_eval(&stack.env, 10, 1, 2024)
        .map_err(|e| e.to_string())?
        .mean_spi;
    let mut beats_random = 0;
    let mut beats_unguided = 0;
    let mut detail = String::new();
    for (si, &seed) in SEEDS.iter().enumerate() {
        let arm = |guided: bool| -> Result<f64, String> {
            let cfg = PlannerTrainConfig {
                seed,
                guided,
                ..PlannerTrainConfig::default()
            };
            let planner = train_planner(
                &train,
                &surrogates[si],
                &stack.state_bridge,
                &stack.utility_bridge,
                &stack.env,
                &cfg,
            )
            .map_err(|e| e.to_string())?;
            let traj = rollout(
                &planner.model,
                &surrogates[si],
                &stack.state_bridge,
                &stack.utility_bridge,
                &stack.env,
                RolloutMode::Env,
            )
            .map_err(|e| e.to_string())?;
            spi(&traj.utilities, stack.env.dt).map_err(|e| e.to_string())
        };
        let guided = arm(true)?;
        let unguided = arm(false)?;
        if guided > random_spi {
            beats_random += 1;
        }
        if guided > unguided {
            beats_unguided += 1;
        }
        detail.push_str(&format!(" s{seed} {guided:.3}/{unguided:.3}"));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        beats_random >= 4 && beats_unguided >= 4 && secs < 900.0,
        format!(
            "beats random ({random_spi:.3}) in {beats_random}/5, beats no-guidance in \
             {beats_unguided}/5 (need 4); guided/unguided:{detail}; {secs:.0}s (budget 900s)"
        ),
    )
}

// ---------------------------------------------------------------- criterion 8

fn smoke_config(out_dir: &std::path::Path) -> RunConfig {
    let json = format!(
        r#"{{
        "env": {{"grid_nx": 6, "grid_ny": 6, "n_wells": 2, "horizon": 24}},
        "data": {{"n_traj": 16}},
        "state_bridge": {{"augment": {{"subseq_len": 8, "n_samples_per_traj": 4}},
                          "train": {{"epochs": 4, "hidden": 16, "latent_dim": 4}}}},
        "utility_bridge": {{"augment": {{"subseq_len": 8, "n_samples_per_traj": 4}},
                            "train": {{"epochs": 4, "hidden": 16, "latent_dim": 4}}}},
        "surrogate": {{"epochs": 4, "hidden": 32}},
        "planner": {{"epochs": 2, "window": 4, "hidden": 16}},
        "eval": {{"n_random_lifecycles": 4, "repeats": 1}},
        "out_dir": {:?},
        "seed": 5
        }}"#,
        out_dir.to_str().unwrap()
    );
    serde_json::from_str(&json).unwrap()
}

/// Determinism and persistence: two identical pipeline runs produce
/// byte-identical report CSVs, checkpoints round-trip bit-identically, and
/// a provenance hash mismatch is rejected on load.
fn criterion_8() -> CriterionResult {
    let base = std::env::temp_dir().join(format!("bridgegcs-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&base);
    let run = |name: &str| -> Result<RunConfig, String> {
        let cfg = smoke_config(&base.join(name));
        pipeline::run_all(&cfg, true).map_err(|e| e.to_string())?;
        Ok(cfg)
    };
    let cfg_a = run("a")?;
    let cfg_b = run("b")?;

    // byte-identical report CSVs across the two runs
    let csv = "final_spi.csv";
    let a = std::fs::read(pipeline::report_dir(&cfg_a).join(csv)).map_err(|e| e.to_string())?;
    let b = std::fs::read(pipeline::report_dir(&cfg_b).join(csv)).map_err(|e| e.to_string())?;
    let identical = a == b;

    // checkpoint round-trip: loaded surrogate params match the saved model
    // bit for bit (re-saving produces the same checkpoint hash)
    let sdir = pipeline::surrogate_dir(&cfg_a);
    let (model, manifest) = bridgegcs::io::load_surrogate(&sdir).map_err(|e| e.to_string())?;
    let roundtrip_dir = base.join("roundtrip");
    std::fs::create_dir_all(&roundtrip_dir).map_err(|e| e.to_string())?;
    bridgegcs::io::save_surrogate(
        &roundtrip_dir,
        &model,
        &SurrogateTrainConfig::default(),
        manifest.inputs.get("state_bridge").map(String::as_str).unwrap_or(""),
    )
    .map_err(|e| e.to_string())?;
    let (model2, _) = bridgegcs::io::load_surrogate(&roundtrip_dir).map_err(|e| e.to_string())?;
    let roundtrip = model.param_vector() == model2.param_vector();

    // provenance rejection: retrain the state bridge under a different seed
    // so the surrogate's recorded input hash no longer matches
    let mut cfg_tampered = cfg_a.clone();
    cfg_tampered.seed = 6;
    pipeline::stage_train_bridge(&cfg_tampered, true).map_err(|e| e.to_string())?;
    let rejected = matches!(
        pipeline::stage_train_planner(&cfg_a, true),
        Err(Error::Provenance(_))
    );

    let _ = std::fs::remove_dir_all(&base);
    check(
        identical && roundtrip && rejected,
        format!(
            "report CSVs identical: {identical}, checkpoint round-trip: {roundtrip}, \
             provenance mismatch rejected: {rejected}"
        ),
    )
}

// ---------------------------------------------------------------- criterion 9

/// Guidance window properties: with r_prev = r_star every window entry
/// equals encode(r_star) exactly, and at t = horizon the guidance equals
/// encode(r_star) exactly regardless of r_prev.
fn criterion_9() -> CriterionResult {
    let mut r = rng::seeded(17);
    let bridge = small_bridge(UTILITY_DIM, 4, &mut r);
    let r_star: Vec<f64> = (0..UTILITY_DIM).map(|_| r.random_range(-1.0..1.0)).collect();
    let r_prev: Vec<f64> = (0..UTILITY_DIM).map(|_| r.random_range(-1.0..1.0)).collect();
    let z_star = bridge.encode(&r_star).unwrap();
    let (horizon, window) = (60usize, 8usize);

    let mut constant = true;
    for t in [0usize, 7, 30, 59, 60] {
        let w = guidance_window(&bridge, &r_star, &r_star, t, horizon, window).unwrap();
        constant &= w.iter().all(|z| *z == z_star);
    }

    let w_end = guidance_window(&bridge, &r_prev, &r_star, horizon, horizon, window).unwrap();
    let endpoint = w_end.iter().all(|z| *z == z_star);
    // windows overlapping the horizon clamp to it, so the last entries of a
    // window starting at horizon - 1 must also hit the endpoint exactly
    let w_near = guidance_window(&bridge, &r_prev, &r_star, horizon - 1, horizon, window).unwrap();
    let clamped = w_near[1..].iter().all(|z| *z == z_star);
    check(
        constant && endpoint && clamped,
        format!(
            "constant window with r_prev = r_star: {constant}, exact endpoint at t = T: \
             {endpoint}, horizon clamping exact: {clamped}"
        ),
    )
}

// -------------------------------------------------------------------- driver

#[test]
fn acceptance() {
    let mut failures = Vec::new();
    let mut report = |n: usize, name: &str, res: CriterionResult| {
        match res {
            Ok(detail) => println!("criterion {n} ({name}): PASS — {detail}"),
            Err(detail) => {
                println!("criterion {n} ({name}): FAIL — {detail}");
                failures.push(n);
            }
        }
    };

    report(1, "bridge sample statistics", criterion_1());
    report(2, "gradient oracle", criterion_2());
    report(3, "SPI exactness", criterion_3());
    report(4, "environment conservation", criterion_4());

    match build_stack() {
        Ok(stack) => {
            match run_eta_grid(&stack) {
                Ok(grid) => {
                    report(5, "surrogate eta ablation", criterion_5(&grid));
                    report(6, "eta U-shape", criterion_6(&grid));
                    report(
                        7,
                        "planner vs random and no-guidance",
                        criterion_7(&stack, &grid.default_eta_models),
                    );
                }
                Err(e) => {
                    for (n, name) in [
                        (5, "surrogate eta ablation"),
                        (6, "eta U-shape"),
                        (7, "planner vs random and no-guidance"),
                    ] {
                        report(n, name, Err(format!("eta grid failed: {e}")));
                    }
                }
            }
        }
        Err(e) => {
            for (n, name) in [
                (5, "surrogate eta ablation"),
                (6, "eta U-shape"),
                (7, "planner vs random and no-guidance"),
            ] {
                report(n, name, Err(format!("shared stack failed: {e}")));
            }
        }
    }

    report(8, "determinism and persistence", criterion_8());
    report(9, "guidance window properties", criterion_9());

    assert!(
        failures.is_empty(),
        "acceptance criteria failed: {failures:?}"
    );
}
