//! Deterministic toy reservoir physics.
//!
//! A 2-D pressure field evolves by an explicit 5-point diffusion step with
//! injection-rate sources at the well cells; gas saturation is transported
//! upwind along the pressure gradient and leaks through boundary cells.
//! The environment is the pipeline's ground truth: it generates lifecycle
//! datasets and scores finished injection plans.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::rng;
use crate::nn::Tensor;

/// Utility vector component indices.
pub const FGIR: usize = 0;
pub const FGPR: usize = 1;
pub const FGIT: usize = 2;
pub const FGPT: usize = 3;
pub const FPR: usize = 4;
/// |r|: FGIR, FGPR, FGIT, FGPT, FPR.
pub const UTILITY_DIM: usize = 5;

/// Fraction of the driving pressure difference moved per unit time by the
/// saturation transport scheme.
const TRANSPORT_COEFF: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub grid_nx: usize,
    pub grid_ny: usize,
    pub n_wells: usize,
    /// Flat cell indices (row-major, y * nx + x). Empty means quarter-point
    /// placement for 4 wells.
    pub well_positions: Vec<usize>,
    pub dt: f64,
    pub diffusivity: f64,
    pub max_rate: f64,
    pub leak_coeff: f64,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            grid_nx: 16,
            grid_ny: 16,
            n_wells: 4,
            well_positions: Vec::new(),
            dt: 0.1,
            diffusivity: 1.0,
            max_rate: 1.0,
            leak_coeff: 0.05,
            horizon: 60,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn n_cells(&self) -> usize {
        self.grid_nx * self.grid_ny
    }

    /// |o| = pressure + saturation channels.
    pub fn state_dim(&self) -> usize {
        2 * self.n_cells()
    }

    pub fn plan_dim(&self) -> usize {
        self.n_wells
    }

    /// Resolved well cell indices (quarter points when unspecified).
    pub fn wells(&self) -> Vec<usize> {
        if !self.well_positions.is_empty() {
            return self.well_positions.clone();
        }
        let (nx, ny) = (self.grid_nx, self.grid_ny);
        let (qx, qy) = (nx / 4, ny / 4);
        let candidates = [
            qy * nx + qx,
            qy * nx + (nx - 1 - qx),
            (ny - 1 - qy) * nx + qx,
            (ny - 1 - qy) * nx + (nx - 1 - qx),
        ];
        candidates.into_iter().take(self.n_wells).collect()
    }

    /// Every constraint violation, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.n_wells < 1 {
            errs.push("n_wells must be >= 1".to_string());
        }
        if self.n_cells() < self.n_wells {
            errs.push(format!(
                "grid ({}x{}) smaller than n_wells ({})",
                self.grid_nx, self.grid_ny, self.n_wells
            ));
        }
        if self.dt <= 0.0 || self.diffusivity <= 0.0 {
            errs.push("dt and diffusivity must be positive".to_string());
        }
        if self.dt * self.diffusivity * 4.0 >= 1.0 {
            errs.push(format!(
                "explicit-scheme stability violated: dt*diffusivity*4 = {} >= 1",
                self.dt * self.diffusivity * 4.0
            ));
        }
        if self.max_rate < 0.0 {
            errs.push("max_rate must be >= 0".to_string());
        }
        if self.leak_coeff < 0.0 {
            errs.push("leak_coeff must be >= 0".to_string());
        }
        if self.horizon < 2 {
            errs.push("horizon must be >= 2".to_string());
        }
        let wells = self.wells();
        if self.well_positions.is_empty() && self.n_wells > 4 {
            errs.push("default well placement supports at most 4 wells".to_string());
        }
        if !self.well_positions.is_empty() && self.well_positions.len() != self.n_wells {
            errs.push(format!(
                "well_positions has {} entries, n_wells is {}",
                self.well_positions.len(),
                self.n_wells
            ));
        }
        for &w in &wells {
            if w >= self.n_cells() {
                errs.push(format!("well index {w} outside grid"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigList(errs))
        }
    }
}

/// Gridded pressure + gas saturation, plus the running cumulatives the
/// utility vector reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirState {
    pub pressure: Tensor,
    pub saturation: Tensor,
    pub cum_injected: f64,
    pub cum_produced: f64,
}

impl ReservoirState {
    /// Flattened observation o: pressure channel then saturation channel.
    pub fn observation(&self) -> Vec<f64> {
        let mut o = Vec::with_capacity(self.pressure.len() + self.saturation.len());
        o.extend_from_slice(self.pressure.data());
        o.extend_from_slice(self.saturation.data());
        o
    }

    /// Rebuild a state from a flattened observation (cumulatives reset).
    pub fn from_observation(o: &[f64], config: &EnvConfig) -> Result<Self> {
        let n = config.n_cells();
        if o.len() != 2 * n {
            return Err(Error::DimMismatch {
                expected: 2 * n,
                got: o.len(),
                context: "observation".into(),
            });
        }
        let shape = vec![config.grid_ny, config.grid_nx];
        Ok(ReservoirState {
            pressure: Tensor::new(shape.clone(), o[..n].to_vec())?,
            saturation: Tensor::new(
                shape,
                o[n..].iter().map(|&s| s.clamp(0.0, 1.0)).collect(),
            )?,
            cum_injected: 0.0,
            cum_produced: 0.0,
        })
    }
}

/// Per-well injection rates, bounded by `max_rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionPlan(pub Vec<f64>);

/// One lifecycle: aligned sequences of observations, plans, utilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifecycleTrajectory {
    pub states: Vec<Vec<f64>>,
    pub plans: Vec<Vec<f64>>,
    pub utilities: Vec<Vec<f64>>,
}

impl LifecycleTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Random,
    Sinusoid,
    Mixed,
}

/// Uniform initial pressure 1.0, zero saturation. Seed-independent.
pub fn env_init(config: &EnvConfig) -> Result<ReservoirState> {
    config.validate()?;
    let shape = vec![config.grid_ny, config.grid_nx];
    let n = config.n_cells();
    Ok(ReservoirState {
        pressure: Tensor::new(shape.clone(), vec![1.0; n])?,
        saturation: Tensor::zeros(shape),
        cum_injected: 0.0,
        cum_produced: 0.0,
    })
}

fn neighbors(i: usize, nx: usize, ny: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (i % nx, i / nx);
    let mut out = Vec::with_capacity(4);
    if x > 0 {
        out.push(i - 1);
    }
    if x + 1 < nx {
        out.push(i + 1);
    }
    if y > 0 {
        out.push(i - nx);
    }
    if y + 1 < ny {
        out.push(i + nx);
    }
    out.into_iter()
}

fn is_boundary(i: usize, nx: usize, ny: usize) -> bool {
    let (x, y) = (i % nx, i / nx);
    x == 0 || y == 0 || x == nx - 1 || y == ny - 1
}

/// One physics step. Returns the next state and the utility vector observed
/// at this step.
pub fn env_step(
    state: &ReservoirState,
    plan: &InjectionPlan,
    config: &EnvConfig,
) -> Result<(ReservoirState, Vec<f64>)> {
    let wells = config.wells();
    if plan.0.len() != wells.len() {
        return Err(Error::DimMismatch {
            expected: wells.len(),
            got: plan.0.len(),
            context: "injection plan".into(),
        });
    }
    for &q in &plan.0 {
        if !(0.0..=config.max_rate).contains(&q) {
            return Err(Error::RejectedInput(format!(
                "injection rate {q} outside [0, {}]",
                config.max_rate
            )));
        }
    }
    let (nx, ny) = (config.grid_nx, config.grid_ny);
    let n = config.n_cells();
    let p = state.pressure.data();
    let s = state.saturation.data();

    // explicit 5-point diffusion with no-flux boundaries
    let mut p_new = vec![0.0; n];
    for i in 0..n {
        let mut lap = 0.0;
        for j in neighbors(i, nx, ny) {
            lap += p[j] - p[i];
        }
        p_new[i] = p[i] + config.dt * config.diffusivity * lap;
    }
    // rate * dt source at each well cell
    for (&w, &q) in wells.iter().zip(&plan.0) {
        p_new[w] += q * config.dt;
    }

    // upwind saturation transport driven by the local pressure gradient
    let mut s_new = s.to_vec();
    for i in 0..n {
        if s[i] <= 0.0 {
            continue;
        }
        let downhill: Vec<(usize, f64)> = neighbors(i, nx, ny)
            .filter_map(|j| {
                let dp = p[i] - p[j];
                (dp > 0.0).then_some((j, dp))
            })
            .collect();
        if downhill.is_empty() {
            continue;
        }
        let total_dp: f64 = downhill.iter().map(|(_, dp)| dp).sum();
        let outflow = (TRANSPORT_COEFF * config.dt * total_dp * s[i]).min(s[i]);
        s_new[i] -= outflow;
        for (j, dp) in downhill {
            s_new[j] += outflow * dp / total_dp;
        }
    }
    // saturation source at wells
    for (&w, &q) in wells.iter().zip(&plan.0) {
        s_new[w] += q * config.dt;
    }

    // boundary leakage: rate = leak_coeff * saturation * pressure excess,
    // capped so cumulative production never exceeds cumulative injection
    let fgir: f64 = plan.0.iter().sum();
    let cum_injected = state.cum_injected + fgir * config.dt;
    let mut leaked_mass = 0.0;
    for i in 0..n {
        if !is_boundary(i, nx, ny) {
            continue;
        }
        let excess = (p_new[i] - 1.0).max(0.0);
        let cell_leak = (config.leak_coeff * s_new[i] * excess * config.dt).min(s_new[i]);
        s_new[i] -= cell_leak;
        leaked_mass += cell_leak;
        // pressure relief through the open boundary
        p_new[i] -= config.dt * config.leak_coeff * excess;
    }
    leaked_mass = leaked_mass.min(cum_injected - state.cum_produced);
    let fgpr = leaked_mass / config.dt;
    let cum_produced = state.cum_produced + leaked_mass;

    for v in s_new.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    for v in p_new.iter_mut() {
        *v = v.max(0.0);
    }
    if p_new.iter().any(|v| !v.is_finite()) || s_new.iter().any(|v| !v.is_finite()) {
        return Err(Error::PhysicsDivergence("non-finite field in env_step".into()));
    }

    let fpr = p_new.iter().sum::<f64>() / n as f64;
    let utility = vec![fgir, fgpr, cum_injected, cum_produced, fpr];
    let shape = vec![ny, nx];
    Ok((
        ReservoirState {
            pressure: Tensor::new(shape.clone(), p_new)?,
            saturation: Tensor::new(shape, s_new)?,
            cum_injected,
            cum_produced,
        },
        utility,
    ))
}

/// A closure producing the plan for step `t` of one trajectory.
pub type PlanPolicy<'a> = dyn FnMut(usize, &ReservoirState) -> InjectionPlan + 'a;

/// Roll one lifecycle under a policy, recording (o_t, s_t, r_t) triples.
pub fn rollout_policy(
    config: &EnvConfig,
    policy: &mut PlanPolicy,
) -> Result<LifecycleTrajectory> {
    let mut state = env_init(config)?;
    let mut traj = LifecycleTrajectory {
        states: Vec::with_capacity(config.horizon),
        plans: Vec::with_capacity(config.horizon),
        utilities: Vec::with_capacity(config.horizon),
    };
    for t in 0..config.horizon {
        let plan = policy(t, &state);
        traj.states.push(state.observation());
        let (next, utility) = env_step(&state, &plan, config)?;
        traj.plans.push(plan.0);
        traj.utilities.push(utility);
        state = next;
    }
    Ok(traj)
}

fn policy_for_traj<'a>(
    policy: Policy,
    traj_idx: usize,
    config: &'a EnvConfig,
    mut traj_rng: rand_chacha::ChaCha8Rng,
) -> Box<dyn FnMut(usize, &ReservoirState) -> InjectionPlan + 'a> {
    let n_wells = config.n_wells;
    let max = config.max_rate;
    let effective = match policy {
        Policy::Mixed => {
            if traj_idx % 2 == 0 {
                Policy::Random
            } else {
                Policy::Sinusoid
            }
        }
        p => p,
    };
    match effective {
        Policy::Random => {
            if policy == Policy::Mixed {
                // piecewise-constant excitation: hold each level for 8 steps
                let mut level: Vec<f64> = (0..n_wells).map(|_| traj_rng.random_range(0.0..=max)).collect();
                Box::new(move |t, _| {
                    if t > 0 && t % 8 == 0 {
                        for l in level.iter_mut() {
                            *l = traj_rng.random_range(0.0..=max);
                        }
                    }
                    InjectionPlan(level.clone())
                })
            } else {
                Box::new(move |_, _| {
                    InjectionPlan((0..n_wells).map(|_| traj_rng.random_range(0.0..=max)).collect())
                })
            }
        }
        Policy::Sinusoid => {
            let phases: Vec<f64> = (0..n_wells)
                .map(|_| traj_rng.random_range(0.0..std::f64::consts::TAU))
                .collect();
            let cycles: f64 = traj_rng.random_range(1.0..3.0);
            let horizon = config.horizon as f64;
            Box::new(move |t, _| {
                let plan = phases
                    .iter()
                    .map(|&phi| {
                        let arg = std::f64::consts::TAU * cycles * t as f64 / horizon + phi;
                        0.5 * max * (1.0 + arg.sin())
                    })
                    .collect();
                InjectionPlan(plan)
            })
        }
        Policy::Mixed => unreachable!(),
    }
}

/// Lifecycle dataset plus the config that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub config: EnvConfig,
    pub policy: Policy,
    pub seed: u64,
    pub trajectories: Vec<LifecycleTrajectory>,
}

/// Generate `n_traj` independent rollouts; per-trajectory seeds derive from
/// (seed, index) so parallel and serial runs are bit-identical.
pub fn generate_dataset(
    config: &EnvConfig,
    n_traj: usize,
    policy: Policy,
    seed: u64,
) -> Result<Dataset> {
    config.validate()?;
    if n_traj < 1 {
        return Err(Error::Config("n_traj must be >= 1".into()));
    }
    let trajectories: Vec<Result<LifecycleTrajectory>> = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let traj_rng = rng::derive(seed, i as u64);
            let mut pol = policy_for_traj(policy, i, config, traj_rng);
            rollout_policy(config, &mut *pol)
                .map_err(|e| Error::PhysicsDivergence(format!("trajectory {i}: {e}")))
        })
        .collect();
    let mut out = Vec::with_capacity(n_traj);
    for t in trajectories {
        out.push(t?);
    }
    Ok(Dataset {
        config: config.clone(),
        policy,
        seed,
        trajectories: out,
    })
}

/// Disjoint 8:1:1 partition by whole trajectory; sizes floor/floor/remainder.
pub fn split_dataset(
    dataset: &Dataset,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let n = dataset.trajectories.len();
    if n < 10 {
        return Err(Error::Config(format!(
            "split needs >= 10 trajectories, got {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    // Fisher-Yates with the split seed
    let mut r = rng::seeded(seed);
    for i in (1..n).rev() {
        let j = r.random_range(0..=i);
        idx.swap(i, j);
    }
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let train = idx[..n_train].to_vec();
    let val = idx[n_train..n_train + n_val].to_vec();
    let test = idx[n_train + n_val..].to_vec();
    Ok((train, val, test))
}

/// Subsets of a dataset's trajectories by index list.
pub fn select<'a>(dataset: &'a Dataset, idx: &[usize]) -> Vec<&'a LifecycleTrajectory> {
    idx.iter().map(|&i| &dataset.trajectories[i]).collect()
}

/// Uniform-random bounded plans, per-step i.i.d.
pub fn random_plan<R: Rng>(config: &EnvConfig, rng: &mut R) -> InjectionPlan {
    InjectionPlan(
        (0..config.n_wells)
            .map(|_| rng.random_range(0.0..=config.max_rate))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_uniform_and_seed_independent() {
        let mut cfg = EnvConfig::default();
        let a = env_init(&cfg).unwrap();
        assert!(a.pressure.data().iter().all(|&p| p == 1.0));
        assert!(a.saturation.data().iter().all(|&s| s == 0.0));
        assert_eq!(a.observation().len(), 512);
        cfg.seed = 12345;
        let b = env_init(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stability_violation_is_config_error() {
        let cfg = EnvConfig {
            dt: 0.3,
            diffusivity: 1.0,
            ..EnvConfig::default()
        };
        assert!(matches!(env_init(&cfg), Err(Error::ConfigList(_))));
    }

    #[test]
    fn zero_plan_is_fixed_point() {
        let cfg = EnvConfig::default();
        let mut state = env_init(&cfg).unwrap();
        let zero = InjectionPlan(vec![0.0; cfg.n_wells]);
        for _ in 0..5 {
            let (next, utility) = env_step(&state, &zero, &cfg).unwrap();
            assert_eq!(next.observation(), state.observation());
            assert_eq!(utility[FGIR], 0.0);
            assert_eq!(utility[FGPR], 0.0);
            state = next;
        }
    }

    #[test]
    fn well_pressure_bump_is_rate_times_dt() {
        let cfg = EnvConfig {
            n_wells: 1,
            well_positions: vec![5 * 16 + 5],
            ..EnvConfig::default()
        };
        let state = env_init(&cfg).unwrap();
        let q = 0.7;
        let (next, _) = env_step(&state, &InjectionPlan(vec![q]), &cfg).unwrap();
        let bump = next.pressure.data()[5 * 16 + 5] - 1.0;
        assert!((bump - q * cfg.dt).abs() < 1e-15);
    }

    #[test]
    fn fgit_is_cumulative_sum() {
        let cfg = EnvConfig {
            n_wells: 1,
            well_positions: vec![5 * 16 + 5],
            ..EnvConfig::default()
        };
        let mut state = env_init(&cfg).unwrap();
        let q = 0.4;
        let k = 12;
        let mut last = Vec::new();
        for _ in 0..k {
            let (next, utility) = env_step(&state, &InjectionPlan(vec![q]), &cfg).unwrap();
            state = next;
            last = utility;
        }
        assert!((last[FGIT] - k as f64 * q * cfg.dt).abs() < 1e-12);
    }

    #[test]
    fn mass_conservation_and_monotone_cumulatives() {
        let cfg = EnvConfig::default();
        let ds = generate_dataset(&cfg, 8, Policy::Random, 3).unwrap();
        for traj in &ds.trajectories {
            let sum_inj: f64 = traj.utilities.iter().map(|r| r[FGIR] * cfg.dt).sum();
            let fgit = traj.utilities.last().unwrap()[FGIT];
            assert!((fgit - sum_inj).abs() / fgit < 1e-9);
            for w in traj.utilities.windows(2) {
                assert!(w[1][FGIT] >= w[0][FGIT]);
                assert!(w[1][FGPT] >= w[0][FGPT]);
            }
            for r in &traj.utilities {
                assert!(r[FGPT] <= r[FGIT] + 1e-12);
                assert!(r[FGIR] >= 0.0 && r[FGPR] >= 0.0);
            }
        }
    }

    #[test]
    fn boundedness_under_random_policy() {
        let cfg = EnvConfig::default();
        for seed in 0..10u64 {
            let mut state = env_init(&cfg).unwrap();
            let mut r = rng::seeded(seed);
            for _ in 0..1000 {
                let plan = random_plan(&cfg, &mut r);
                let (next, _) = env_step(&state, &plan, &cfg).unwrap();
                state = next;
            }
            for &p in state.pressure.data() {
                assert!((0.0..=50.0).contains(&p), "pressure {p} out of bounds");
            }
            for &s in state.saturation.data() {
                assert!((0.0..=1.0).contains(&s));
            }
        }
    }

    #[test]
    fn dataset_determinism_and_shape() {
        let cfg = EnvConfig::default();
        let a = generate_dataset(&cfg, 8, Policy::Mixed, 17).unwrap();
        let b = generate_dataset(&cfg, 8, Policy::Mixed, 17).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trajectories.len(), 8);
        for t in &a.trajectories {
            assert_eq!(t.states.len(), 60);
            assert_eq!(t.plans.len(), 60);
            assert_eq!(t.utilities.len(), 60);
        }
    }

    #[test]
    fn random_policy_respects_bounds() {
        let cfg = EnvConfig::default();
        let ds = generate_dataset(&cfg, 4, Policy::Random, 5).unwrap();
        for t in &ds.trajectories {
            for plan in &t.plans {
                assert!(plan.iter().all(|&q| (0.0..=1.0).contains(&q)));
            }
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let cfg = EnvConfig {
            horizon: 4,
            ..EnvConfig::default()
        };
        let ds = generate_dataset(&cfg, 50, Policy::Random, 0).unwrap();
        let (train, val, test) = split_dataset(&ds, 9).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (40, 5, 5));
        let (train2, ..) = split_dataset(&ds, 9).unwrap();
        assert_eq!(train, train2);

        let mut all: Vec<usize> = train.iter().chain(&val).chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());

        let ds10 = generate_dataset(&cfg, 10, Policy::Random, 0).unwrap();
        let (tr, va, te) = split_dataset(&ds10, 9).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (8, 1, 1));

        let ds9 = generate_dataset(&cfg, 9, Policy::Random, 0).unwrap();
        assert!(split_dataset(&ds9, 9).is_err());
    }
}
