//! Persistence: checkpoints, dataset directories, run manifests, CSV.
//!
//! Checkpoint = `manifest.json` (layer sizes, activations, training
//! hyperparameters, provenance hashes, blob digest) plus `params.bin`, a
//! little-endian f64 blob of all network parameters concatenated in
//! manifest order. A checkpoint's identity is the SHA-256 of its manifest
//! bytes, which covers the blob through its digest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bridge::{AugmentConfig, BridgeModel, BridgeTrainConfig, BridgeVariant};
use crate::env::{Dataset, EnvConfig, LifecycleTrajectory, Policy, UTILITY_DIM};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::planner::{PlannerModel, PlannerTrainConfig};
use crate::surrogate::{Normalization, SurrogateModel, SurrogateTrainConfig};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn params_to_bytes(params: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.len() * 8);
    for v in params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn bytes_to_params(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Corrupt(format!(
            "parameter blob length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Write a file atomically (tmp + rename) so partial writes never appear.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub name: String,
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub schema_version: u32,
    pub kind: String,
    pub nets: Vec<NetSpec>,
    pub blob_sha256: String,
    /// Content hashes of upstream checkpoints this model was trained
    /// against, keyed by role.
    pub inputs: BTreeMap<String, String>,
    /// Kind-specific fields (training config, normalization stats, ...).
    pub extra: serde_json::Value,
}

fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

fn blob_path(dir: &Path) -> PathBuf {
    dir.join("params.bin")
}

/// Save networks + manifest; returns the checkpoint's content hash.
pub fn save_checkpoint(
    dir: &Path,
    kind: &str,
    nets: &[(&str, &Mlp)],
    inputs: BTreeMap<String, String>,
    extra: serde_json::Value,
) -> Result<String> {
    fs::create_dir_all(dir)?;
    let mut params = Vec::new();
    let mut specs = Vec::new();
    for (name, mlp) in nets {
        params.extend(mlp.param_vector());
        specs.push(NetSpec {
            name: (*name).to_string(),
            layer_sizes: mlp.layer_sizes(),
            activations: mlp.activations(),
        });
    }
    let blob = params_to_bytes(&params);
    let manifest = CheckpointManifest {
        schema_version: SCHEMA_VERSION,
        kind: kind.to_string(),
        nets: specs,
        blob_sha256: sha256_hex(&blob),
        inputs,
        extra,
    };
    write_atomic(&blob_path(dir), &blob)?;
    let manifest_bytes = serde_json::to_vec_pretty(&manifest)?;
    write_atomic(&manifest_path(dir), &manifest_bytes)?;
    Ok(sha256_hex(&manifest_bytes))
}

/// The checkpoint's content hash (SHA-256 of its manifest bytes).
pub fn checkpoint_hash(dir: &Path) -> Result<String> {
    let bytes = fs::read(manifest_path(dir))
        .map_err(|_| Error::MissingArtifact(format!("checkpoint at {}", dir.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Load and verify a checkpoint: blob digest must match the manifest.
pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointManifest, Vec<Mlp>)> {
    let manifest_bytes = fs::read(manifest_path(dir))
        .map_err(|_| Error::MissingArtifact(format!("checkpoint at {}", dir.display())))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::Corrupt(format!("manifest: {e}")))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::Corrupt(format!(
            "unsupported schema version {}",
            manifest.schema_version
        )));
    }
    let blob = fs::read(blob_path(dir))
        .map_err(|_| Error::MissingArtifact(format!("params.bin in {}", dir.display())))?;
    if sha256_hex(&blob) != manifest.blob_sha256 {
        return Err(Error::Corrupt(format!(
            "parameter blob digest mismatch in {}",
            dir.display()
        )));
    }
    let params = bytes_to_params(&blob)?;
    let mut nets = Vec::with_capacity(manifest.nets.len());
    let mut off = 0usize;
    for spec in &manifest.nets {
        let mut rng = crate::nn::rng::seeded(0);
        let mut mlp = Mlp::new(&spec.layer_sizes, &spec.activations, &mut rng)?;
        let n = mlp.param_count();
        if off + n > params.len() {
            return Err(Error::Corrupt("parameter blob shorter than manifest".into()));
        }
        mlp.set_param_vector(&params[off..off + n])?;
        off += n;
        nets.push(mlp);
    }
    if off != params.len() {
        return Err(Error::Corrupt("parameter blob longer than manifest".into()));
    }
    Ok((manifest, nets))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BridgeExtra {
    variant: BridgeVariant,
    latent_dim: usize,
    norm: Normalization,
    augment: AugmentConfig,
    train: BridgeTrainConfig,
}

pub fn save_bridge(
    dir: &Path,
    model: &BridgeModel,
    augment: &AugmentConfig,
    train: &BridgeTrainConfig,
) -> Result<String> {
    let extra = serde_json::to_value(BridgeExtra {
        variant: model.variant,
        latent_dim: model.latent_dim,
        norm: model.norm.clone(),
        augment: augment.clone(),
        train: train.clone(),
    })?;
    save_checkpoint(
        dir,
        "bridge",
        &[("encoder", &model.encoder), ("decoder", &model.decoder)],
        BTreeMap::new(),
        extra,
    )
}

pub fn load_bridge(dir: &Path) -> Result<(BridgeModel, CheckpointManifest)> {
    let (manifest, mut nets) = load_checkpoint(dir)?;
    if manifest.kind != "bridge" || nets.len() != 2 {
        return Err(Error::Corrupt(format!(
            "expected bridge checkpoint at {}",
            dir.display()
        )));
    }
    let extra: BridgeExtra = serde_json::from_value(manifest.extra.clone())?;
    let decoder = nets.pop().unwrap();
    let encoder = nets.pop().unwrap();
    Ok((
        BridgeModel {
            variant: extra.variant,
            latent_dim: extra.latent_dim,
            encoder,
            decoder,
            norm: extra.norm,
        },
        manifest,
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SurrogateExtra {
    train: SurrogateTrainConfig,
    obs_norm: Normalization,
    plan_norm: Normalization,
    util_norm: Normalization,
}

pub fn save_surrogate(
    dir: &Path,
    model: &SurrogateModel,
    train: &SurrogateTrainConfig,
    state_bridge_hash: &str,
) -> Result<String> {
    let extra = serde_json::to_value(SurrogateExtra {
        train: train.clone(),
        obs_norm: model.obs_norm.clone(),
        plan_norm: model.plan_norm.clone(),
        util_norm: model.util_norm.clone(),
    })?;
    let mut inputs = BTreeMap::new();
    inputs.insert("state_bridge".to_string(), state_bridge_hash.to_string());
    save_checkpoint(
        dir,
        "surrogate",
        &[
            ("trunk", &model.trunk),
            ("utility_head", &model.utility_head),
            ("latent_head", &model.latent_head),
        ],
        inputs,
        extra,
    )
}

pub fn load_surrogate(dir: &Path) -> Result<(SurrogateModel, CheckpointManifest)> {
    let (manifest, mut nets) = load_checkpoint(dir)?;
    if manifest.kind != "surrogate" || nets.len() != 3 {
        return Err(Error::Corrupt(format!(
            "expected surrogate checkpoint at {}",
            dir.display()
        )));
    }
    let extra: SurrogateExtra = serde_json::from_value(manifest.extra.clone())?;
    let latent_head = nets.pop().unwrap();
    let utility_head = nets.pop().unwrap();
    let trunk = nets.pop().unwrap();
    Ok((
        SurrogateModel {
            trunk,
            utility_head,
            latent_head,
            eta: extra.train.eta,
            obs_norm: extra.obs_norm,
            plan_norm: extra.plan_norm,
            util_norm: extra.util_norm,
        },
        manifest,
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PlannerExtra {
    train: PlannerTrainConfig,
    window: usize,
    max_rate: f64,
    target: Vec<f64>,
    guided: bool,
    obs_norm: Normalization,
}

pub fn save_planner(
    dir: &Path,
    model: &PlannerModel,
    train: &PlannerTrainConfig,
    inputs: BTreeMap<String, String>,
) -> Result<String> {
    let extra = serde_json::to_value(PlannerExtra {
        train: train.clone(),
        window: model.window,
        max_rate: model.max_rate,
        target: model.target.clone(),
        guided: model.guided,
        obs_norm: model.obs_norm.clone(),
    })?;
    save_checkpoint(dir, "planner", &[("net", &model.net)], inputs, extra)
}

pub fn load_planner(dir: &Path) -> Result<(PlannerModel, CheckpointManifest)> {
    let (manifest, mut nets) = load_checkpoint(dir)?;
    if manifest.kind != "planner" || nets.len() != 1 {
        return Err(Error::Corrupt(format!(
            "expected planner checkpoint at {}",
            dir.display()
        )));
    }
    let extra: PlannerExtra = serde_json::from_value(manifest.extra.clone())?;
    Ok((
        PlannerModel {
            net: nets.pop().unwrap(),
            window: extra.window,
            max_rate: extra.max_rate,
            target: extra.target,
            guided: extra.guided,
            obs_norm: extra.obs_norm,
        },
        manifest,
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetMeta {
    schema_version: u32,
    config: EnvConfig,
    policy: Policy,
    seed: u64,
    n_traj: usize,
    horizon: usize,
    obs_dim: usize,
    plan_dim: usize,
    utility_dim: usize,
}

/// One directory per dataset: `meta.json` plus per-trajectory f64 LE
/// records of o, s, r in time order.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = DatasetMeta {
        schema_version: SCHEMA_VERSION,
        config: dataset.config.clone(),
        policy: dataset.policy,
        seed: dataset.seed,
        n_traj: dataset.trajectories.len(),
        horizon: dataset.config.horizon,
        obs_dim: dataset.config.state_dim(),
        plan_dim: dataset.config.plan_dim(),
        utility_dim: UTILITY_DIM,
    };
    write_atomic(&dir.join("meta.json"), &serde_json::to_vec_pretty(&meta)?)?;
    for (i, traj) in dataset.trajectories.iter().enumerate() {
        let mut flat = Vec::new();
        for t in 0..traj.len() {
            flat.extend_from_slice(&traj.states[t]);
            flat.extend_from_slice(&traj.plans[t]);
            flat.extend_from_slice(&traj.utilities[t]);
        }
        write_atomic(&dir.join(format!("traj_{i:04}.bin")), &params_to_bytes(&flat))?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_bytes = fs::read(dir.join("meta.json"))
        .map_err(|_| Error::MissingArtifact(format!("dataset at {}", dir.display())))?;
    let meta: DatasetMeta =
        serde_json::from_slice(&meta_bytes).map_err(|e| Error::Corrupt(format!("meta.json: {e}")))?;
    let step = meta.obs_dim + meta.plan_dim + meta.utility_dim;
    let mut trajectories = Vec::with_capacity(meta.n_traj);
    for i in 0..meta.n_traj {
        let path = dir.join(format!("traj_{i:04}.bin"));
        let bytes = fs::read(&path)
            .map_err(|_| Error::MissingArtifact(format!("{}", path.display())))?;
        let flat = bytes_to_params(&bytes)?;
        if flat.len() != step * meta.horizon {
            return Err(Error::Corrupt(format!(
                "trajectory {i}: expected {} values, got {}",
                step * meta.horizon,
                flat.len()
            )));
        }
        let mut traj = LifecycleTrajectory {
            states: Vec::with_capacity(meta.horizon),
            plans: Vec::with_capacity(meta.horizon),
            utilities: Vec::with_capacity(meta.horizon),
        };
        for t in 0..meta.horizon {
            let base = t * step;
            traj.states.push(flat[base..base + meta.obs_dim].to_vec());
            traj.plans
                .push(flat[base + meta.obs_dim..base + meta.obs_dim + meta.plan_dim].to_vec());
            traj.utilities
                .push(flat[base + meta.obs_dim + meta.plan_dim..base + step].to_vec());
        }
        trajectories.push(traj);
    }
    Ok(Dataset {
        config: meta.config,
        policy: meta.policy,
        seed: meta.seed,
        trajectories,
    })
}

/// Per-stage provenance record, written at stage completion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    /// Content hashes of every input artifact, keyed by role.
    pub inputs: BTreeMap<String, String>,
    pub wall_clock_secs: f64,
}

pub fn write_run_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(
        &dir.join("run_manifest.json"),
        &serde_json::to_vec_pretty(manifest)?,
    )
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// RFC-4180 CSV with a header row.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.iter().map(|h| csv_field(h)).collect::<Vec<_>>().join(","));
    out.push_str("\r\n");
    for row in rows {
        out.push_str(&row.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(","));
        out.push_str("\r\n");
    }
    write_atomic(path, out.as_bytes())
}

/// Shortest-roundtrip decimal formatting, deterministic across runs.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
