//! On-disk form of an ensemble: a self-contained directory that later
//! pipeline stages read without touching the original inputs.
//!
//! Layout:
//! ```text
//! ensemble/
//!   manifest.json        resolved config, dataset hash, OUT fit
//!   manifest.sha256      hex digest of manifest.json (provenance guard)
//!   dataset.tsv          canonical dataset snapshot
//!   membership.bits      m x num_train bit matrix
//!   shadow_0000.ckpt ... one checkpoint per shadow model
//!   target.ckpt          audited model (optional)
//!   target_members.bits  1 x num_train bit row (optional)
//! ```
//! Nothing in the directory carries a timestamp, so the same config and
//! seed reproduce it byte for byte.

use super::{shadow_user_flags, BitMatrix, EnsembleConfig, ShadowEnsemble, ShadowRegime, TargetModel};
use crate::dataset::{read_canonical, InteractionDataset};
use crate::error::{Error, Result};
use crate::models::{ModelFamily, RecModel, TrainConfig};
use crate::stats::OutDistribution;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_HASH_FILE: &str = "manifest.sha256";
pub const DATASET_FILE: &str = "dataset.tsv";
pub const MEMBERSHIP_FILE: &str = "membership.bits";
pub const TARGET_CHECKPOINT_FILE: &str = "target.ckpt";
pub const TARGET_MEMBERS_FILE: &str = "target_members.bits";

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub family: ModelFamily,
    pub m: usize,
    pub seed: u64,
    pub train: TrainConfig,
    pub negative_ratio: usize,
    pub out_sample_cap: usize,
    pub regime: ShadowRegime,
    pub out_dist: OutDistribution,
    pub dataset_file: String,
    pub dataset_hash: String,
    pub num_users: usize,
    pub num_items: usize,
    pub num_train_interactions: usize,
    pub membership_file: String,
    pub shadow_checkpoints: Vec<String>,
    pub target_checkpoint: Option<String>,
    pub target_members_file: Option<String>,
}

impl Manifest {
    pub fn config(&self) -> EnsembleConfig {
        EnsembleConfig {
            m: self.m,
            family: self.family,
            train: self.train.clone(),
            negative_ratio: self.negative_ratio,
            out_sample_cap: self.out_sample_cap,
            regime: self.regime.clone(),
            seed: self.seed,
        }
    }
}

fn manifest_bytes(manifest: &Manifest) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(manifest)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Write the full directory. `target` is included when this run also
/// trained the audited model.
pub fn write_ensemble_dir(
    dir: &Path,
    ds: &InteractionDataset,
    ensemble: &ShadowEnsemble,
    target: Option<&TargetModel>,
) -> Result<String> {
    fs::create_dir_all(dir)?;
    ds.write_canonical(&dir.join(DATASET_FILE))?;
    ensemble.membership.write(&dir.join(MEMBERSHIP_FILE))?;
    let mut shadow_checkpoints = Vec::with_capacity(ensemble.models.len());
    for (j, model) in ensemble.models.iter().enumerate() {
        let name = format!("shadow_{j:04}.ckpt");
        model.write_checkpoint(&dir.join(&name))?;
        shadow_checkpoints.push(name);
    }
    let (target_checkpoint, target_members_file) = match target {
        None => (None, None),
        Some(t) => {
            t.model.write_checkpoint(&dir.join(TARGET_CHECKPOINT_FILE))?;
            let mut row = BitMatrix::zeros(1, t.members.len());
            for (r, &b) in t.members.iter().enumerate() {
                row.set(0, r, b);
            }
            row.write(&dir.join(TARGET_MEMBERS_FILE))?;
            (
                Some(TARGET_CHECKPOINT_FILE.to_string()),
                Some(TARGET_MEMBERS_FILE.to_string()),
            )
        }
    };
    let cfg = &ensemble.config;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        family: cfg.family,
        m: cfg.m,
        seed: cfg.seed,
        train: cfg.train.clone(),
        negative_ratio: cfg.negative_ratio,
        out_sample_cap: cfg.out_sample_cap,
        regime: cfg.regime.clone(),
        out_dist: ensemble.out_dist,
        dataset_file: DATASET_FILE.to_string(),
        dataset_hash: ds.content_hash(),
        num_users: ds.num_users(),
        num_items: ds.num_items(),
        num_train_interactions: ensemble.membership.cols(),
        membership_file: MEMBERSHIP_FILE.to_string(),
        shadow_checkpoints,
        target_checkpoint,
        target_members_file,
    };
    let bytes = manifest_bytes(&manifest)?;
    let hash = hex_digest(&bytes);
    fs::write(dir.join(MANIFEST_FILE), &bytes)?;
    fs::write(dir.join(MANIFEST_HASH_FILE), format!("{hash}\n"))?;
    Ok(hash)
}

/// Read and verify just the manifest: recomputed digest must match the
/// recorded one.
pub fn read_manifest(dir: &Path) -> Result<(Manifest, String)> {
    let bytes = fs::read(dir.join(MANIFEST_FILE))?;
    let computed = hex_digest(&bytes);
    let recorded = fs::read_to_string(dir.join(MANIFEST_HASH_FILE))?
        .trim()
        .to_string();
    if recorded != computed {
        return Err(Error::ManifestHashMismatch { recorded, computed });
    }
    let manifest: Manifest = serde_json::from_slice(&bytes)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::CorruptFile {
            path: dir.join(MANIFEST_FILE).display().to_string(),
            message: format!("unsupported manifest version {}", manifest.version),
        });
    }
    Ok((manifest, computed))
}

/// An ensemble directory pulled back into memory and cross-checked.
pub struct LoadedEnsemble {
    pub dataset: InteractionDataset,
    pub ensemble: ShadowEnsemble,
    pub target: Option<TargetModel>,
    pub manifest: Manifest,
    pub manifest_hash: String,
}

pub fn read_ensemble_dir(dir: &Path) -> Result<LoadedEnsemble> {
    let (manifest, manifest_hash) = read_manifest(dir)?;
    let corrupt = |file: &str, message: String| Error::CorruptFile {
        path: dir.join(file).display().to_string(),
        message,
    };

    // The canonical file stores raw interactions only; the leave-two-out
    // split is a pure function of them, so recompute it here.
    let dataset = read_canonical(&dir.join(&manifest.dataset_file))?;
    if dataset.content_hash() != manifest.dataset_hash {
        return Err(corrupt(
            &manifest.dataset_file,
            "dataset hash does not match manifest".into(),
        ));
    }
    let dataset = dataset.split_leave_two_out()?;
    if dataset.num_users() != manifest.num_users || dataset.num_items() != manifest.num_items {
        return Err(corrupt(
            &manifest.dataset_file,
            "dataset dimensions do not match manifest".into(),
        ));
    }
    let train_list = dataset.train_interactions()?;
    if train_list.len() != manifest.num_train_interactions {
        return Err(corrupt(
            &manifest.dataset_file,
            format!(
                "train set has {} interactions, manifest says {}",
                train_list.len(),
                manifest.num_train_interactions
            ),
        ));
    }

    let membership = BitMatrix::read(&dir.join(&manifest.membership_file))?;
    if membership.rows() != manifest.m || membership.cols() != train_list.len() {
        return Err(corrupt(
            &manifest.membership_file,
            format!(
                "bit matrix is {}x{}, expected {}x{}",
                membership.rows(),
                membership.cols(),
                manifest.m,
                train_list.len()
            ),
        ));
    }

    let mut models = Vec::with_capacity(manifest.m);
    for name in &manifest.shadow_checkpoints {
        let model = RecModel::read_checkpoint(&dir.join(name))?;
        if model.family != manifest.family {
            return Err(corrupt(
                name,
                format!(
                    "checkpoint family {} does not match manifest family {}",
                    model.family, manifest.family
                ),
            ));
        }
        models.push(model);
    }
    if models.len() != manifest.m {
        return Err(corrupt(
            MANIFEST_FILE,
            format!("{} checkpoints listed for m={}", models.len(), manifest.m),
        ));
    }

    let user_flags = shadow_user_flags(dataset.num_users(), &manifest.regime, manifest.seed)?;
    let scope: Vec<bool> = train_list
        .iter()
        .map(|x| user_flags[x.user.index()])
        .collect();

    let ensemble = ShadowEnsemble {
        config: manifest.config(),
        membership,
        scope,
        models,
        out_dist: manifest.out_dist,
    };

    let target = match (&manifest.target_checkpoint, &manifest.target_members_file) {
        (Some(ckpt), Some(members_file)) => {
            let model = RecModel::read_checkpoint(&dir.join(ckpt))?;
            if model.family != manifest.family {
                return Err(corrupt(ckpt, "target family does not match manifest".into()));
            }
            let row = BitMatrix::read(&dir.join(members_file))?;
            if row.rows() != 1 || row.cols() != train_list.len() {
                return Err(corrupt(
                    members_file,
                    "target member row has wrong shape".into(),
                ));
            }
            let members: Vec<bool> = (0..row.cols()).map(|c| row.get(0, c)).collect();
            let target_scope: Vec<bool> = match manifest.regime {
                ShadowRegime::SelfAudit => vec![true; train_list.len()],
                ShadowRegime::UserSplit { .. } => train_list
                    .iter()
                    .map(|x| !user_flags[x.user.index()])
                    .collect(),
            };
            Some(TargetModel {
                model,
                members,
                scope: target_scope,
            })
        }
        (None, None) => None,
        _ => {
            return Err(corrupt(
                MANIFEST_FILE,
                "target checkpoint and member file must be present together".into(),
            ))
        }
    };

    Ok(LoadedEnsemble {
        dataset,
        ensemble,
        target,
        manifest,
        manifest_hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth;
    use crate::shadow::{build_ensemble, build_target};

    fn built() -> (InteractionDataset, ShadowEnsemble, TargetModel) {
        let ds = synth::mia_toy(41).split_leave_two_out().unwrap();
        let cfg = EnsembleConfig {
            m: 3,
            train: TrainConfig {
                dim: 4,
                max_epochs: 2,
                patience: 0,
                learning_rate: 8.0,
                ..TrainConfig::default()
            },
            seed: 99,
            ..EnsembleConfig::default()
        };
        let ens = build_ensemble(&ds, &cfg).unwrap();
        let target = build_target(&ds, &cfg).unwrap();
        (ds, ens, target)
    }

    #[test]
    fn directory_round_trips() {
        let (ds, ens, target) = built();
        let dir = tempfile::tempdir().unwrap();
        let hash = write_ensemble_dir(dir.path(), &ds, &ens, Some(&target)).unwrap();
        let loaded = read_ensemble_dir(dir.path()).unwrap();
        assert_eq!(loaded.manifest_hash, hash);
        assert_eq!(loaded.manifest.m, 3);
        assert_eq!(loaded.ensemble.models, ens.models);
        assert_eq!(loaded.ensemble.membership, ens.membership);
        assert_eq!(loaded.ensemble.scope, ens.scope);
        assert_eq!(loaded.ensemble.out_dist, ens.out_dist);
        assert_eq!(loaded.dataset.num_users(), ds.num_users());
        let t = loaded.target.unwrap();
        assert_eq!(t.members, target.members);
        assert_eq!(t.scope, target.scope);
        assert_eq!(t.model, target.model);
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let (ds, ens, target) = built();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let h1 = write_ensemble_dir(d1.path(), &ds, &ens, Some(&target)).unwrap();
        let h2 = write_ensemble_dir(d2.path(), &ds, &ens, Some(&target)).unwrap();
        assert_eq!(h1, h2);
        for name in [MANIFEST_FILE, DATASET_FILE, MEMBERSHIP_FILE, "shadow_0001.ckpt"] {
            let a = fs::read(d1.path().join(name)).unwrap();
            let b = fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs");
        }
    }

    #[test]
    fn tampered_manifest_is_refused() {
        let (ds, ens, _) = built();
        let dir = tempfile::tempdir().unwrap();
        write_ensemble_dir(dir.path(), &ds, &ens, None).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let mut text = fs::read_to_string(&path).unwrap();
        text = text.replace("\"m\": 3", "\"m\": 4");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            read_ensemble_dir(dir.path()),
            Err(Error::ManifestHashMismatch { .. })
        ));
    }

    #[test]
    fn tampered_dataset_is_refused() {
        let (ds, ens, _) = built();
        let dir = tempfile::tempdir().unwrap();
        write_ensemble_dir(dir.path(), &ds, &ens, None).unwrap();
        let path = dir.path().join(DATASET_FILE);
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("u_extra\ti_extra\t99\n");
        fs::write(&path, text).unwrap();
        // Header counts no longer match the body, or the hash fails; either
        // way the load is rejected.
        assert!(read_ensemble_dir(dir.path()).is_err());
    }

    #[test]
    fn missing_target_loads_as_none() {
        let (ds, ens, _) = built();
        let dir = tempfile::tempdir().unwrap();
        write_ensemble_dir(dir.path(), &ds, &ens, None).unwrap();
        let loaded = read_ensemble_dir(dir.path()).unwrap();
        assert!(loaded.target.is_none());
    }
}
