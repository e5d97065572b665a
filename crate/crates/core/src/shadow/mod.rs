//! Shadow-model ensembles: the reference population for the membership
//! hypothesis test.
//!
//! Each of the m shadow models trains on an independent Bernoulli(0.5)
//! subsample of the audited training interactions. For any interaction,
//! the models that did *not* train on it provide OUT samples of the test
//! statistic; pooled across the ensemble they calibrate a single global
//! OUT distribution.

pub mod store;

pub use store::{read_ensemble_dir, read_manifest, write_ensemble_dir, LoadedEnsemble, Manifest};

use crate::dataset::{sample_user_negatives, InteractionDataset};
use crate::error::{Error, Result};
use crate::models::{train, ModelFamily, RecModel, TrainConfig};
use crate::seed::{derive_seed, Stream};
use crate::stats::{fit_out_distribution, probability_to_logit_gap, OutDistribution};
use crate::types::{Interaction, ItemId, LabeledExample, UserId};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const BITS_MAGIC: &[u8; 8] = b"RABITS1\n";

/// Row-major bit matrix; row j holds shadow model j's membership bits over
/// the training interactions (stable train order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> BitMatrix {
        let words_per_row = cols.div_ceil(64);
        BitMatrix {
            rows,
            cols,
            words_per_row,
            words: vec![0; rows * words_per_row],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        debug_assert!(row < self.rows && col < self.cols);
        let w = self.words[row * self.words_per_row + col / 64];
        (w >> (col % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        debug_assert!(row < self.rows && col < self.cols);
        let w = &mut self.words[row * self.words_per_row + col / 64];
        if value {
            *w |= 1 << (col % 64);
        } else {
            *w &= !(1 << (col % 64));
        }
    }

    /// Number of set bits in a column (how many shadow sets contain the
    /// interaction).
    pub fn column_count(&self, col: usize) -> usize {
        (0..self.rows).filter(|&r| self.get(r, col)).count()
    }

    pub fn row_count(&self, row: usize) -> usize {
        let start = row * self.words_per_row;
        self.words[start..start + self.words_per_row]
            .iter()
            .map(|w| w.count_ones() as usize)
            .sum()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(BITS_MAGIC)?;
        w.write_u64::<LittleEndian>(self.rows as u64)?;
        w.write_u64::<LittleEndian>(self.cols as u64)?;
        for word in &self.words {
            w.write_u64::<LittleEndian>(*word)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<BitMatrix> {
        let corrupt = |message: &str| Error::CorruptFile {
            path: path.display().to_string(),
            message: message.to_string(),
        };
        let mut r = BufReader::new(fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BITS_MAGIC {
            return Err(corrupt("bad bit-matrix magic"));
        }
        let rows = r.read_u64::<LittleEndian>()? as usize;
        let cols = r.read_u64::<LittleEndian>()? as usize;
        let words_per_row = cols.div_ceil(64);
        let mut words = vec![0u64; rows * words_per_row];
        for w in words.iter_mut() {
            *w = r.read_u64::<LittleEndian>()?;
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(corrupt("trailing bytes after bit rows"));
        }
        Ok(BitMatrix {
            rows,
            cols,
            words_per_row,
            words,
        })
    }
}

/// Which population the shadow models sample from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ShadowRegime {
    /// Shadows subsample the same training set the audit scores
    /// (self-audit: the auditor owns the data).
    SelfAudit,
    /// Shadows train only on a disjoint, seeded fraction of users; the
    /// remaining users form the attack's target population.
    UserSplit { shadow_user_fraction: f64 },
}

/// Everything that determines an ensemble besides the dataset itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub m: usize,
    pub family: ModelFamily,
    pub train: TrainConfig,
    pub negative_ratio: usize,
    /// Cap on pooled OUT statistic samples used for the Gaussian fit.
    pub out_sample_cap: usize,
    pub regime: ShadowRegime,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            m: 64,
            family: ModelFamily::MfLogit,
            train: TrainConfig::default(),
            negative_ratio: 4,
            out_sample_cap: 10_000,
            regime: ShadowRegime::SelfAudit,
            seed: 0,
        }
    }
}

/// A built ensemble, held in memory.
pub struct ShadowEnsemble {
    pub config: EnsembleConfig,
    /// m × num_train membership bits.
    pub membership: BitMatrix,
    /// Per train interaction: does it belong to the shadow population?
    /// All-true under self-audit.
    pub scope: Vec<bool>,
    pub models: Vec<RecModel>,
    pub out_dist: OutDistribution,
}

/// Per-user flags: true when the user belongs to the shadow population.
pub fn shadow_user_flags(
    num_users: usize,
    regime: &ShadowRegime,
    seed: u64,
) -> Result<Vec<bool>> {
    match regime {
        ShadowRegime::SelfAudit => Ok(vec![true; num_users]),
        ShadowRegime::UserSplit {
            shadow_user_fraction,
        } => {
            let f = *shadow_user_fraction;
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidArgument(format!(
                    "shadow_user_fraction {f} outside [0,1]"
                )));
            }
            let count = (f * num_users as f64).round() as usize;
            if count == 0 || count == num_users {
                return Err(Error::InvalidArgument(format!(
                    "shadow_user_fraction {f} leaves one population empty ({count} of {num_users} users)"
                )));
            }
            let mut ids: Vec<u32> = (0..num_users as u32).collect();
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Population, 0));
            use rand::seq::SliceRandom;
            ids.shuffle(&mut rng);
            let mut flags = vec![false; num_users];
            for &u in &ids[..count] {
                flags[u as usize] = true;
            }
            Ok(flags)
        }
    }
}

/// Bernoulli(0.5) membership rows over the full training set.
pub fn sample_shadow_datasets(
    ds: &InteractionDataset,
    m: usize,
    seed: u64,
) -> Result<BitMatrix> {
    let num_train = ds.train_interactions()?.len();
    sample_membership(num_train, None, m, seed)
}

fn sample_membership(
    num_train: usize,
    scope: Option<&[bool]>,
    m: usize,
    seed: u64,
) -> Result<BitMatrix> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 shadow models, got {m}"
        )));
    }
    let mut bits = BitMatrix::zeros(m, num_train);
    for j in 0..m {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Membership, j as u64));
        let row = j * bits.words_per_row;
        for w in 0..bits.words_per_row {
            bits.words[row + w] = rng.random::<u64>();
        }
        // Clear bits past the column count so files are canonical.
        let tail = num_train % 64;
        if tail != 0 {
            bits.words[row + bits.words_per_row - 1] &= (1u64 << tail) - 1;
        }
    }
    if let Some(scope) = scope {
        for (r, &keep) in scope.iter().enumerate() {
            if !keep {
                for j in 0..m {
                    bits.set(j, r, false);
                }
            }
        }
    }
    Ok(bits)
}

/// Training examples for a model that owns the member subset selected by
/// `is_member`: the member positives (train order) plus `ratio` negatives
/// per positive, drawn per user while avoiding only the items this subset
/// observes.
pub fn subset_examples(
    ds: &InteractionDataset,
    train: &[Interaction],
    is_member: impl Fn(usize) -> bool,
    ratio: usize,
    seed: u64,
) -> Result<Vec<LabeledExample>> {
    let mut examples = Vec::new();
    let mut items_by_user: Vec<Vec<u32>> = vec![Vec::new(); ds.num_users()];
    for (r, x) in train.iter().enumerate() {
        if is_member(r) {
            examples.push(LabeledExample {
                user: x.user,
                item: x.item,
                label: true,
            });
            items_by_user[x.user.index()].push(x.item.0);
        }
    }
    for (u, items) in items_by_user.iter_mut().enumerate() {
        if items.is_empty() {
            continue;
        }
        items.sort_unstable();
        let need = ratio * items.len();
        let negatives = sample_user_negatives(
            ds.user_key(UserId(u as u32)),
            need,
            items,
            ds.num_items(),
            derive_seed(seed, Stream::Negatives, u as u64),
        )?;
        examples.extend(negatives.into_iter().map(|item| LabeledExample {
            user: UserId(u as u32),
            item,
            label: false,
        }));
    }
    Ok(examples)
}

/// Deterministically pick `cap` distinct indices from `0..total` (sorted),
/// or `None` when everything fits.
fn select_out_indices(total: usize, cap: usize, seed: u64) -> Option<Vec<u64>> {
    if total <= cap {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: HashSet<u64> = HashSet::with_capacity(cap);
    while chosen.len() < cap {
        chosen.insert(rng.random_range(0..total as u64));
    }
    let mut v: Vec<u64> = chosen.into_iter().collect();
    v.sort_unstable();
    Some(v)
}

/// Train the m shadow models and fit the pooled OUT distribution.
///
/// Model j depends only on its membership row, the training config, and
/// `derive_seed(seed, ShadowModel, j)`, so any single model can be
/// reproduced in isolation. Trainings run on the current rayon pool;
/// results are gathered by model index.
pub fn build_ensemble(ds: &InteractionDataset, cfg: &EnsembleConfig) -> Result<ShadowEnsemble> {
    if ds.num_interactions() == 0 {
        return Err(Error::EmptyDataset("<in-memory>".into()));
    }
    let train_list = ds.train_interactions()?;
    let n = train_list.len();
    let user_flags = shadow_user_flags(ds.num_users(), &cfg.regime, cfg.seed)?;
    let scope: Vec<bool> = train_list
        .iter()
        .map(|x| user_flags[x.user.index()])
        .collect();
    let membership = sample_membership(n, Some(&scope), cfg.m, cfg.seed)?;

    // Decide up front which OUT samples feed the Gaussian fit, so workers
    // only evaluate what is kept.
    let out_counts: Vec<usize> = (0..cfg.m)
        .map(|j| (0..n).filter(|&r| scope[r] && !membership.get(j, r)).count())
        .collect();
    let mut offsets = vec![0u64; cfg.m + 1];
    for j in 0..cfg.m {
        offsets[j + 1] = offsets[j] + out_counts[j] as u64;
    }
    let total_out = offsets[cfg.m] as usize;
    let selected = select_out_indices(
        total_out,
        cfg.out_sample_cap,
        derive_seed(cfg.seed, Stream::OutSubsample, 0),
    );

    let jobs: Vec<usize> = (0..cfg.m).collect();
    let results: Result<Vec<(RecModel, Vec<f64>)>> = jobs
        .par_iter()
        .map(|&j| {
            let model_seed = derive_seed(cfg.seed, Stream::ShadowModel, j as u64);
            let examples = subset_examples(
                ds,
                &train_list,
                |r| membership.get(j, r),
                cfg.negative_ratio,
                model_seed,
            )?;
            let tcfg = TrainConfig {
                seed: model_seed,
                ..cfg.train.clone()
            };
            let (model, _) = train(cfg.family, ds, &examples, &tcfg)?;

            // φ over this model's kept OUT interactions, in train order.
            let keep_local: Option<Vec<u64>> = selected.as_ref().map(|sel| {
                let lo = sel.partition_point(|&x| x < offsets[j]);
                let hi = sel.partition_point(|&x| x < offsets[j + 1]);
                sel[lo..hi].iter().map(|&x| x - offsets[j]).collect()
            });
            let mut phis = Vec::new();
            let mut local = 0u64;
            let mut cursor = 0usize;
            for (r, x) in train_list.iter().enumerate() {
                if !(scope[r] && !membership.get(j, r)) {
                    continue;
                }
                let keep = match &keep_local {
                    None => true,
                    Some(sel) => {
                        if cursor < sel.len() && sel[cursor] == local {
                            cursor += 1;
                            true
                        } else {
                            false
                        }
                    }
                };
                if keep {
                    let p = model.predict(x.user, x.item)?;
                    phis.push(probability_to_logit_gap(p));
                }
                local += 1;
            }
            Ok((model, phis))
        })
        .collect();
    let results = results?;

    let mut models = Vec::with_capacity(cfg.m);
    let mut out_phis = Vec::new();
    for (model, phis) in results {
        models.push(model);
        out_phis.extend(phis);
    }
    let out_dist = fit_out_distribution(&out_phis)?;
    Ok(ShadowEnsemble {
        config: cfg.clone(),
        membership,
        scope,
        models,
        out_dist,
    })
}

impl ShadowEnsemble {
    pub fn m(&self) -> usize {
        self.config.m
    }

    /// The per-model logit-gap statistics for one (user, item) pair.
    pub fn phi(&self, user: UserId, item: ItemId) -> Result<Vec<f64>> {
        self.models
            .iter()
            .map(|m| Ok(probability_to_logit_gap(m.predict(user, item)?)))
            .collect()
    }
}

/// The audited model plus the ground truth of what it trained on.
pub struct TargetModel {
    pub model: RecModel,
    /// Per train interaction: did the target train on it?
    pub members: Vec<bool>,
    /// Per train interaction: is it eligible for audit under the regime?
    /// (Under a user split, only non-shadow users' interactions are.)
    pub scope: Vec<bool>,
}

/// Train the audited target model on a Bernoulli(0.5) subset of the
/// in-scope training interactions, mirroring the shadow procedure.
pub fn build_target(ds: &InteractionDataset, cfg: &EnsembleConfig) -> Result<TargetModel> {
    let train_list = ds.train_interactions()?;
    let user_flags = shadow_user_flags(ds.num_users(), &cfg.regime, cfg.seed)?;
    let scope: Vec<bool> = match cfg.regime {
        ShadowRegime::SelfAudit => vec![true; train_list.len()],
        ShadowRegime::UserSplit { .. } => train_list
            .iter()
            .map(|x| !user_flags[x.user.index()])
            .collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, Stream::Target, 0));
    let members: Vec<bool> = scope.iter().map(|&s| rng.random::<bool>() && s).collect();
    let train_seed = derive_seed(cfg.seed, Stream::Target, 1);
    let examples = subset_examples(
        ds,
        &train_list,
        |r| members[r],
        cfg.negative_ratio,
        train_seed,
    )?;
    let tcfg = TrainConfig {
        seed: train_seed,
        ..cfg.train.clone()
    };
    let (model, _) = train(cfg.family, ds, &examples, &tcfg)?;
    Ok(TargetModel {
        model,
        members,
        scope,
    })
}
