//! Trainable interaction-probability recommenders.
//!
//! Three families share one SGD loop and one serving interface: a logistic
//! matrix-factorization model, an MLP head over concatenated embeddings,
//! and a graph model that propagates embeddings over the user-item graph
//! before taking inner products. All of them expose `predict(u, i)` as a
//! probability, which is what the downstream hypothesis test consumes.

mod state;

pub use state::TrainState;

use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::seed::{derive_seed, Stream};
use crate::types::{ItemId, LabeledExample, UserId};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const CKPT_MAGIC: &[u8; 8] = b"RAMDL01\n";

/// Model families. The tags are stable: they appear in checkpoints,
/// manifests, and CLI flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelFamily {
    #[serde(rename = "mf-logit")]
    MfLogit,
    #[serde(rename = "ncf")]
    Ncf,
    #[serde(rename = "lightgcn")]
    LightGcn,
}

impl ModelFamily {
    fn tag(self) -> u8 {
        match self {
            ModelFamily::MfLogit => 0,
            ModelFamily::Ncf => 1,
            ModelFamily::LightGcn => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<ModelFamily> {
        match tag {
            0 => Some(ModelFamily::MfLogit),
            1 => Some(ModelFamily::Ncf),
            2 => Some(ModelFamily::LightGcn),
            _ => None,
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelFamily::MfLogit => "mf-logit",
            ModelFamily::Ncf => "ncf",
            ModelFamily::LightGcn => "lightgcn",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mf-logit" | "mf" => Ok(ModelFamily::MfLogit),
            "ncf" => Ok(ModelFamily::Ncf),
            "lightgcn" => Ok(ModelFamily::LightGcn),
            other => Err(Error::InvalidArgument(format!(
                "unknown model family `{other}` (expected mf-logit, ncf, or lightgcn)"
            ))),
        }
    }
}

/// SGD hyperparameters. `patience = 0` disables early stopping entirely;
/// otherwise training stops after that many consecutive epochs without a
/// validation hit-rate improvement and rolls back to the best epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub dim: usize,
    /// Propagation depth; only the graph family reads it.
    pub layers: usize,
    /// Cutoff for the early-stopping hit rate.
    pub eval_k: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 256,
            max_epochs: 30,
            patience: 5,
            dim: 64,
            layers: 3,
            eval_k: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument("max_epochs must be >= 1".into()));
        }
        if self.eval_k == 0 {
            return Err(Error::InvalidArgument("eval_k must be >= 1".into()));
        }
        Ok(())
    }
}

/// A trained model in serving form. For the graph family the stored
/// embeddings are already propagated and layer-averaged, so prediction is
/// uniform across families: a score from the embeddings (dot product or
/// MLP), squashed through a sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct RecModel {
    pub family: ModelFamily,
    pub config: TrainConfig,
    pub num_users: usize,
    pub num_items: usize,
    user_vecs: Vec<f64>,
    item_vecs: Vec<f64>,
    mlp: Vec<f64>,
}

/// Per-epoch trace of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// 1-based epoch whose parameters were kept; 0 when early stopping was
    /// disabled (final parameters kept).
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub epoch_losses: Vec<f64>,
    pub val_hit_rate: Vec<f64>,
}

/// Train one model with minibatch SGD on binary cross-entropy.
pub fn train(
    family: ModelFamily,
    ds: &InteractionDataset,
    examples: &[LabeledExample],
    cfg: &TrainConfig,
) -> Result<(RecModel, TrainReport)> {
    cfg.validate()?;
    for ex in examples {
        if ex.user.index() >= ds.num_users() {
            return Err(Error::IndexOutOfRange {
                entity: "user",
                id: ex.user.index(),
                size: ds.num_users(),
            });
        }
        if ex.item.index() >= ds.num_items() {
            return Err(Error::IndexOutOfRange {
                entity: "item",
                id: ex.item.index(),
                size: ds.num_items(),
            });
        }
    }
    let positives: Vec<(UserId, ItemId)> = examples
        .iter()
        .filter(|ex| ex.label)
        .map(|ex| (ex.user, ex.item))
        .collect();
    let mut st = TrainState::new(family, ds.num_users(), ds.num_items(), cfg, &positives)?;
    let train_items = if cfg.patience > 0 {
        Some(ds.train_items_by_user()?)
    } else {
        None
    };

    let mut order: Vec<u32> = (0..examples.len() as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, Stream::Shuffle, 0));
    let mut grad = vec![0.0; st.params.len()];
    let mut batch = Vec::with_capacity(cfg.batch_size);

    let mut report = TrainReport {
        epochs_run: 0,
        best_epoch: 0,
        stopped_early: false,
        epoch_losses: Vec::new(),
        val_hit_rate: Vec::new(),
    };
    let mut best: Option<(f64, Vec<f64>, usize)> = None;
    let mut stall = 0usize;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i as usize]));
            let loss = st.loss_and_grad(&batch, &mut grad);
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_no + 1,
                });
            }
            for (p, g) in st.params.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
            loss_sum += loss;
            batches += 1;
        }
        report.epochs_run = epoch;
        report
            .epoch_losses
            .push(if batches > 0 { loss_sum / batches as f64 } else { 0.0 });

        if let Some(train_items) = &train_items {
            let hr = validation_hit_rate(&st, ds, train_items, cfg.eval_k);
            report.val_hit_rate.push(hr);
            let improved = best.as_ref().is_none_or(|(b, _, _)| hr > *b);
            if improved {
                best = Some((hr, st.params.clone(), epoch));
                stall = 0;
            } else {
                stall += 1;
                if stall >= cfg.patience {
                    report.stopped_early = true;
                    break;
                }
            }
        }
    }
    if let Some((_, params, epoch)) = best {
        st.params = params;
        report.best_epoch = epoch;
    }
    Ok((into_model(st, cfg), report))
}

fn into_model(st: TrainState, cfg: &TrainConfig) -> RecModel {
    let (user_vecs, item_vecs) = st.serving_vectors();
    let mlp = match st.family {
        ModelFamily::Ncf => st.params[(st.num_users + st.num_items) * st.dim..].to_vec(),
        _ => Vec::new(),
    };
    RecModel {
        family: st.family,
        config: cfg.clone(),
        num_users: st.num_users,
        num_items: st.num_items,
        user_vecs,
        item_vecs,
        mlp,
    }
}

/// Fraction of users whose held-out validation item ranks in the top `k`
/// among items outside their train split. Ranking uses raw logits (the
/// sigmoid is monotone) with ties broken by ascending item id.
fn validation_hit_rate(
    st: &TrainState,
    ds: &InteractionDataset,
    train_items: &[Vec<u32>],
    k: usize,
) -> f64 {
    let dim = st.dim;
    let (fu, fi) = st.serving_vectors();
    let mlp_needed = st.family == ModelFamily::Ncf;
    let mlp = if mlp_needed {
        st.params[(st.num_users + st.num_items) * dim..].to_vec()
    } else {
        Vec::new()
    };
    let score = |u: usize, i: usize| -> f64 {
        if mlp_needed {
            let mut x = Vec::with_capacity(2 * dim);
            x.extend_from_slice(&fu[u * dim..(u + 1) * dim]);
            x.extend_from_slice(&fi[i * dim..(i + 1) * dim]);
            state::mlp_forward(&mlp, dim, &x).0
        } else {
            state::dot(&fu[u * dim..(u + 1) * dim], &fi[i * dim..(i + 1) * dim])
        }
    };
    let mut hits = 0usize;
    #[allow(clippy::needless_range_loop)] // u is a user id, not just a position
    for u in 0..ds.num_users() {
        let (val_item, _) = ds
            .holdout_items(UserId(u as u32))
            .expect("split checked by caller");
        let s_val = score(u, val_item.index());
        let mut ahead = 0usize;
        for i in 0..ds.num_items() {
            if i == val_item.index() || train_items[u].binary_search(&(i as u32)).is_ok() {
                continue;
            }
            let s = score(u, i);
            if s > s_val || (s == s_val && i < val_item.index()) {
                ahead += 1;
            }
        }
        if ahead < k {
            hits += 1;
        }
    }
    hits as f64 / ds.num_users().max(1) as f64
}

impl RecModel {
    fn check_ids(&self, user: UserId, item: ItemId) -> Result<()> {
        if user.index() >= self.num_users {
            return Err(Error::IndexOutOfRange {
                entity: "user",
                id: user.index(),
                size: self.num_users,
            });
        }
        if item.index() >= self.num_items {
            return Err(Error::IndexOutOfRange {
                entity: "item",
                id: item.index(),
                size: self.num_items,
            });
        }
        Ok(())
    }

    /// Pre-sigmoid score; exposed because ranking only needs the ordering.
    pub fn score(&self, user: UserId, item: ItemId) -> Result<f64> {
        self.check_ids(user, item)?;
        let d = self.config.dim;
        let uv = &self.user_vecs[user.index() * d..(user.index() + 1) * d];
        let iv = &self.item_vecs[item.index() * d..(item.index() + 1) * d];
        Ok(match self.family {
            ModelFamily::Ncf => {
                let mut x = Vec::with_capacity(2 * d);
                x.extend_from_slice(uv);
                x.extend_from_slice(iv);
                state::mlp_forward(&self.mlp, d, &x).0
            }
            _ => state::dot(uv, iv),
        })
    }

    /// Interaction probability in [0, 1].
    pub fn predict(&self, user: UserId, item: ItemId) -> Result<f64> {
        Ok(state::sigmoid(self.score(user, item)?))
    }

    /// The `k` highest-probability candidates, ties broken by ascending
    /// item id. `k` larger than the candidate set is clamped.
    pub fn top_k(&self, user: UserId, candidates: &[ItemId], k: usize) -> Result<Vec<ItemId>> {
        if candidates.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        let mut scored: Vec<(f64, ItemId)> = candidates
            .iter()
            .map(|&i| Ok((self.score(user, i)?, i)))
            .collect::<Result<_>>()?;
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("scores are finite")
                .then(a.1.cmp(&b.1))
        });
        scored.truncate(k.min(candidates.len()));
        Ok(scored.into_iter().map(|(_, i)| i).collect())
    }

    /// Serialize to the versioned binary checkpoint container.
    pub fn write_checkpoint(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(CKPT_MAGIC)?;
        w.write_u8(self.family.tag())?;
        w.write_f64::<LittleEndian>(self.config.learning_rate)?;
        for v in [
            self.config.batch_size,
            self.config.max_epochs,
            self.config.patience,
            self.config.dim,
            self.config.layers,
            self.config.eval_k,
        ] {
            w.write_u64::<LittleEndian>(v as u64)?;
        }
        w.write_u64::<LittleEndian>(self.config.seed)?;
        for v in [self.num_users, self.num_items, self.mlp.len()] {
            w.write_u64::<LittleEndian>(v as u64)?;
        }
        for x in self.user_vecs.iter().chain(&self.item_vecs).chain(&self.mlp) {
            w.write_f64::<LittleEndian>(*x)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_checkpoint(path: &Path) -> Result<RecModel> {
        let corrupt = |message: &str| Error::CorruptFile {
            path: path.display().to_string(),
            message: message.to_string(),
        };
        let mut r = BufReader::new(fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(corrupt("bad checkpoint magic"));
        }
        let family = ModelFamily::from_tag(r.read_u8()?)
            .ok_or_else(|| corrupt("unknown model family tag"))?;
        let learning_rate = r.read_f64::<LittleEndian>()?;
        let mut ints = [0u64; 6];
        for v in ints.iter_mut() {
            *v = r.read_u64::<LittleEndian>()?;
        }
        let seed = r.read_u64::<LittleEndian>()?;
        let num_users = r.read_u64::<LittleEndian>()? as usize;
        let num_items = r.read_u64::<LittleEndian>()? as usize;
        let mlp_len = r.read_u64::<LittleEndian>()? as usize;
        let config = TrainConfig {
            learning_rate,
            batch_size: ints[0] as usize,
            max_epochs: ints[1] as usize,
            patience: ints[2] as usize,
            dim: ints[3] as usize,
            layers: ints[4] as usize,
            eval_k: ints[5] as usize,
            seed,
        };
        let mut read_vec = |len: usize| -> Result<Vec<f64>> {
            let mut v = vec![0.0; len];
            for x in v.iter_mut() {
                *x = r.read_f64::<LittleEndian>()?;
            }
            Ok(v)
        };
        let user_vecs = read_vec(num_users * config.dim)?;
        let item_vecs = read_vec(num_items * config.dim)?;
        let mlp = read_vec(mlp_len)?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(corrupt("trailing bytes after parameter tensors"));
        }
        if family == ModelFamily::Ncf && mlp_len != state::mlp_param_len(config.dim) {
            return Err(corrupt("MLP tensor length inconsistent with dim"));
        }
        Ok(RecModel {
            family,
            config,
            num_users,
            num_items,
            user_vecs,
            item_vecs,
            mlp,
        })
    }
}
