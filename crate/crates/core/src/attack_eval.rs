//! Running the audit as an attack against one target model, and the
//! metrics that grade it: exact ROC, AUC, TPR at fixed low FPR, and the
//! recommender's own HR@k utility.

use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::models::RecModel;
use crate::seed::{derive_seed, Stream};
use crate::shadow::{ShadowEnsemble, TargetModel};
use crate::stats::probability_to_logit_gap;
use crate::types::{Interaction, ItemId, UserId};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Fixed FPR grid for the low-false-positive readout.
pub const FPR_GRID: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];

/// The membership statistic for one (user, item) against the target:
/// the target's logit gap located in the ensemble's OUT distribution.
/// Higher means more member-like.
pub fn attack_statistic(
    ensemble: &ShadowEnsemble,
    target: &RecModel,
    user: UserId,
    item: ItemId,
) -> Result<f64> {
    let p = target.predict(user, item)?;
    Ok(ensemble.out_dist.lambda(probability_to_logit_gap(p)))
}

/// An exact ROC curve: one point per distinct statistic value, no binning.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// (fpr, tpr) pairs, both non-decreasing, from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    pub score_name: String,
}

/// Sweep every distinct statistic value as a threshold (prediction:
/// statistic > t) and integrate by trapezoid.
pub fn roc(stats: &[(f64, bool)], score_name: &str) -> Result<RocCurve> {
    let pos_n = stats.iter().filter(|(_, l)| *l).count();
    let neg_n = stats.len() - pos_n;
    if pos_n == 0 || neg_n == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..stats.len()).collect();
    order.sort_by(|&a, &b| stats[b].0.total_cmp(&stats[a].0));

    let mut points = Vec::with_capacity(stats.len() + 1);
    points.push((0.0, 0.0));
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let value = stats[order[i]].0;
        while i < order.len() && stats[order[i]].0 == value {
            if stats[order[i]].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg_n as f64, tp as f64 / pos_n as f64));
    }
    let mut auc = 0.0;
    for w in points.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        auc += (x1 - x0) * (y0 + y1) * 0.5;
    }
    Ok(RocCurve {
        points,
        auc,
        score_name: score_name.to_string(),
    })
}

impl RocCurve {
    /// TPR at a given FPR, linearly interpolated along the curve. At an
    /// FPR where the curve is vertical, returns the top of the jump.
    pub fn tpr_at_fpr(&self, fpr: f64) -> f64 {
        let mut best = 0.0f64;
        for w in self.points.windows(2) {
            let (x0, y0) = w[0];
            let (x1, y1) = w[1];
            if fpr < x0 || fpr > x1 {
                continue;
            }
            let y = if x1 > x0 {
                y0 + (y1 - y0) * (fpr - x0) / (x1 - x0)
            } else {
                y1
            };
            if y > best {
                best = y;
            }
        }
        best
    }

    /// TPR readout over [`FPR_GRID`].
    pub fn low_fpr_readout(&self) -> [(f64, f64); 4] {
        FPR_GRID.map(|f| (f, self.tpr_at_fpr(f)))
    }

    /// `fpr,tpr` rows — the format the curves are plotted from.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for &(fpr, tpr) in &self.points {
            out.push_str(&format!("{fpr},{tpr}\n"));
        }
        out
    }
}

/// A balanced, seeded evaluation population: equal counts of member and
/// non-member training interactions of the target, drawn without
/// replacement. `per_class` limits each side; `None` takes as many as the
/// smaller class allows.
pub fn build_eval_population(
    ds: &InteractionDataset,
    target: &TargetModel,
    per_class: Option<usize>,
    seed: u64,
) -> Result<Vec<(Interaction, bool)>> {
    let train = ds.train_interactions()?;
    let mut members: Vec<usize> = Vec::new();
    let mut non_members: Vec<usize> = Vec::new();
    for (r, _) in train.iter().enumerate() {
        if !target.scope[r] {
            continue;
        }
        if target.members[r] {
            members.push(r);
        } else {
            non_members.push(r);
        }
    }
    if members.is_empty() || non_members.is_empty() {
        return Err(Error::SingleClass);
    }
    let mut n = members.len().min(non_members.len());
    if let Some(cap) = per_class {
        if cap == 0 {
            return Err(Error::InvalidArgument(
                "evaluation population size must be positive".into(),
            ));
        }
        n = n.min(cap);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Eval, 0));
    members.shuffle(&mut rng);
    non_members.shuffle(&mut rng);
    let mut population = Vec::with_capacity(2 * n);
    for &r in &members[..n] {
        population.push((train[r], true));
    }
    for &r in &non_members[..n] {
        population.push((train[r], false));
    }
    Ok(population)
}

/// Λ statistics for a population against the target, parallel per
/// interaction, in population order.
pub fn collect_statistics(
    ensemble: &ShadowEnsemble,
    target: &RecModel,
    population: &[(Interaction, bool)],
) -> Result<Vec<(f64, bool)>> {
    population
        .par_iter()
        .map(|&(x, label)| Ok((attack_statistic(ensemble, target, x.user, x.item)?, label)))
        .collect()
}

/// Single-point baseline: classify member when Λ > 0.5. Returns
/// (tpr, fpr). A threshold search should dominate this.
pub fn global_threshold_point(stats: &[(f64, bool)]) -> (f64, f64) {
    let (lambdas, labels): (Vec<f64>, Vec<bool>) = stats.iter().copied().unzip();
    crate::scoring::global_threshold_rates(&lambdas, &labels, 0.5)
}

/// Fraction of users whose held-out test item ranks in the model's top k.
/// Candidates per user: every item the user did not train or validate on
/// (the test item itself stays in).
pub fn hit_rate_at_k(model: &RecModel, ds: &InteractionDataset, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let train_items = ds.train_items_by_user()?;
    let users: Vec<(UserId, ItemId, ItemId)> = (0..ds.num_users() as u32)
        .filter_map(|u| {
            let user = UserId(u);
            ds.holdout_items(user).map(|(val, test)| (user, val, test))
        })
        .collect();
    if users.is_empty() {
        return Err(Error::InvalidArgument(
            "no users with held-out items".into(),
        ));
    }
    let hits: Result<Vec<bool>> = users
        .par_iter()
        .map(|&(user, val, test)| {
            let excluded = &train_items[user.index()];
            let candidates: Vec<ItemId> = (0..ds.num_items() as u32)
                .map(ItemId)
                .filter(|&i| i != val && excluded.binary_search(&i.0).is_err())
                .collect();
            let top = model.top_k(user, &candidates, k)?;
            Ok(top.contains(&test))
        })
        .collect();
    let hits = hits?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

/// The flat key=value summary written next to the ROC.
pub fn metrics_text(
    curve: &RocCurve,
    baseline: (f64, f64),
    hr_at_k: Option<(usize, f64)>,
    manifest_hash: &str,
) -> String {
    let mut out = String::new();
    out.push_str(&format!("score={}\n", curve.score_name));
    out.push_str(&format!("auc={}\n", curve.auc));
    for (fpr, tpr) in curve.low_fpr_readout() {
        out.push_str(&format!("tpr@fpr={fpr}={tpr}\n"));
    }
    out.push_str(&format!(
        "baseline_tpr@0.5={}\nbaseline_fpr@0.5={}\n",
        baseline.0, baseline.1
    ));
    if let Some((k, hr)) = hr_at_k {
        out.push_str(&format!("hr@{k}={hr}\n"));
    }
    out.push_str(&format!("ensemble_manifest_sha256={manifest_hash}\n"));
    out
}
