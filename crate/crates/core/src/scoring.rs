//! Per-interaction privacy scores and their user-level aggregation.
//!
//! An interaction's score answers: across the shadow ensemble, how sharply
//! does thresholding the Λ statistic distinguish models that trained on it
//! from models that did not? Concretely it is the maximum of ln(TPR/FPR)
//! over thresholds taken from the OUT models' own Λ values, floored at 0.
//! A score of ln 2 means some threshold catches members at twice its false
//! positive rate; 0 means no OUT-derived threshold beats chance.

use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::shadow::ShadowEnsemble;
use crate::types::{Interaction, ItemId, UserId};
use rayon::prelude::*;
use std::collections::HashMap;

/// Maximum ln(TPR/FPR) over OUT-derived thresholds, floored at zero.
///
/// `lambdas[j]` is shadow model j's Λ for the interaction and `labels[j]`
/// whether j trained on it. Thresholding is strict (Λ > t), so a threshold
/// equal to an OUT model's own Λ classifies that model itself as OUT.
/// Thresholds with FPR = 0 are skipped, which caps a perfectly separated
/// interaction at ln(#OUT) rather than infinity.
///
/// The caller must guarantee both classes are present.
pub fn max_log_tpr_fpr(lambdas: &[f64], labels: &[bool]) -> f64 {
    debug_assert_eq!(lambdas.len(), labels.len());
    let in_n = labels.iter().filter(|&&l| l).count();
    let out_n = labels.len() - in_n;
    debug_assert!(in_n > 0 && out_n > 0);

    // Sweep distinct Λ values in descending order, tracking how many of
    // each class lie strictly above the current value. Whenever the value
    // belongs to at least one OUT model it is a candidate threshold.
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));

    let mut best = 0.0f64;
    let mut in_above = 0usize;
    let mut out_above = 0usize;
    let mut i = 0;
    while i < order.len() {
        let value = lambdas[order[i]];
        // Consume the tie group for this value.
        let mut group_in = 0usize;
        let mut group_out = 0usize;
        while i < order.len() && lambdas[order[i]] == value {
            if labels[order[i]] {
                group_in += 1;
            } else {
                group_out += 1;
            }
            i += 1;
        }
        if group_out > 0 && out_above > 0 {
            let tpr = in_above as f64 / in_n as f64;
            let fpr = out_above as f64 / out_n as f64;
            let candidate = (tpr / fpr).ln();
            if candidate > best {
                best = candidate;
            }
        }
        in_above += group_in;
        out_above += group_out;
    }
    best
}

/// TPR/FPR of the fixed-threshold classifier Λ > t. Diagnostic only; the
/// scored path searches thresholds instead of fixing one.
pub fn global_threshold_rates(lambdas: &[f64], labels: &[bool], threshold: f64) -> (f64, f64) {
    let in_n = labels.iter().filter(|&&l| l).count().max(1);
    let out_n = (labels.len() - in_n.min(labels.len())).max(1);
    let mut in_above = 0usize;
    let mut out_above = 0usize;
    for (l, &s) in labels.iter().zip(lambdas) {
        if s > threshold {
            if *l {
                in_above += 1;
            } else {
                out_above += 1;
            }
        }
    }
    (in_above as f64 / in_n as f64, out_above as f64 / out_n as f64)
}

/// Scoring context: the ensemble plus the train-order index that ties each
/// (user, item) back to its membership column.
pub struct Scorer<'a> {
    ensemble: &'a ShadowEnsemble,
    train: Vec<Interaction>,
    index: HashMap<(u32, u32), usize>,
    by_user: Vec<Vec<usize>>,
    num_users: usize,
}

impl<'a> Scorer<'a> {
    pub fn new(ds: &InteractionDataset, ensemble: &'a ShadowEnsemble) -> Result<Scorer<'a>> {
        let train = ds.train_interactions()?;
        if train.len() != ensemble.membership.cols() {
            return Err(Error::InvalidArgument(format!(
                "membership matrix covers {} interactions, dataset has {}",
                ensemble.membership.cols(),
                train.len()
            )));
        }
        let mut index = HashMap::with_capacity(train.len());
        let mut by_user = vec![Vec::new(); ds.num_users()];
        for (r, x) in train.iter().enumerate() {
            index.insert((x.user.0, x.item.0), r);
            by_user[x.user.index()].push(r);
        }
        Ok(Scorer {
            ensemble,
            train,
            index,
            by_user,
            num_users: ds.num_users(),
        })
    }

    fn score_index(&self, r: usize) -> Result<f64> {
        let x = self.train[r];
        let m = self.ensemble.m();
        let in_n = (0..m)
            .filter(|&j| self.ensemble.membership.get(j, r))
            .count();
        if in_n == 0 || in_n == m {
            return Err(Error::DegenerateMembership {
                user: x.user.to_string(),
                item: x.item.to_string(),
                side: if in_n == 0 { "OUT" } else { "IN" },
            });
        }
        let phis = self.ensemble.phi(x.user, x.item)?;
        let lambdas: Vec<f64> = phis
            .iter()
            .map(|&phi| self.ensemble.out_dist.lambda(phi))
            .collect();
        let labels: Vec<bool> = (0..m).map(|j| self.ensemble.membership.get(j, r)).collect();
        Ok(max_log_tpr_fpr(&lambdas, &labels))
    }

    /// Score one training interaction identified by (user, item).
    pub fn score_interaction(&self, user: UserId, item: ItemId) -> Result<f64> {
        let r = self.index.get(&(user.0, item.0)).copied().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "interaction ({user}, {item}) is not a training interaction"
            ))
        })?;
        self.score_index(r)
    }

    /// All of a user's training interactions scored, plus their mean.
    pub fn score_query(&self, user: UserId) -> Result<(Vec<(ItemId, f64)>, f64)> {
        if user.index() >= self.num_users {
            return Err(Error::IndexOutOfRange {
                entity: "user",
                id: user.index(),
                size: self.num_users,
            });
        }
        let rows = &self.by_user[user.index()];
        if rows.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "user {user} has no training interactions"
            )));
        }
        let mut scores = Vec::with_capacity(rows.len());
        let mut sum = 0.0;
        for &r in rows {
            let s = self.score_index(r)?;
            sum += s;
            scores.push((self.train[r].item, s));
        }
        let mean = sum / scores.len() as f64;
        Ok((scores, mean))
    }

    /// The user-level score: plain arithmetic mean of the interaction
    /// scores.
    pub fn score_user(&self, user: UserId) -> Result<f64> {
        Ok(self.score_query(user)?.1)
    }

    /// Score every in-scope training interaction and aggregate per user.
    ///
    /// Interactions whose membership column is all-IN or all-OUT cannot be
    /// scored; they land in `residuals` instead of receiving a made-up
    /// value. Out-of-scope interactions (possible under a user-split
    /// regime) are not part of the audited population and are skipped
    /// entirely.
    pub fn build_table(&self, ensemble_ref: &str) -> Result<ScoreTable> {
        let rows: Vec<usize> = (0..self.train.len())
            .filter(|&r| self.ensemble.scope[r])
            .collect();
        let scored: Result<Vec<(usize, std::result::Result<f64, Residual>)>> = rows
            .par_iter()
            .map(|&r| match self.score_index(r) {
                Ok(s) => Ok((r, Ok(s))),
                Err(Error::DegenerateMembership { side, .. }) => {
                    let x = self.train[r];
                    Ok((
                        r,
                        Err(Residual {
                            user: x.user,
                            item: x.item,
                            side,
                        }),
                    ))
                }
                Err(other) => Err(other),
            })
            .collect();

        let mut interaction_scores = Vec::new();
        let mut residuals = Vec::new();
        // Neumaier-compensated per-user sums: user means must not drift
        // with interaction count.
        let mut per_user: Vec<(f64, f64, usize)> = vec![(0.0, 0.0, 0); self.num_users];
        for (r, outcome) in scored? {
            let x = self.train[r];
            match outcome {
                Ok(s) => {
                    interaction_scores.push((x.user, x.item, s));
                    let (sum, comp, n) = &mut per_user[x.user.index()];
                    let t = *sum + s;
                    *comp += if sum.abs() >= s.abs() {
                        (*sum - t) + s
                    } else {
                        (s - t) + *sum
                    };
                    *sum = t;
                    *n += 1;
                }
                Err(residual) => residuals.push(residual),
            }
        }
        let user_scores: Vec<(UserId, f64, usize)> = per_user
            .iter()
            .enumerate()
            .filter(|(_, (_, _, n))| *n > 0)
            .map(|(u, &(sum, comp, n))| (UserId(u as u32), (sum + comp) / n as f64, n))
            .collect();
        Ok(ScoreTable {
            interaction_scores,
            user_scores,
            residuals,
            ensemble_ref: ensemble_ref.to_string(),
            created_at: None,
        })
    }
}

/// An interaction that could not be scored and why.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Residual {
    pub user: UserId,
    pub item: ItemId,
    pub side: &'static str,
}

/// The audit's output: interaction scores in train order, user means, and
/// anything that could not be scored.
pub struct ScoreTable {
    pub interaction_scores: Vec<(UserId, ItemId, f64)>,
    pub user_scores: Vec<(UserId, f64, usize)>,
    pub residuals: Vec<Residual>,
    /// Manifest hash of the ensemble that produced the scores.
    pub ensemble_ref: String,
    /// Optional wall-clock note. Deliberately excluded from the CSV
    /// exports so same-seed runs stay byte-identical.
    pub created_at: Option<String>,
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl ScoreTable {
    /// `user,item,score` rows keyed by the dataset's original identifiers.
    pub fn interactions_csv(&self, ds: &InteractionDataset) -> String {
        let mut out = format!("# ensemble_manifest_sha256: {}\n", self.ensemble_ref);
        out.push_str("user,item,score\n");
        for &(user, item, score) in &self.interaction_scores {
            out.push_str(&format!(
                "{},{},{}\n",
                csv_field(ds.user_key(user)),
                csv_field(ds.item_key(item)),
                score
            ));
        }
        out
    }

    /// `user,score,n_interactions` rows.
    pub fn users_csv(&self, ds: &InteractionDataset) -> String {
        let mut out = format!("# ensemble_manifest_sha256: {}\n", self.ensemble_ref);
        out.push_str("user,score,n_interactions\n");
        for &(user, score, n) in &self.user_scores {
            out.push_str(&format!("{},{},{}\n", csv_field(ds.user_key(user)), score, n));
        }
        out
    }

    /// `user,item,side` rows for everything that could not be scored.
    pub fn residuals_csv(&self, ds: &InteractionDataset) -> String {
        let mut out = format!("# ensemble_manifest_sha256: {}\n", self.ensemble_ref);
        out.push_str("user,item,side\n");
        for res in &self.residuals {
            out.push_str(&format!(
                "{},{},{}\n",
                csv_field(ds.user_key(res.user)),
                csv_field(ds.item_key(res.item)),
                res.side
            ));
        }
        out
    }

    pub fn user_score(&self, user: UserId) -> Option<f64> {
        self.user_scores
            .iter()
            .find(|(u, _, _)| *u == user)
            .map(|&(_, s, _)| s)
    }
}
