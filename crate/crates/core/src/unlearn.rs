//! Score-guided data removal: pick the most at-risk users from a score
//! table, delete some or all of their training interactions, retrain from
//! scratch, re-audit, and report what the removal bought.
//!
//! Retraining on the reduced dataset stands in for unlearning. Scores are
//! dataset-relative, so the re-audit rebuilds a fresh shadow ensemble on
//! the reduced data rather than reusing the old one.

use crate::attack_eval::hit_rate_at_k;
use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::models::{train, RecModel};
use crate::scoring::{Scorer, ScoreTable};
use crate::seed::{derive_seed, Stream};
use crate::shadow::{build_ensemble, EnsembleConfig};
use crate::types::{ItemId, LabeledExample, UserId};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

pub const HISTOGRAM_BIN_WIDTH: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalMode {
    /// Delete every record of the targeted users.
    UserLevel,
    /// Delete each targeted user's highest-scoring training interactions.
    InteractionLevel,
    /// Delete the same number per user, chosen uniformly — the control
    /// arm that score-guided removal has to beat.
    RandomInteraction,
}

impl fmt::Display for RemovalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RemovalMode::UserLevel => "user-level",
            RemovalMode::InteractionLevel => "interaction-level",
            RemovalMode::RandomInteraction => "random-interaction",
        })
    }
}

impl FromStr for RemovalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<RemovalMode> {
        match s {
            "user-level" => Ok(RemovalMode::UserLevel),
            "interaction-level" => Ok(RemovalMode::InteractionLevel),
            "random-interaction" | "random" => Ok(RemovalMode::RandomInteraction),
            other => Err(Error::InvalidArgument(format!(
                "unknown removal mode '{other}' (expected user-level, interaction-level, or random-interaction)"
            ))),
        }
    }
}

/// What the operator asks for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalRequest {
    pub mode: RemovalMode,
    /// Share of users to target, ranked by user score (default 0.05).
    pub target_user_fraction: f64,
    /// Share of each targeted user's interactions to delete (interaction
    /// modes only).
    pub interaction_fraction: f64,
    pub seed: u64,
}

impl Default for RemovalRequest {
    fn default() -> Self {
        RemovalRequest {
            mode: RemovalMode::InteractionLevel,
            target_user_fraction: 0.05,
            interaction_fraction: 0.5,
            seed: 0,
        }
    }
}

/// The resolved plan: who is targeted, the cutoff their scores set, and
/// exactly which training interactions go.
#[derive(Debug, Clone, PartialEq)]
pub struct RemovalPlan {
    pub mode: RemovalMode,
    pub target_user_fraction: f64,
    pub interaction_fraction: f64,
    pub seed: u64,
    /// Minimum baseline score among the targeted users. Removal succeeds
    /// for a user when their re-evaluated score falls below this.
    pub cutoff_theta: f64,
    pub targeted_users: Vec<UserId>,
    pub removals: Vec<(UserId, ItemId)>,
}

fn check_fraction(name: &str, f: f64) -> Result<()> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "{name} must be in (0, 1], got {f}"
        )));
    }
    Ok(())
}

/// Round-to-nearest count for "a fraction of n", never exceeding n.
fn fraction_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

/// Resolve a request against a baseline score table.
pub fn plan_removal(table: &ScoreTable, request: &RemovalRequest) -> Result<RemovalPlan> {
    check_fraction("target_user_fraction", request.target_user_fraction)?;
    check_fraction("interaction_fraction", request.interaction_fraction)?;
    if table.user_scores.is_empty() {
        return Err(Error::EmptyCandidates);
    }

    // Top fraction by score, ties broken by user id.
    let mut ranked: Vec<(UserId, f64)> = table
        .user_scores
        .iter()
        .map(|&(u, s, _)| (u, s))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0 .0.cmp(&b.0 .0)));
    let count = fraction_count(request.target_user_fraction, ranked.len()).max(1);
    let targeted: Vec<(UserId, f64)> = ranked[..count].to_vec();
    let cutoff_theta = targeted.last().unwrap().1;
    let targeted_set: HashSet<u32> = targeted.iter().map(|(u, _)| u.0).collect();

    // The plan works from scored interactions, so every targeted user's
    // training interactions must have scores.
    for residual in &table.residuals {
        if targeted_set.contains(&residual.user.0) {
            return Err(Error::InvalidArgument(format!(
                "targeted user {} has an unscored interaction ({} in every shadow set)",
                residual.user, residual.side
            )));
        }
    }

    let mut by_user: HashMap<u32, Vec<(ItemId, f64)>> = HashMap::new();
    for &(u, i, s) in &table.interaction_scores {
        if targeted_set.contains(&u.0) {
            by_user.entry(u.0).or_default().push((i, s));
        }
    }

    let mut removals = Vec::new();
    let mut targeted_users: Vec<UserId> = targeted.iter().map(|&(u, _)| u).collect();
    targeted_users.sort_by_key(|u| u.0);
    for &user in &targeted_users {
        let Some(items) = by_user.get(&user.0) else {
            continue;
        };
        match request.mode {
            RemovalMode::UserLevel => {
                removals.extend(items.iter().map(|&(i, _)| (user, i)));
            }
            RemovalMode::InteractionLevel => {
                let mut sorted = items.clone();
                sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0 .0.cmp(&b.0 .0)));
                let k = fraction_count(request.interaction_fraction, sorted.len());
                removals.extend(sorted[..k].iter().map(|&(i, _)| (user, i)));
            }
            RemovalMode::RandomInteraction => {
                let k = fraction_count(request.interaction_fraction, items.len());
                let mut order: Vec<usize> = (0..items.len()).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    request.seed,
                    Stream::Removal,
                    user.0 as u64,
                ));
                order.shuffle(&mut rng);
                let mut chosen: Vec<usize> = order[..k].to_vec();
                chosen.sort_unstable();
                removals.extend(chosen.into_iter().map(|idx| (user, items[idx].0)));
            }
        }
    }

    Ok(RemovalPlan {
        mode: request.mode,
        target_user_fraction: request.target_user_fraction,
        interaction_fraction: request.interaction_fraction,
        seed: request.seed,
        cutoff_theta,
        targeted_users,
        removals,
    })
}

/// Histogram with fixed-width bins over a symmetric range around zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Left edge of the first bin.
    pub start: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// `bin_start,frequency` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_start,frequency\n");
        for (b, &count) in self.counts.iter().enumerate() {
            let edge = self.start + b as f64 * self.bin_width;
            out.push_str(&format!("{edge},{count}\n"));
        }
        out
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Bin score differences at [`HISTOGRAM_BIN_WIDTH`], expanding the range
/// symmetrically to cover the largest magnitude seen.
pub fn score_diff_histogram(diffs: &[f64]) -> Histogram {
    let w = HISTOGRAM_BIN_WIDTH;
    let max_abs = diffs.iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
    let half_bins = ((max_abs / w).ceil() as usize).max(1);
    let start = -(half_bins as f64) * w;
    let mut counts = vec![0u64; 2 * half_bins];
    for &d in diffs {
        let idx = ((d - start) / w).floor() as usize;
        let idx = idx.min(counts.len() - 1);
        counts[idx] += 1;
    }
    Histogram {
        bin_width: w,
        start,
        counts,
    }
}

/// Everything a removal run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RemovalOutcome {
    pub plan: RemovalPlan,
    pub hr_before: f64,
    pub hr_after: f64,
    /// Relative utility loss in percent: 100 · (before − after) / before.
    pub hr_drop_pct: f64,
    /// Share of targeted users whose re-evaluated score fell below θ.
    /// Users whose data left the system entirely count as reduced.
    pub reduced_user_fraction: f64,
    /// Targeted users no longer present in the reduced dataset (all their
    /// records removed, or too few left to re-split).
    pub removed_users: usize,
    /// Users scored in both the baseline and the re-audit.
    pub rescored_users: usize,
    /// Distribution of (new − old) user scores over `rescored_users`.
    pub histogram: Histogram,
}

/// The production model whose utility HR@k measures: trained on the full
/// training split with ordinary negative sampling.
pub fn utility_model(ds: &InteractionDataset, cfg: &EnsembleConfig) -> Result<RecModel> {
    let mut examples: Vec<LabeledExample> = ds
        .train_interactions()?
        .iter()
        .map(|x| LabeledExample {
            user: x.user,
            item: x.item,
            label: true,
        })
        .collect();
    examples.extend(ds.sample_negatives(
        cfg.negative_ratio,
        derive_seed(cfg.seed, Stream::Target, 2),
    )?);
    let tcfg = crate::models::TrainConfig {
        seed: derive_seed(cfg.seed, Stream::Target, 3),
        ..cfg.train.clone()
    };
    Ok(train(cfg.family, ds, &examples, &tcfg)?.0)
}

/// Run one removal arm end to end: plan, delete, retrain, re-audit.
///
/// `baseline` must come from an ensemble built on `ds` with this same
/// `cfg`; θ is computed once from it and never recomputed. `eval_k` is
/// the HR ranking cutoff.
pub fn run_removal_experiment(
    ds: &InteractionDataset,
    cfg: &EnsembleConfig,
    baseline: &ScoreTable,
    request: &RemovalRequest,
    eval_k: usize,
) -> Result<RemovalOutcome> {
    let plan = plan_removal(baseline, request)?;
    let hr_before = hit_rate_at_k(&utility_model(ds, cfg)?, ds, eval_k)?;

    // Delete the planned records, then drop any user left with fewer than
    // three records — they can no longer hold out a validation and test
    // item, so they leave the system and are accounted as removed.
    let records = ds.records();
    let mut keep = vec![true; records.len()];
    match plan.mode {
        RemovalMode::UserLevel => {
            let targeted: HashSet<u32> = plan.targeted_users.iter().map(|u| u.0).collect();
            for (r, record) in records.iter().enumerate() {
                if targeted.contains(&record.user.0) {
                    keep[r] = false;
                }
            }
        }
        _ => {
            let removal_set: HashSet<(u32, u32)> =
                plan.removals.iter().map(|&(u, i)| (u.0, i.0)).collect();
            for (r, record) in records.iter().enumerate() {
                if removal_set.contains(&(record.user.0, record.item.0)) {
                    keep[r] = false;
                }
            }
        }
    }
    let mut remaining = vec![0usize; ds.num_users()];
    for (r, record) in records.iter().enumerate() {
        if keep[r] {
            remaining[record.user.index()] += 1;
        }
    }
    for (r, record) in records.iter().enumerate() {
        if remaining[record.user.index()] < 3 {
            keep[r] = false;
        }
    }

    let reduced = ds.subset_by_records(&keep)?.split_leave_two_out()?;
    let surviving: HashSet<&str> = (0..reduced.num_users() as u32)
        .map(|u| reduced.user_key(UserId(u)))
        .collect();

    let ensemble = build_ensemble(&reduced, cfg)?;
    let table = Scorer::new(&reduced, &ensemble)?.build_table(&baseline.ensemble_ref)?;
    let hr_after = hit_rate_at_k(&utility_model(&reduced, cfg)?, &reduced, eval_k)?;
    let hr_drop_pct = if hr_before > 0.0 {
        100.0 * (hr_before - hr_after) / hr_before
    } else {
        0.0
    };

    let new_scores: HashMap<&str, f64> = table
        .user_scores
        .iter()
        .map(|&(u, s, _)| (reduced.user_key(u), s))
        .collect();

    let mut reduced_count = 0usize;
    let mut removed_users = 0usize;
    for &user in &plan.targeted_users {
        let key = ds.user_key(user);
        if !surviving.contains(key) {
            removed_users += 1;
            reduced_count += 1;
        } else if matches!(new_scores.get(key), Some(&s) if s < plan.cutoff_theta) {
            reduced_count += 1;
        }
    }
    let reduced_user_fraction = reduced_count as f64 / plan.targeted_users.len() as f64;

    let mut diffs = Vec::new();
    for &(u, old, _) in &baseline.user_scores {
        if let Some(&new) = new_scores.get(ds.user_key(u)) {
            diffs.push(new - old);
        }
    }
    let histogram = score_diff_histogram(&diffs);

    Ok(RemovalOutcome {
        plan,
        hr_before,
        hr_after,
        hr_drop_pct,
        reduced_user_fraction,
        removed_users,
        rescored_users: diffs.len(),
        histogram,
    })
}

#[derive(Serialize)]
struct PlanFile<'a> {
    mode: RemovalMode,
    target_user_fraction: f64,
    interaction_fraction: f64,
    seed: u64,
    cutoff_theta: f64,
    targeted_users: Vec<&'a str>,
    n_removals: usize,
}

/// Write the experiment's report directory: plan, metrics, histogram, and
/// the removal listing (original identifiers).
pub fn write_report_dir(dir: &Path, ds: &InteractionDataset, outcome: &RemovalOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    let plan = &outcome.plan;
    let plan_file = PlanFile {
        mode: plan.mode,
        target_user_fraction: plan.target_user_fraction,
        interaction_fraction: plan.interaction_fraction,
        seed: plan.seed,
        cutoff_theta: plan.cutoff_theta,
        targeted_users: plan.targeted_users.iter().map(|&u| ds.user_key(u)).collect(),
        n_removals: plan.removals.len(),
    };
    let mut plan_json = serde_json::to_vec_pretty(&plan_file)?;
    plan_json.push(b'\n');
    fs::write(dir.join("plan.json"), plan_json)?;

    let metrics = format!(
        "mode={}\nhr_before={}\nhr_after={}\nhr_drop_pct={}\ncutoff_theta={}\nreduced_user_fraction={}\nremoved_users={}\nrescored_users={}\n",
        plan.mode,
        outcome.hr_before,
        outcome.hr_after,
        outcome.hr_drop_pct,
        plan.cutoff_theta,
        outcome.reduced_user_fraction,
        outcome.removed_users,
        outcome.rescored_users,
    );
    fs::write(dir.join("metrics.txt"), metrics)?;
    fs::write(
        dir.join("score_diff_histogram.csv"),
        outcome.histogram.to_csv(),
    )?;

    let mut removals = String::from("user,item\n");
    for &(u, i) in &plan.removals {
        removals.push_str(&format!("{},{}\n", ds.user_key(u), ds.item_key(i)));
    }
    fs::write(dir.join("removals.csv"), removals)?;
    Ok(())
}
