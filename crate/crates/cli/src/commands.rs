use crate::config::Config;
use crate::error::{usage, CliError, Result};
use recaudit::attack_eval::{
    build_eval_population, collect_statistics, global_threshold_point, hit_rate_at_k,
    metrics_text, roc,
};
use recaudit::dataset::InteractionDataset;
use recaudit::scoring::{Scorer, ScoreTable};
use recaudit::shadow::store::{read_ensemble_dir, read_manifest, LoadedEnsemble};
use recaudit::shadow::{build_ensemble, build_target};
use recaudit::unlearn::{plan_removal, run_removal_experiment, write_report_dir};
use recaudit::UserId;
use std::collections::HashSet;
use std::fs;

/// Build the shadow ensemble (and by default the audited target model)
/// from the configured dataset and persist it as an ensemble directory.
pub fn prepare(cfg: &Config) -> Result<()> {
    let out = cfg.out_dir()?;
    let ds = cfg.load_dataset()?;
    let ec = cfg.ensemble_config()?;
    let ensemble = build_ensemble(&ds, &ec)?;
    let target = if cfg.with_target()? {
        Some(build_target(&ds, &ec)?)
    } else {
        None
    };
    let hash = recaudit::shadow::store::write_ensemble_dir(&out, &ds, &ensemble, target.as_ref())?;
    println!("ensemble_dir={}", out.display());
    println!("manifest_sha256={hash}");
    println!("models={}", ec.m);
    println!(
        "dataset=users:{} items:{} interactions:{}",
        ds.num_users(),
        ds.num_items(),
        ds.num_interactions()
    );
    Ok(())
}

fn load(cfg: &Config) -> Result<LoadedEnsemble> {
    let dir = cfg.ensemble_dir()?;
    Ok(read_ensemble_dir(&dir)?)
}

fn score_table(loaded: &LoadedEnsemble) -> Result<ScoreTable> {
    Ok(Scorer::new(&loaded.dataset, &loaded.ensemble)?.build_table(&loaded.manifest_hash)?)
}

fn resolve_users(ds: &InteractionDataset, keys: &[String]) -> Result<HashSet<u32>> {
    let mut ids = HashSet::new();
    for key in keys {
        let found = (0..ds.num_users() as u32).find(|&u| ds.user_key(UserId(u)) == key);
        match found {
            Some(u) => {
                ids.insert(u);
            }
            None => return Err(usage(format!("users: no user '{key}' in the dataset"))),
        }
    }
    Ok(ids)
}

/// Score every auditable training interaction (or just the selected
/// users) and write the interaction, user, and residual CSVs.
pub fn score(cfg: &Config) -> Result<()> {
    let out = cfg.out_dir()?;
    let loaded = load(cfg)?;
    let mut table = score_table(&loaded)?;
    if let Some(keys) = cfg.user_selection() {
        let ids = resolve_users(&loaded.dataset, &keys)?;
        table.interaction_scores.retain(|(u, _, _)| ids.contains(&u.0));
        table.user_scores.retain(|(u, _, _)| ids.contains(&u.0));
        table.residuals.retain(|res| ids.contains(&res.user.0));
    }
    fs::create_dir_all(&out)?;
    fs::write(
        out.join("interaction_scores.csv"),
        table.interactions_csv(&loaded.dataset),
    )?;
    fs::write(out.join("user_scores.csv"), table.users_csv(&loaded.dataset))?;
    fs::write(
        out.join("residuals.csv"),
        table.residuals_csv(&loaded.dataset),
    )?;
    println!("interactions_scored={}", table.interaction_scores.len());
    println!("users_scored={}", table.user_scores.len());
    println!("residuals={}", table.residuals.len());
    Ok(())
}

/// Evaluate the membership attack against the stored target model and
/// write the ROC curve and metrics.
pub fn attack(cfg: &Config) -> Result<()> {
    let out = cfg.out_dir()?;
    let loaded = load(cfg)?;
    let target = loaded.target.as_ref().ok_or_else(|| {
        CliError::Runtime(
            "ensemble directory has no stored target model (prepare with with_target=true)"
                .into(),
        )
    })?;
    let population =
        build_eval_population(&loaded.dataset, target, cfg.eval_per_class()?, cfg.seed()?)?;
    let stats = collect_statistics(&loaded.ensemble, &target.model, &population)?;
    let curve = roc(&stats, "lambda")?;
    let baseline = global_threshold_point(&stats);
    let hr = match cfg.hr_k()? {
        Some(k) => Some((k, hit_rate_at_k(&target.model, &loaded.dataset, k)?)),
        None => None,
    };
    fs::create_dir_all(&out)?;
    fs::write(out.join("roc.csv"), curve.to_csv())?;
    fs::write(
        out.join("attack_metrics.txt"),
        metrics_text(&curve, baseline, hr, &loaded.manifest_hash),
    )?;
    println!("population={}", population.len());
    println!("auc={}", curve.auc);
    println!("tpr@fpr=0.1={}", curve.tpr_at_fpr(0.1));
    Ok(())
}

/// Plan a removal, retrain on the reduced dataset, re-score, and write
/// the report directory.
pub fn unlearn(cfg: &Config) -> Result<()> {
    let out = cfg.out_dir()?;
    let loaded = load(cfg)?;
    let baseline = score_table(&loaded)?;
    let request = cfg.removal_request()?;
    // Fail on bad plans before paying for any retraining.
    plan_removal(&baseline, &request)?;
    let ec = loaded.manifest.config();
    let outcome = run_removal_experiment(
        &loaded.dataset,
        &ec,
        &baseline,
        &request,
        cfg.unlearn_eval_k()?,
    )?;
    write_report_dir(&out, &loaded.dataset, &outcome)?;
    println!("mode={}", outcome.plan.mode);
    println!("targeted_users={}", outcome.plan.targeted_users.len());
    println!("removals={}", outcome.plan.removals.len());
    println!("hr_before={}", outcome.hr_before);
    println!("hr_after={}", outcome.hr_after);
    println!("reduced_user_fraction={}", outcome.reduced_user_fraction);
    Ok(())
}

fn count_data_rows(text: &str) -> usize {
    text.lines()
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .count()
        .saturating_sub(1)
}

/// Summarize whatever pipeline artifacts the output directory holds.
pub fn report(cfg: &Config) -> Result<()> {
    let dir = cfg.out_dir()?;
    if !dir.is_dir() {
        return Err(usage(format!("{} is not a directory", dir.display())));
    }
    let mut sections = 0usize;
    let mut out = String::new();
    if dir.join("manifest.json").exists() {
        let (manifest, hash) = read_manifest(&dir)?;
        out.push_str(&format!(
            "[ensemble]\nmanifest_sha256={hash}\nmodels={}\nseed={}\ntrain_interactions={}\nusers={}\nitems={}\n",
            manifest.m,
            manifest.seed,
            manifest.num_train_interactions,
            manifest.num_users,
            manifest.num_items,
        ));
        out.push_str(&format!(
            "target_model={}\n\n",
            manifest.target_checkpoint.is_some()
        ));
        sections += 1;
    }
    for (name, label) in [
        ("interaction_scores.csv", "interaction_scores"),
        ("user_scores.csv", "user_scores"),
        ("residuals.csv", "residuals"),
        ("roc.csv", "roc_points"),
        ("score_diff_histogram.csv", "histogram_bins"),
        ("removals.csv", "removals"),
    ] {
        let path = dir.join(name);
        if path.exists() {
            let text = fs::read_to_string(&path)?;
            out.push_str(&format!("{label}={}\n", count_data_rows(&text)));
            sections += 1;
        }
    }
    for name in ["attack_metrics.txt", "metrics.txt"] {
        let path = dir.join(name);
        if path.exists() {
            out.push_str(&format!("\n[{name}]\n"));
            out.push_str(&fs::read_to_string(&path)?);
            sections += 1;
        }
    }
    if sections == 0 {
        return Err(CliError::Runtime(format!(
            "no recognized artifacts in {}",
            dir.display()
        )));
    }
    print!("{out}");
    Ok(())
}
