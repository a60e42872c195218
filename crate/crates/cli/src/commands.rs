use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bridgerec::bridge::JointProgress;
use bridgerec::config::RunConfig;
use bridgerec::corpus::synthetic::planted;
use bridgerec::corpus::{
    build_matrix, filter_sparse, load_dataset, load_raw, save_dataset, DatasetStats,
};
use bridgerec::eval::{
    gamma_sweep, run_ablation, PromptContext, SummaryRow, Variant, TAG_DRS, TAG_LLM,
};
use bridgerec::pipeline::{
    build_eval_sets, evaluate_pair, evaluate_standalone, pretrain, report_run, run_joint_with,
    EvalSets, Prepared, RunSpec,
};
use bridgerec::{pipeline, store};
use log::info;

use crate::output::{
    bar_chart_files, line_chart_files, write_csv, write_json, write_jsonl, MetricRow, StatsRow,
};

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn of(config: &RunConfig) -> Self {
        Self {
            root: config.output.dir.clone(),
        }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn drs(&self) -> PathBuf {
        self.root.join("drs")
    }

    pub fn run(&self, spec: &RunSpec) -> PathBuf {
        self.root
            .join("joint")
            .join(format!("{}_g{}", spec.variant, spec.gamma))
    }
}

fn dataset_name(config: &RunConfig) -> String {
    config
        .dataset
        .name
        .clone()
        .unwrap_or_else(|| config.dataset.format.name().to_owned())
}

pub fn prepare(config: &RunConfig) -> Result<()> {
    let (catalog, interactions, source) = match config.dataset.format.raw() {
        Some(format) => {
            let path = config.dataset.path.as_ref().expect("validated");
            let (c, i) =
                load_raw(path, format).with_context(|| format!("reading {}", path.display()))?;
            (c, i, path.display().to_string())
        }
        None => {
            let data = planted(&config.dataset.synthetic, config.seed);
            (data.catalog, data.interactions, "planted".to_owned())
        }
    };
    let (catalog, interactions) = filter_sparse(
        &catalog,
        &interactions,
        config.dataset.min_user,
        config.dataset.min_item,
    )?;
    let matrix = build_matrix(&catalog, &interactions)?;
    let dir = Layout::of(config).dataset();
    let meta = save_dataset(
        &dir,
        &catalog,
        &matrix,
        &source,
        config.dataset.format.name(),
        config.seed,
        config.dataset.min_user,
        config.dataset.min_item,
    )?;
    let row = StatsRow::of(&dataset_name(config), &meta.stats);
    write_json(&dir.join("stats.json"), &row)?;
    write_csv(&dir.join("stats.csv"), &[row.clone()])?;
    println!("{}", stats_table(&[row]));
    info!("dataset written to {}", dir.display());
    Ok(())
}

fn stats_table(rows: &[StatsRow]) -> String {
    let mut s = String::from(
        "| Dataset | #Users | #Items | #Interactions | Sparsity |\n|---|---:|---:|---:|---:|\n",
    );
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {:.3} |\n",
            r.dataset, r.users, r.items, r.interactions, r.sparsity
        ));
    }
    s
}

fn load_prepared(config: &RunConfig) -> Result<Prepared> {
    let dir = Layout::of(config).dataset();
    if !dir.join("meta.json").exists() {
        bail!(
            "no prepared dataset at {}; run `bridgerec prepare` first",
            dir.display()
        );
    }
    let (_, catalog, matrix) =
        load_dataset(&dir).with_context(|| format!("loading {}", dir.display()))?;
    Ok(pipeline::prepare(catalog, matrix, &config.experiment())?)
}

pub fn train_drs(config: &RunConfig) -> Result<()> {
    let exp = config.experiment();
    let p = load_prepared(config)?;
    let sets = build_eval_sets(&p, &exp, config.seed)?;
    let outcome = pretrain(&p, &sets, &exp, config.seed)?;
    let dir = Layout::of(config).drs();
    store::save_drs(
        &dir.join("checkpoint"),
        &outcome.params,
        config.seed,
        outcome.best_epoch,
    )?;
    store::save_snapshot(&dir.join("snapshot"), &outcome.snapshot)?;
    write_jsonl(&dir.join("history.jsonl"), &outcome.history)?;
    let report = evaluate_standalone(&p, &sets, &outcome.params)?;
    write_json(&dir.join("report.json"), &report)?;
    info!(
        "recommender pretrained: best epoch {}, valid HR@1 {:.4}, test HR@1 {:.4}",
        outcome.best_epoch, outcome.best_hr1, report.hr_at_1
    );
    Ok(())
}

fn spec_of(config: &RunConfig, variant: Variant, gamma: Option<f64>) -> Result<RunSpec> {
    let gamma = gamma.unwrap_or(config.training.gamma);
    if !(gamma.is_finite() && gamma >= 0.0) {
        bail!("gamma must be finite and >= 0, got {gamma}");
    }
    Ok(RunSpec {
        variant,
        gamma,
        seed: config.seed,
    })
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if !path.join("meta.json").exists() {
        bail!("missing {}; run `bridgerec {hint}` first", path.display());
    }
    Ok(())
}

pub fn train_joint(
    config: &RunConfig,
    variant: Variant,
    gamma: Option<f64>,
    resume: bool,
) -> Result<()> {
    let exp = config.experiment();
    let layout = Layout::of(config);
    let spec = spec_of(config, variant, gamma)?;
    let snapshot_dir = layout.drs().join("snapshot");
    require(&snapshot_dir, "train-drs")?;
    let pretrained = store::load_snapshot(&snapshot_dir)?;
    let p = load_prepared(config)?;
    let sets = build_eval_sets(&p, &exp, spec.seed)?;
    let dir = layout.run(&spec);
    let progress_dir = dir.join("progress");
    let resumed = if resume && progress_dir.join("progress.json").exists() {
        let vocab = p.vocab(spec.entity_tokens());
        let (progress, seed) = store::load_progress(&progress_dir, &vocab)?;
        if seed != spec.seed {
            bail!(
                "saved progress in {} uses seed {seed}, not {}",
                progress_dir.display(),
                spec.seed
            );
        }
        info!("resuming {} after epoch {}", dir.display(), progress.epoch);
        Some(progress)
    } else {
        if resume {
            info!(
                "nothing to resume in {}; starting fresh",
                progress_dir.display()
            );
        }
        None
    };
    let save = |vocab: &_, progress: &JointProgress| -> bridgerec::error::Result<()> {
        store::save_progress(&progress_dir, progress, vocab, spec.seed)?;
        write_jsonl(&dir.join("epochs.jsonl"), &progress.history).map_err(to_core)?;
        write_jsonl(&dir.join("history.jsonl"), &progress.steps).map_err(to_core)
    };
    let (vocab, builder, outcome) =
        run_joint_with(&p, &sets, &exp, &pretrained, &spec, resumed, save)?;
    let step = outcome.steps.last().map_or(0, |s| s.step);
    store::save_lm(&dir.join("lm"), &outcome.lm, &vocab, spec.seed, step)?;
    store::save_lm(
        &dir.join("drs_lm"),
        &outcome.drs_lm,
        &vocab,
        spec.seed,
        step,
    )?;
    store::save_drs(&dir.join("drs"), &outcome.drs, spec.seed, step)?;
    store::save_sharing(&dir.join("sharing"), &outcome.sharing)?;
    vocab.save(&dir.join("vocab.json"))?;
    let report = report_run(&p, &sets, &spec, &vocab, &builder, &outcome)?;
    write_json(&dir.join("report.json"), &report)?;
    info!(
        "{}: test HR@1 llm {:.4} drs {:.4}",
        dir.display(),
        report.llm.hr_at_1,
        report.drs.hr_at_1
    );
    Ok(())
}

fn to_core(e: anyhow::Error) -> bridgerec::error::Error {
    bridgerec::error::Error::InvalidArgument(format!("{e:#}"))
}

pub fn eval(config: &RunConfig, variant: Variant, gamma: Option<f64>) -> Result<()> {
    let exp = config.experiment();
    let layout = Layout::of(config);
    let spec = spec_of(config, variant, gamma)?;
    let dir = layout.run(&spec);
    for sub in ["lm", "drs_lm", "drs"] {
        require(&dir.join(sub), "train-joint")?;
    }
    let drs_dir = layout.drs().join("checkpoint");
    require(&drs_dir, "train-drs")?;
    let p = load_prepared(config)?;
    let sets: EvalSets = build_eval_sets(&p, &exp, spec.seed)?;
    let vocab = p.vocab(spec.entity_tokens());
    let builder = exp.builder(spec.prompt_mode());
    let (_, lm) = store::load_lm(&dir.join("lm"), &vocab)?;
    let (_, drs_lm) = store::load_lm(&dir.join("drs_lm"), &vocab)?;
    let (_, drs) = store::load_drs(&dir.join("drs"))?;
    let (_, alone) = store::load_drs(&drs_dir)?;
    let ctx = PromptContext {
        catalog: &p.catalog,
        vocab: &vocab,
        builder: &builder,
    };
    let (llm, fused) = evaluate_pair(&p, &sets, ctx, &lm, &drs_lm, &drs)?;
    let standalone = evaluate_standalone(&p, &sets, &alone)?;
    let rows: Vec<MetricRow> = [&llm, &fused, &standalone]
        .into_iter()
        .map(|r| MetricRow::of(&dataset_name(config), &spec, r))
        .collect();
    let out = layout
        .root
        .join("eval")
        .join(format!("{}_g{}", spec.variant, spec.gamma));
    write_json(&out.join("report.json"), &rows)?;
    write_csv(&out.join("report.csv"), &rows)?;
    for r in &rows {
        println!(
            "{:<9} HR@1 {:.4}  HR@2 {:.4}  P {:.4}  R {:.4}  F1 {:.4}",
            r.model_tag, r.hr_at_1, r.hr_at_2, r.precision, r.recall, r.f1
        );
    }
    Ok(())
}

fn summary_files(dir: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_json(&dir.join("summary.json"), &rows)?;
    write_csv(&dir.join("summary.csv"), rows)
}

pub fn ablate(config: &RunConfig, variants: &[Variant]) -> Result<()> {
    let exp = config.experiment();
    let variants = if variants.is_empty() {
        config.eval.variants.clone()
    } else {
        variants.to_vec()
    };
    let p = load_prepared(config)?;
    let result = run_ablation(&p, &exp, &variants, &config.seeds())?;
    let dir = Layout::of(config).root.join("ablation");
    write_json(&dir.join("runs.json"), &result.grid)?;
    summary_files(&dir, &result.rows)?;
    let categories: Vec<String> = variants.iter().map(|v| v.to_string()).collect();
    let series = [TAG_LLM, TAG_DRS]
        .into_iter()
        .map(|tag| {
            let points = variants
                .iter()
                .map(|v| {
                    result
                        .rows
                        .iter()
                        .find(|r| r.model_tag == tag && r.variant == v.name())
                        .map(|r| (r.hr_at_1_mean, r.hr_at_1_sd))
                })
                .collect();
            (tag.to_owned(), points)
        })
        .collect::<Vec<_>>();
    bar_chart_files(
        &dir,
        "ablation",
        &format!("Ablation on {}", dataset_name(config)),
        "variant",
        &categories,
        &series,
    )?;
    print_rows(&result.rows);
    Ok(())
}

pub fn sweep(config: &RunConfig, gammas: &[f64]) -> Result<()> {
    let exp = config.experiment();
    let gammas = if gammas.is_empty() {
        config.eval.gammas.clone()
    } else {
        gammas.to_vec()
    };
    let p = load_prepared(config)?;
    let result = gamma_sweep(&p, &exp, &gammas, &config.seeds())?;
    let dir = Layout::of(config).root.join("sweep");
    write_json(&dir.join("runs.json"), &result.grid)?;
    summary_files(&dir, &result.curve)?;
    let name = dataset_name(config);
    let series = [TAG_LLM, TAG_DRS]
        .into_iter()
        .map(|tag| {
            let points = result
                .series(tag)
                .into_iter()
                .map(|(_, m, sd)| Some((m, sd)))
                .collect();
            (format!("{name} {tag}"), points)
        })
        .collect::<Vec<_>>();
    let categories: Vec<String> = gammas.iter().map(|g| g.to_string()).collect();
    line_chart_files(&dir, "sweep", "Impact of gamma", &categories, &series)?;
    print_rows(&result.curve);
    Ok(())
}

fn print_rows(rows: &[SummaryRow]) {
    for r in rows {
        let gamma = r.gamma.map_or("-".to_owned(), |g| g.to_string());
        println!(
            "{:<6} gamma {:<6} {:<9} HR@1 {:.4}±{:.4}  F1 {:.4}±{:.4}  (n={})",
            r.variant,
            gamma,
            r.model_tag,
            r.hr_at_1_mean,
            r.hr_at_1_sd,
            r.f1_mean,
            r.f1_sd,
            r.n_seeds
        );
    }
}

fn read_rows(path: &Path) -> Result<Option<Vec<SummaryRow>>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Some(
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
    ))
}

fn rows_table(rows: &[SummaryRow]) -> String {
    let mut s = String::from(
        "| Variant | gamma | Model | HR@1 | HR@2 | Precision | Recall | F1 | seeds |\n|---|---:|---|---:|---:|---:|---:|---:|---:|\n",
    );
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {} | {:.4} ± {:.4} | {:.4} ± {:.4} | {:.4} | {:.4} | {:.4} ± {:.4} | {} |\n",
            r.variant,
            r.gamma.map_or("-".to_owned(), |g| g.to_string()),
            r.model_tag,
            r.hr_at_1_mean,
            r.hr_at_1_sd,
            r.hr_at_2_mean,
            r.hr_at_2_sd,
            r.precision_mean,
            r.recall_mean,
            r.f1_mean,
            r.f1_sd,
            r.n_seeds
        ));
    }
    s
}

pub fn report(config: &RunConfig, include: &[PathBuf]) -> Result<()> {
    let root = Layout::of(config).root;
    let mut md = String::from("# Experiment report\n\n");
    let mut dirs = vec![(dataset_name(config), root.clone())];
    for d in include {
        let stats: Option<StatsRow> = read_stats(&d.join("dataset").join("stats.json"))?;
        let name = stats.map_or_else(|| d.display().to_string(), |s| s.dataset);
        dirs.push((name, d.clone()));
    }
    let stats: Vec<StatsRow> = dirs
        .iter()
        .map(|(_, d)| read_stats(&d.join("dataset").join("stats.json")))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    if !stats.is_empty() {
        md.push_str("## Datasets\n\n");
        md.push_str(&stats_table(&stats));
        md.push('\n');
    }
    let mut curves = Vec::new();
    for (name, d) in &dirs {
        if let Some(rows) = read_rows(&d.join("ablation").join("summary.json"))? {
            md.push_str(&format!("## Ablation: {name}\n\n{}\n", rows_table(&rows)));
        }
        if let Some(rows) = read_rows(&d.join("sweep").join("summary.json"))? {
            md.push_str(&format!(
                "## Gamma sweep: {name}\n\n{}\n",
                rows_table(&rows)
            ));
            curves.push((name.clone(), rows));
        }
    }
    if !curves.is_empty() {
        let mut gammas: Vec<f64> = curves
            .iter()
            .flat_map(|(_, rows)| rows.iter().filter_map(|r| r.gamma))
            .collect();
        gammas.sort_by(f64::total_cmp);
        gammas.dedup();
        let categories: Vec<String> = gammas.iter().map(|g| g.to_string()).collect();
        let series: Vec<(String, Vec<Option<(f64, f64)>>)> = curves
            .iter()
            .map(|(name, rows)| {
                let points = gammas
                    .iter()
                    .map(|&g| {
                        rows.iter()
                            .find(|r| r.model_tag == TAG_LLM && r.gamma == Some(g))
                            .map(|r| (r.hr_at_1_mean, r.hr_at_1_sd))
                    })
                    .collect();
                (name.clone(), points)
            })
            .collect();
        line_chart_files(
            &root.join("report"),
            "gamma",
            "Impact of gamma (bdlm-llm)",
            &categories,
            &series,
        )?;
        md.push_str("![gamma sweep](report/gamma.svg)\n");
    }
    fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
    let path = root.join("report.md");
    fs::write(&path, &md).with_context(|| format!("writing {}", path.display()))?;
    println!("{md}");
    Ok(())
}

fn read_stats(path: &Path) -> Result<Option<StatsRow>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Some(serde_json::from_str(&text)?))
}

impl StatsRow {
    pub fn of(dataset: &str, s: &DatasetStats) -> Self {
        Self {
            dataset: dataset.to_owned(),
            users: s.n_users,
            items: s.n_items,
            interactions: s.n_interactions,
            sparsity: s.sparsity,
        }
    }
}
