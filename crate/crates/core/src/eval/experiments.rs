use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{mean_sd, MetricReport, TAG_DRS_ONLY};
use crate::drs::PretrainOutcome;
use crate::error::{Error, Result};
use crate::pipeline::{
    build_eval_sets, evaluate_standalone, pretrain, run_and_report, EvalSets, ExperimentConfig,
    Prepared, RunReport, RunSpec,
};

/// The trade-off grid swept by default.
pub const DEFAULT_GAMMAS: [f64; 6] = [0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0];

/// Ablation variants of the co-training method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "full")]
    Full,
    /// Sequential training instead of the joint loop.
    #[serde(rename = "wo_JL")]
    WoJl,
    /// Entity rows initialized randomly instead of preloaded.
    #[serde(rename = "wo_PE")]
    WoPe,
    /// Text-only prompts, no entity tokens.
    #[serde(rename = "wo_ET")]
    WoEt,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::WoJl, Variant::WoPe, Variant::WoEt];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WoJl => "wo_JL",
            Variant::WoPe => "wo_PE",
            Variant::WoEt => "wo_ET",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidArgument(format!("unknown variant {s:?} (full, wo_JL, wo_PE, wo_ET)"))
            })
    }
}

/// Mean and sample standard deviation of each metric over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: String,
    pub gamma: Option<f64>,
    pub model_tag: String,
    pub n_seeds: usize,
    pub hr_at_1_mean: f64,
    pub hr_at_1_sd: f64,
    pub hr_at_2_mean: f64,
    pub hr_at_2_sd: f64,
    pub precision_mean: f64,
    pub precision_sd: f64,
    pub recall_mean: f64,
    pub recall_sd: f64,
    pub f1_mean: f64,
    pub f1_sd: f64,
    pub user_alignment_mean: Option<f64>,
}

impl SummaryRow {
    pub fn of(
        variant: &str,
        gamma: Option<f64>,
        reports: &[&MetricReport],
        alignment: &[f64],
    ) -> Self {
        let stat = |f: fn(&MetricReport) -> f64| {
            mean_sd(&reports.iter().map(|r| f(r)).collect::<Vec<_>>())
        };
        let (hr_at_1_mean, hr_at_1_sd) = stat(|r| r.hr_at_1);
        let (hr_at_2_mean, hr_at_2_sd) = stat(|r| r.hr_at_2);
        let (precision_mean, precision_sd) = stat(|r| r.precision);
        let (recall_mean, recall_sd) = stat(|r| r.recall);
        let (f1_mean, f1_sd) = stat(|r| r.f1);
        Self {
            variant: variant.to_owned(),
            gamma,
            model_tag: reports
                .first()
                .map(|r| r.model_tag.clone())
                .unwrap_or_default(),
            n_seeds: reports.len(),
            hr_at_1_mean,
            hr_at_1_sd,
            hr_at_2_mean,
            hr_at_2_sd,
            precision_mean,
            precision_sd,
            recall_mean,
            recall_sd,
            f1_mean,
            f1_sd,
            user_alignment_mean: (!alignment.is_empty()).then(|| mean_sd(alignment).0),
        }
    }
}

/// Per-seed artifacts shared by every run of that seed.
pub struct SeedContext {
    pub seed: u64,
    pub sets: EvalSets,
    pub pretrained: PretrainOutcome,
    pub drs_only: MetricReport,
}

pub fn seed_context(p: &Prepared, config: &ExperimentConfig, seed: u64) -> Result<SeedContext> {
    let sets = build_eval_sets(p, config, seed)?;
    let pretrained = pretrain(p, &sets, config, seed)?;
    let drs_only = evaluate_standalone(p, &sets, &pretrained.params)?;
    Ok(SeedContext {
        seed,
        sets,
        pretrained,
        drs_only,
    })
}

/// Every `(variant, gamma)` run for every seed, plus the pretrained
/// recommender's own report per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub runs: Vec<RunReport>,
    pub drs_only: Vec<MetricReport>,
}

impl GridResult {
    pub fn select(&self, variant: Variant, gamma: f64) -> Vec<&RunReport> {
        self.runs
            .iter()
            .filter(|r| r.variant == variant && r.gamma == gamma)
            .collect()
    }

    /// One row per model side of each `(variant, gamma)`, then the
    /// pretrained recommender.
    pub fn summary(&self, specs: &[(Variant, f64)]) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for &(variant, gamma) in specs {
            let runs = self.select(variant, gamma);
            let alignment: Vec<f64> = runs.iter().filter_map(|r| r.user_alignment).collect();
            let llm: Vec<&MetricReport> = runs.iter().map(|r| &r.llm).collect();
            let drs: Vec<&MetricReport> = runs.iter().map(|r| &r.drs).collect();
            rows.push(SummaryRow::of(
                variant.name(),
                Some(gamma),
                &llm,
                &alignment,
            ));
            rows.push(SummaryRow::of(
                variant.name(),
                Some(gamma),
                &drs,
                &alignment,
            ));
        }
        let alone: Vec<&MetricReport> = self.drs_only.iter().collect();
        rows.push(SummaryRow::of(TAG_DRS_ONLY, None, &alone, &[]));
        rows
    }
}

/// Runs every spec for every seed; each seed pretrains once.
pub fn run_grid(
    p: &Prepared,
    config: &ExperimentConfig,
    specs: &[(Variant, f64)],
    seeds: &[u64],
) -> Result<GridResult> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one seed is required".into(),
        ));
    }
    let mut out = GridResult {
        runs: Vec::new(),
        drs_only: Vec::new(),
    };
    for &seed in seeds {
        let ctx = seed_context(p, config, seed)?;
        for &(variant, gamma) in specs {
            log::info!("seed {seed}: {variant} gamma {gamma}");
            let spec = RunSpec {
                variant,
                gamma,
                seed,
            };
            let (report, _) =
                run_and_report(p, &ctx.sets, config, &ctx.pretrained.snapshot, &spec)?;
            out.runs.push(report);
        }
        out.drs_only.push(ctx.drs_only);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub grid: GridResult,
    pub rows: Vec<SummaryRow>,
}

/// The requested variants at the configured gamma over `seeds`.
pub fn run_ablation(
    p: &Prepared,
    config: &ExperimentConfig,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<AblationResult> {
    let specs: Vec<(Variant, f64)> = variants.iter().map(|&v| (v, config.joint.gamma)).collect();
    let grid = run_grid(p, config, &specs, seeds)?;
    Ok(AblationResult {
        rows: grid.summary(&specs),
        grid,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub grid: GridResult,
    /// One row per gamma and model side, then the pretrained recommender.
    pub curve: Vec<SummaryRow>,
}

impl SweepResult {
    /// The points of one model side's curve, `(gamma, mean HR@1, sd)`.
    pub fn series(&self, model_tag: &str) -> Vec<(f64, f64, f64)> {
        self.curve
            .iter()
            .filter(|r| r.model_tag == model_tag)
            .filter_map(|r| r.gamma.map(|g| (g, r.hr_at_1_mean, r.hr_at_1_sd)))
            .collect()
    }
}

/// One full joint run per `(gamma, seed)`.
pub fn gamma_sweep(
    p: &Prepared,
    config: &ExperimentConfig,
    gammas: &[f64],
    seeds: &[u64],
) -> Result<SweepResult> {
    if gammas.is_empty() {
        return Err(Error::InvalidArgument("empty gamma grid".into()));
    }
    let specs: Vec<(Variant, f64)> = gammas.iter().map(|&g| (Variant::Full, g)).collect();
    let grid = run_grid(p, config, &specs, seeds)?;
    Ok(SweepResult {
        curve: grid.summary(&specs),
        grid,
    })
}
