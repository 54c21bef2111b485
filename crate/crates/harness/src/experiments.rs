//! Seeded reconstruction trials over view plans.

use std::collections::BTreeMap;

use frk_core::carve::{GridSpec, OriginMode};
use frk_core::metrics::MetricsReport;
use frk_core::pipeline::{reconstruct_windows, ReconstructOptions, Scene, Scorer, Timing};
use frk_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::ViewBank;
use crate::plans::{combination_plans, view_count_plans, ViewPlan};

pub const DEFAULT_TRIALS: usize = 20;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub trials: usize,
    pub seed: u64,
    pub recon: ReconstructOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            trials: DEFAULT_TRIALS,
            seed: DEFAULT_SEED,
            recon: ReconstructOptions::default(),
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub experiment: String,
    pub plan: String,
    pub trial: usize,
    pub f1: f64,
    pub iou: f64,
    pub surface: f64,
    pub asd_mm: f64,
    pub hd95_mm: f64,
    pub seed: u64,
}

/// A trial with the views it used, for the summary JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDetail {
    pub record: TrialRecord,
    pub label: u8,
    pub origin: OriginMode,
    pub views: Vec<String>,
    pub view_sha256: Vec<String>,
    pub center_mm: [f64; 3],
    pub occupied_fraction: f64,
    pub timing: Timing,
}

/// Label drawn for trial `t`; shared by every plan so trials are paired.
fn label_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn view_rng(seed: u64, plan: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((plan as u64 + 1) << 32) | trial as u64);
    rng
}

/// Views plus ground truth of every label.
pub struct Harness<'a> {
    pub bank: &'a ViewBank,
    scorers: BTreeMap<u8, Scorer>,
}

impl<'a> Harness<'a> {
    pub fn new(bank: &'a ViewBank, scene: &Scene, grid: GridSpec) -> Result<Self> {
        let labels = bank.labels();
        if labels.is_empty() {
            return Err(Error::invalid("labels", "no fully visible labelled views"));
        }
        let scorers = labels
            .par_iter()
            .map(|&l| Scorer::new(scene, l, grid).map(|s| (l, s)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Harness { bank, scorers })
    }

    fn trial_label(&self, seed: u64, trial: usize) -> u8 {
        let labels = self.bank.labels();
        labels[label_rng(seed, trial).random_range(0..labels.len())]
    }

    /// Reconstructs and scores one label from the given bank views.
    pub fn run_views(
        &self,
        label: u8,
        picked: &[usize],
        opts: &ReconstructOptions,
    ) -> Result<(MetricsReport, TrialDetail)> {
        let views = self.bank.label(label)?;
        let windows: Vec<_> = picked.iter().map(|&i| &views[i].window).collect();
        let scorer = &self.scorers[&label];
        let r = reconstruct_windows(&windows, opts, Some(scorer.center))?;
        let m = scorer.score(&r.grid, opts.tau_mm)?;
        let detail = TrialDetail {
            record: TrialRecord {
                experiment: String::new(),
                plan: String::new(),
                trial: 0,
                f1: m.f1,
                iou: m.iou,
                surface: m.surface_score,
                asd_mm: m.asd_mm,
                hd95_mm: m.hd95_mm,
                seed: 0,
            },
            label,
            origin: opts.origin,
            views: picked.iter().map(|&i| views[i].id.clone()).collect(),
            view_sha256: picked.iter().map(|&i| views[i].mask_sha256.clone()).collect(),
            center_mm: r.center_mm,
            occupied_fraction: r.grid.occupied_fraction(),
            timing: r.timing,
        };
        Ok((m, detail))
    }

    /// `cfg.trials` realizations of every plan; trial `t` uses the same
    /// label for all plans.
    pub fn run_plans(&self, experiment: &str, plans: &[ViewPlan], cfg: &ExperimentConfig) -> Result<Vec<TrialDetail>> {
        let jobs: Vec<(usize, usize)> = (0..plans.len())
            .flat_map(|p| (0..cfg.trials).map(move |t| (p, t)))
            .collect();
        jobs.par_iter()
            .map(|&(p, t)| {
                let label = self.trial_label(cfg.seed, t);
                let classes = self.bank.classes(label)?;
                let picked = plans[p].realize(&classes, &mut view_rng(cfg.seed, p, t))?;
                let (_, mut d) = self.run_views(label, &picked, &cfg.recon)?;
                d.record.experiment = experiment.to_string();
                d.record.plan = plans[p].name.clone();
                d.record.trial = t;
                d.record.seed = cfg.seed;
                Ok(d)
            })
            .collect()
    }

    pub fn ablate_num_views(&self, cfg: &ExperimentConfig) -> Result<Vec<TrialDetail>> {
        self.run_plans("ablate-views", &view_count_plans(), cfg)
    }

    pub fn ablate_combinations(&self, cfg: &ExperimentConfig) -> Result<Vec<TrialDetail>> {
        self.run_plans("ablate-combos", &combination_plans(), cfg)
    }

    /// Paired trials of one plan with the triangulated and the ground-truth
    /// cube origin; plan names are the origin modes.
    pub fn origin_comparison(&self, plan: &ViewPlan, cfg: &ExperimentConfig) -> Result<Vec<TrialDetail>> {
        let modes = [OriginMode::Triangulated, OriginMode::GroundTruth];
        let per_trial = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let label = self.trial_label(cfg.seed, t);
                let classes = self.bank.classes(label)?;
                let picked = plan.realize(&classes, &mut view_rng(cfg.seed, 0, t))?;
                modes
                    .iter()
                    .map(|&origin| {
                        let opts = ReconstructOptions { origin, ..cfg.recon };
                        let (_, mut d) = self.run_views(label, &picked, &opts)?;
                        d.record.experiment = "origin".into();
                        d.record.plan = origin_name(origin).into();
                        d.record.trial = t;
                        d.record.seed = cfg.seed;
                        Ok(d)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        // Group by mode, then trial, like the other experiments.
        let mut out: Vec<TrialDetail> = per_trial.into_iter().flatten().collect();
        out.sort_by_key(|d| (d.origin != OriginMode::Triangulated, d.record.trial));
        Ok(out)
    }
}

pub fn origin_name(mode: OriginMode) -> &'static str {
    match mode {
        OriginMode::Triangulated => "TRIANGULATED",
        OriginMode::GroundTruth => "GROUND_TRUTH",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

impl Stat {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub experiment: String,
    pub plan: String,
    pub trials: usize,
    pub f1: Stat,
    pub iou: Stat,
    pub surface: Stat,
    pub asd_mm: Stat,
    pub hd95_mm: Stat,
}

/// Per-plan mean and SD, plans in first-seen order.
pub fn summarize(details: &[TrialDetail]) -> Vec<PlanSummary> {
    let mut order: Vec<(String, String)> = Vec::new();
    for d in details {
        let key = (d.record.experiment.clone(), d.record.plan.clone());
        if !order.contains(&key) {
            order.push(key);
        }
    }
    order
        .into_iter()
        .map(|(experiment, plan)| {
            let rows: Vec<_> = details
                .iter()
                .map(|d| &d.record)
                .filter(|r| r.experiment == experiment && r.plan == plan)
                .collect();
            let col = |f: fn(&TrialRecord) -> f64| Stat::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            PlanSummary {
                trials: rows.len(),
                f1: col(|r| r.f1),
                iou: col(|r| r.iou),
                surface: col(|r| r.surface),
                asd_mm: col(|r| r.asd_mm),
                hd95_mm: col(|r| r.hd95_mm),
                experiment,
                plan,
            }
        })
        .collect()
}

pub fn mean_surface(summaries: &[PlanSummary], plan: &str) -> Option<f64> {
    summaries.iter().find(|s| s.plan == plan).map(|s| s.surface.mean)
}

/// CSV with the fixed trial columns.
pub fn to_csv(details: &[TrialDetail]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for d in details {
        w.serialize(&d.record)
            .map_err(|e| Error::invalid("csv", e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid("csv", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Summary JSON: configuration, per-plan statistics and per-trial views.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub experiment: String,
    pub config: ExperimentConfig,
    pub plans: Vec<PlanSummary>,
    pub trials: Vec<TrialDetail>,
}

impl ExperimentSummary {
    pub fn new(experiment: &str, config: ExperimentConfig, trials: Vec<TrialDetail>) -> Self {
        ExperimentSummary {
            experiment: experiment.into(),
            config,
            plans: summarize(&trials),
            trials,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes") + "\n"
    }
}
