use serde::{Deserialize, Serialize};

use super::eval::{eval_dataset, evaluate, EvalReport};
use super::train::{StepRecord, TrainData, Trainer};
use super::ExperimentConfig;
use crate::dit::DitModel;
use crate::error::Result;

/// Timestamps of the sweep.
pub const SWEEP_T_TARGETS: [usize; 4] = [1, 3, 5, 9];
/// Timestamp of the loss-component grid.
pub const GRID_T_TARGET: usize = 3;

/// A trained model with its log and held-out evaluation.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub model: DitModel<f64>,
    pub log: Vec<StepRecord>,
    pub report: EvalReport,
    /// Mean jitter magnitude of the training targets, in `[0, 1]`.
    pub jitter_magnitude: f64,
    pub train_seeds: Vec<u64>,
}

/// Trains on freshly generated scenes and evaluates on the held-out split.
pub fn run_experiment(cfg: &ExperimentConfig, mut on_step: impl FnMut(&StepRecord) -> Result<()>) -> Result<RunResult> {
    cfg.validate()?;
    let data = TrainData::generate(cfg)?;
    let mut trainer = Trainer::new(cfg, &data)?;
    let mut log = Vec::with_capacity(trainer.total_steps() as usize);
    trainer.run_until(u64::MAX, |r| {
        log.push(*r);
        on_step(r)
    })?;
    let eval = eval_dataset(cfg)?;
    let train_seeds = data.seeds();
    let model = trainer.into_model();
    let report = evaluate(&model, cfg, &eval, Some(&train_seeds))?;
    let scenes = data.single.samples.iter().chain(&data.multi.samples);
    let (sum, n) = scenes.fold((0.0, 0usize), |(s, n), x| (s + x.spec.mean_jitter_magnitude(), n + 1));
    Ok(RunResult {
        model,
        log,
        report,
        jitter_magnitude: sum / n.max(1) as f64,
        train_seeds,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `loss` for the component grid, `timestamp` for the sweep.
    pub group: String,
    pub label: String,
    pub use_regional_rope: bool,
    pub use_masked_loss: bool,
    pub t_target: usize,
    pub jitter_magnitude: f64,
    pub layout_precision: f64,
    pub count_match: f64,
    pub leakage: f64,
    pub final_total_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seed: u64,
    pub data_seed: u64,
    pub rows: Vec<AblationRow>,
}

/// The eight cells: regional rotary positions and masked loss switched on
/// and off at the grid timestamp, then the timestamp sweep with both on.
pub fn ablation_cells(base: &ExperimentConfig) -> Vec<(&'static str, String, ExperimentConfig)> {
    let mut cells = Vec::with_capacity(8);
    for (rope, mask, label) in [
        (true, true, "full"),
        (true, false, "no masked loss"),
        (false, true, "no regional rope"),
        (false, false, "neither"),
    ] {
        let mut c = base.clone();
        c.train.use_regional_rope = rope;
        c.train.use_masked_loss = mask;
        c.train.t_target = GRID_T_TARGET;
        cells.push(("loss", label.to_string(), c));
    }
    for t in SWEEP_T_TARGETS {
        let mut c = base.clone();
        c.train.use_regional_rope = true;
        c.train.use_masked_loss = true;
        c.train.t_target = t;
        cells.push(("timestamp", format!("t_target={t}"), c));
    }
    cells
}

/// Trains and evaluates every cell on the same data seed. Cells with
/// identical configurations are computed once.
pub fn ablate(base: &ExperimentConfig, mut progress: impl FnMut(&str, &AblationRow)) -> Result<AblationTable> {
    let mut done: Vec<(ExperimentConfig, AblationRow)> = Vec::new();
    let mut rows = Vec::new();
    for (group, label, cfg) in ablation_cells(base) {
        let row = match done.iter().find(|(c, _)| *c == cfg) {
            Some((_, r)) => AblationRow {
                group: group.to_string(),
                label: label.clone(),
                ..r.clone()
            },
            None => {
                let r = run_experiment(&cfg, |_| Ok(()))?;
                let row = AblationRow {
                    group: group.to_string(),
                    label: label.clone(),
                    use_regional_rope: cfg.train.use_regional_rope,
                    use_masked_loss: cfg.train.use_masked_loss,
                    t_target: cfg.train.t_target,
                    jitter_magnitude: r.jitter_magnitude,
                    layout_precision: r.report.layout_precision,
                    count_match: r.report.count_match,
                    leakage: r.report.leakage,
                    final_total_loss: r.log.last().map_or(f64::NAN, |l| l.total),
                };
                done.push((cfg, row.clone()));
                row
            }
        };
        progress(&label, &row);
        rows.push(row);
    }
    Ok(AblationTable {
        seed: base.train.seed,
        data_seed: base.train.data_seed,
        rows,
    })
}

impl AblationTable {
    /// Fixed-width text rendering, one row per cell.
    pub fn to_text(&self) -> String {
        let header = [
            "group",
            "label",
            "rope",
            "mask",
            "t",
            "jitter",
            "layout_prec",
            "count_match",
            "leakage",
            "loss",
        ];
        let mut lines: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            lines.push(vec![
                r.group.clone(),
                r.label.clone(),
                if r.use_regional_rope { "on" } else { "off" }.into(),
                if r.use_masked_loss { "on" } else { "off" }.into(),
                r.t_target.to_string(),
                format!("{:.3}", r.jitter_magnitude),
                format!("{:.2}", r.layout_precision),
                format!("{:.2}", r.count_match),
                format!("{:.4}", r.leakage),
                format!("{:.4}", r.final_total_loss),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, &w))| if c < 2 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}
