use std::io::Write as _;
use std::path::{Path, PathBuf};

use ldit_core::dit::{build_sequence, heatmap, DitModel, ReferenceCondition};
use ldit_core::image::RgbImage;
use ldit_core::layout::{generate_layout, parse_layout_with, serialize_layout, LayoutScores};
use ldit_core::losses::{leakage, rasterize_mask};
use ldit_core::numerics::Tensor;
use ldit_core::rope::RegionBox;
use ldit_core::synthetic::{gen_scene, Dataset, Split};
use ldit_core::trainer::{
    ablate, eval_dataset, evaluate, evaluate_checkpoint, generate, prepare_sample, AblationRow, AblationTable,
    Checkpoint, ExperimentConfig, PreparedSample, TrainData, Trainer,
};
use ldit_core::Error;
use serde_json::{json, Value};

use crate::config::{Budget, RunConfig};
use crate::CliError;

type Outcome = Result<Value, CliError>;

pub fn dispatch(command: &str, cfg: &RunConfig, out: &Path) -> Outcome {
    match command {
        "gen-data" => gen_data(cfg, out),
        "layout-gen" => layout_gen(cfg, out),
        "layout-eval" => layout_eval(cfg, out),
        "train" => train(cfg, out),
        "eval" => eval(cfg, out),
        "ablate" => run_ablation(cfg, out),
        "cam-dump" => cam_dump(cfg, out),
        "infer" => infer(cfg, out),
        other => Err(CliError::Usage(format!("unknown command {other:?}"))),
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v).expect("artifact serializes");
    text.push('\n');
    write(path, text.as_bytes())
}

fn name(path: &Path, out: &Path) -> String {
    path.strip_prefix(out).unwrap_or(path).display().to_string()
}

fn experiment(cfg: &RunConfig) -> Result<ExperimentConfig, CliError> {
    let exp = cfg.experiment();
    exp.validate()?;
    Ok(exp)
}

/// The configured checkpoint's model, or a fresh one seeded by `train.seed`.
fn load_model(cfg: &RunConfig, exp: &ExperimentConfig) -> Result<(DitModel<f64>, bool), CliError> {
    if cfg.paths.checkpoint.is_empty() {
        return Ok((DitModel::new(exp.model.clone(), exp.train.seed)?, false));
    }
    let ckpt = Checkpoint::load(Path::new(&cfg.paths.checkpoint))?;
    let stored = ckpt.config.resolved();
    if stored.model != exp.model || stored.train.use_regional_rope != exp.train.use_regional_rope {
        return Err(Error::Load(format!(
            "{} was trained with a different model or position configuration",
            cfg.paths.checkpoint
        ))
        .into());
    }
    Ok((DitModel::from_params(stored.model, ckpt.params)?, true))
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Outcome {
    let exp = experiment(cfg)?;
    let data = TrainData::generate(&exp)?;
    let mut samples = data.single.samples;
    samples.extend(data.multi.samples);
    let train = Dataset {
        split: Split::Train,
        samples,
    };
    train.write(out)?;
    let held_out = eval_dataset(&exp)?;
    held_out.write(out)?;
    Ok(json!({
        "train_scenes": train.len(),
        "eval_scenes": held_out.len(),
        "train_manifest": "train/manifest.jsonl",
        "eval_manifest": "eval/manifest.jsonl",
    }))
}

fn layout_gen(cfg: &RunConfig, out: &Path) -> Outcome {
    let g = &cfg.layout_gen;
    let script = match (g.panels, g.chars.is_empty()) {
        (0, true) => return Err(CliError::Usage("layout-gen needs --panels or --chars".into())),
        (n, true) => vec![1; n],
        (0, false) => g.chars.clone(),
        (n, false) if n == g.chars.len() => g.chars.clone(),
        (n, false) => {
            return Err(Error::invalid(format!("--panels {n} but --chars lists {} panels", g.chars.len())).into())
        }
    };
    cfg.layout.validate()?;
    let page = generate_layout(&script, g.aspect_ratio, g.seed, &cfg.generator)?;
    page.validate(&cfg.layout)?;
    let path = out.join("layout.json");
    write(&path, &serialize_layout(&page))?;
    let scores = LayoutScores::compute(std::slice::from_ref(&page), &[script], &cfg.layout)?;
    Ok(json!({"layout": name(&path, out), "panels": page.panels.len(), "scores": scores}))
}

fn layout_eval(cfg: &RunConfig, out: &Path) -> Outcome {
    if cfg.paths.input.is_empty() {
        return Err(CliError::Usage("layout-eval needs --in FILE".into()));
    }
    let bytes =
        std::fs::read(&cfg.paths.input).map_err(|e| Error::invalid(format!("cannot read {}: {e}", cfg.paths.input)))?;
    cfg.layout.validate()?;
    let page = parse_layout_with(&bytes, &cfg.layout)?;
    let expected = if cfg.layout_eval.chars.is_empty() {
        page.panels.iter().map(|p| p.characters.len()).collect()
    } else {
        cfg.layout_eval.chars.clone()
    };
    let scores = LayoutScores::compute(std::slice::from_ref(&page), &[expected], &cfg.layout)?;
    let path = out.join("layout_scores.json");
    write_json(&path, &scores)?;
    Ok(json!({"report": name(&path, out), "scores": scores}))
}

fn train(cfg: &RunConfig, out: &Path) -> Outcome {
    let exp = experiment(cfg)?;
    let data = TrainData::generate(&exp)?;
    let mut trainer = if cfg.paths.resume.is_empty() {
        Trainer::new(&exp, &data)?
    } else {
        let ckpt = Checkpoint::load(Path::new(&cfg.paths.resume))?;
        if ckpt.config.resolved() != exp {
            return Err(Error::Load(format!(
                "{} was written under a different configuration",
                cfg.paths.resume
            ))
            .into());
        }
        Trainer::resume(ckpt, &data)?
    };
    trainer.set_dump_dir(out.join("dumps"));
    let log_path = out.join("metrics.jsonl");
    let file = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = std::io::BufWriter::new(file);
    let every = cfg.train_loop.checkpoint_every;
    let first = trainer.step_count();
    let mut last = None;
    while !trainer.is_done() {
        let r = trainer.step()?;
        writeln!(log, "{}", serde_json::to_string(&r).expect("record serializes"))
            .map_err(|e| Error::io(&log_path, e))?;
        if every > 0 && trainer.step_count() % every == 0 && !trainer.is_done() {
            let p = out.join(format!("ckpt_{}.bin", trainer.step_count()));
            trainer.checkpoint().save(&p)?;
        }
        last = Some(r);
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let ckpt_path = out.join("checkpoint.bin");
    trainer.checkpoint().save(&ckpt_path)?;
    let mut summary = json!({
        "steps": trainer.step_count() - first,
        "total_steps": trainer.total_steps(),
        "final": last,
        "metrics": name(&log_path, out),
        "checkpoint": name(&ckpt_path, out),
    });
    if cfg.train_loop.evaluate {
        let model = trainer.into_model();
        let report = evaluate(&model, &exp, &eval_dataset(&exp)?, Some(&data.seeds()))?;
        let p = out.join("eval_report.json");
        write_json(&p, &report)?;
        summary["eval"] = report_summary(&report);
        summary["report"] = json!(name(&p, out));
    }
    Ok(summary)
}

fn report_summary(r: &ldit_core::trainer::EvalReport) -> Value {
    json!({
        "scenes": r.scenes,
        "layout_precision": r.layout_precision,
        "count_match": r.count_match,
        "leakage": r.leakage,
    })
}

fn eval(cfg: &RunConfig, out: &Path) -> Outcome {
    if cfg.paths.checkpoint.is_empty() {
        return Err(CliError::Usage("eval needs --checkpoint FILE".into()));
    }
    let exp = experiment(cfg)?;
    let ckpt = Checkpoint::load(Path::new(&cfg.paths.checkpoint))?;
    let report = evaluate_checkpoint(&ckpt, &exp, &eval_dataset(&exp)?)?;
    let path = out.join("eval_report.json");
    write_json(&path, &report)?;
    let mut summary = report_summary(&report);
    summary["report"] = json!(name(&path, out));
    summary["checkpoint_step"] = json!(ckpt.step);
    Ok(summary)
}

fn mean_table(tables: &[AblationTable]) -> AblationTable {
    let n = tables.len() as f64;
    let rows = (0..tables[0].rows.len())
        .map(|i| {
            let avg = |f: fn(&AblationRow) -> f64| tables.iter().map(|t| f(&t.rows[i])).sum::<f64>() / n;
            AblationRow {
                jitter_magnitude: avg(|r| r.jitter_magnitude),
                layout_precision: avg(|r| r.layout_precision),
                count_match: avg(|r| r.count_match),
                leakage: avg(|r| r.leakage),
                final_total_loss: avg(|r| r.final_total_loss),
                ..tables[0].rows[i].clone()
            }
        })
        .collect();
    AblationTable {
        seed: tables[0].seed,
        data_seed: tables[0].data_seed,
        rows,
    }
}

fn run_ablation(cfg: &RunConfig, out: &Path) -> Outcome {
    let mut base = experiment(cfg)?;
    base.train.paper_budget = cfg.ablate.budget == Budget::Paper;
    if cfg.ablate.seeds.is_empty() {
        return Err(CliError::Usage("ablate needs at least one seed".into()));
    }
    let mut tables = Vec::new();
    for &seed in &cfg.ablate.seeds {
        base.train.seed = seed;
        let table = ablate(&base, |label, row| {
            eprintln!("seed {seed} {label}: layout precision {:.2}", row.layout_precision)
        })?;
        tables.push(table);
    }
    let mean = mean_table(&tables);
    let json_path = out.join("ablation.json");
    write_json(
        &json_path,
        &json!({"seeds": cfg.ablate.seeds, "tables": tables, "mean": mean}),
    )?;
    let mut text = format!("mean over seeds {:?}\n", cfg.ablate.seeds);
    text.push_str(&mean.to_text());
    for t in &tables {
        text.push_str(&format!("\nseed {}\n", t.seed));
        text.push_str(&t.to_text());
    }
    let text_path = out.join("ablation.txt");
    write(&text_path, text.as_bytes())?;
    let cells: Vec<Value> = mean
        .rows
        .iter()
        .map(|r| {
            json!({
                "group": r.group, "label": r.label, "layout_precision": r.layout_precision,
                "count_match": r.count_match, "leakage": r.leakage, "jitter_magnitude": r.jitter_magnitude,
            })
        })
        .collect();
    Ok(json!({"table": name(&text_path, out), "results": name(&json_path, out), "cells": cells}))
}

fn cam_dump(cfg: &RunConfig, out: &Path) -> Outcome {
    let exp = experiment(cfg)?;
    let (model, trained) = load_model(cfg, &exp)?;
    let data = eval_dataset(&exp)?;
    let sample = data.samples.get(cfg.cam.scene).ok_or_else(|| {
        Error::invalid(format!(
            "scene {} out of range; {} held-out scenes",
            cfg.cam.scene,
            data.len()
        ))
    })?;
    let prepared = prepare_sample(sample, &exp.model, exp.train.position_mode())?;
    let blocks: Vec<usize> = (0..exp.model.n_blocks).collect();
    let g = generate(&model, &prepared, exp.eval.sampler_steps, exp.eval.noise_seed, &blocks)?;
    let grid = exp.model.noise_grid;
    let mut files = Vec::new();
    let mut leak = Vec::new();
    for (&(r, b), map) in g.cams.iter() {
        let p = out.join(format!("cam_r{r}_b{b}.ppm"));
        heatmap(map, grid, cfg.cam.scale)?.write_ppm(&p)?;
        files.push(name(&p, out));
        leak.push(json!({"reference": r, "block": b, "leakage": leakage(map, &prepared.masks[r])?}));
    }
    for (r, m) in prepared.masks.iter().enumerate() {
        let cells = Tensor::from_fn(&[grid.0, grid.1], |i| f64::from(u8::from(m.cells()[i])));
        let p = out.join(format!("mask_r{r}.ppm"));
        heatmap(&cells, grid, cfg.cam.scale)?.write_ppm(&p)?;
        files.push(name(&p, out));
    }
    for (file, img) in [("sample.ppm", &g.image), ("target.ppm", &sample.target)] {
        let p = out.join(file);
        img.write_ppm(&p)?;
        files.push(name(&p, out));
    }
    Ok(json!({"scene_seed": sample.spec.seed, "trained": trained, "files": files, "leakage": leak}))
}

fn infer(cfg: &RunConfig, out: &Path) -> Outcome {
    let exp = experiment(cfg)?;
    let boxes = &cfg.infer.boxes;
    if boxes.is_empty() {
        return Err(CliError::Usage("infer needs --boxes".into()));
    }
    let grid = exp.model.noise_grid;
    let regions = boxes
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let bad = |why: String| Error::invalid(format!("box {k} {b:?}: {why}"));
            let r = RegionBox::new(b[0], b[1], b[2], b[3], exp.model.align).map_err(|e| bad(e.to_string()))?;
            if !r.within_grid(grid) {
                return Err(bad(format!("outside the {}x{} noise grid", grid.0, grid.1)));
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let (images, ids, condition_ids) = if cfg.infer.references.is_empty() {
        let scene = gen_scene(cfg.infer.scene_seed, boxes.len(), &exp.scene, exp.train.t_target as f64)?;
        let ids = (0..boxes.len()).map(|k| scene.identity_token(k)).collect::<Vec<_>>();
        (scene.references, ids, scene.condition_ids)
    } else {
        if cfg.infer.references.len() != boxes.len() {
            return Err(Error::invalid(format!(
                "{} references for {} boxes",
                cfg.infer.references.len(),
                boxes.len()
            ))
            .into());
        }
        let images = cfg
            .infer
            .references
            .iter()
            .map(|p| RgbImage::read_ppm(&PathBuf::from(p)))
            .collect::<Result<Vec<_>, Error>>()?;
        let ids: Vec<usize> = (1..=boxes.len()).collect();
        let mut condition_ids = vec![0];
        condition_ids.extend(&ids);
        (images, ids, condition_ids)
    };
    let refs: Vec<ReferenceCondition<f64>> = images
        .iter()
        .zip(&regions)
        .zip(&ids)
        .map(|((img, b), &id)| ReferenceCondition::from_rgb(img, *b, id))
        .collect();
    let seq = build_sequence(&refs, &condition_ids, &exp.model, exp.train.position_mode())?;
    let (model, trained) = load_model(cfg, &exp)?;
    let prepared = PreparedSample {
        seed: 0,
        seq,
        clean: Tensor::zeros(&[exp.model.noise_tokens(), exp.model.patch_dim()]),
        masks: regions
            .iter()
            .map(|b| rasterize_mask(b, grid))
            .collect::<Result<Vec<_>, Error>>()?,
    };
    let cam_block = exp.model.cam_block_index;
    let g = generate(&model, &prepared, exp.eval.sampler_steps, cfg.infer.seed, &[cam_block])?;
    let image_path = out.join("infer.ppm");
    g.image.write_ppm(&image_path)?;
    let mut files = vec![name(&image_path, out)];
    let mut leak = Vec::new();
    for (r, mask) in prepared.masks.iter().enumerate() {
        if let Some(map) = g.cams.get(r, cam_block) {
            let p = out.join(format!("cam_r{r}_b{cam_block}.ppm"));
            heatmap(map, grid, cfg.cam.scale)?.write_ppm(&p)?;
            files.push(name(&p, out));
            leak.push(leakage(map, mask)?);
        }
    }
    Ok(json!({"trained": trained, "files": files, "leakage": leak}))
}
