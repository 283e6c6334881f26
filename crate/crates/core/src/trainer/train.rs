use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::objective::{prepare_sample, record_objective, PreparedSample};
use super::{ExperimentConfig, TimeSampling};
use crate::dit::{normalize_cam, DitModel};
use crate::error::{Error, Result};
use crate::losses::masked_condition_loss;
use crate::numerics::{adamw_step, AdamWState, Tape, Tensor};
use crate::synthetic::{splitmix64, Dataset, DatasetSpec, Split};

/// Training scenes for both curriculum phases.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub single: Dataset,
    pub multi: Dataset,
}

impl TrainData {
    /// Single-subject scenes take train-split indices `0..single_scenes`;
    /// multi-subject scenes follow them.
    pub fn generate(cfg: &ExperimentConfig) -> Result<Self> {
        let tr = &cfg.train;
        let t = tr.t_target as f64;
        let single = Dataset::generate(
            &DatasetSpec {
                data_seed: tr.data_seed,
                split: Split::Train,
                count: tr.single_scenes,
                offset: 0,
                subjects: (1, 1),
                t_target: t,
            },
            &cfg.scene,
        )?;
        let multi = Dataset::generate(
            &DatasetSpec {
                data_seed: tr.data_seed,
                split: Split::Train,
                count: tr.multi_scenes,
                offset: tr.single_scenes as u64,
                subjects: tr.multi_subjects,
                t_target: t,
            },
            &cfg.scene,
        )?;
        Ok(TrainData { single, multi })
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut s = self.single.seeds();
        s.extend(self.multi.seeds());
        s
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub diff: f64,
    pub mask: f64,
    pub total: f64,
}

#[derive(Serialize)]
struct DumpEntry {
    scene_seed: u64,
    t: f64,
    diff: Option<f64>,
    mask: Option<f64>,
    total: Option<f64>,
    error: Option<String>,
}

struct SampleResult {
    grads: Vec<Tensor<f64>>,
    diff: f64,
    mask: f64,
    total: f64,
}

/// Worker count from `LDIT_THREADS`, defaulting to the available cores.
pub fn thread_count() -> usize {
    std::env::var("LDIT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Owns the model, the optimizer and the prepared scenes.
///
/// Every step draws its batch indices, diffusion times and noise from a
/// generator seeded by `(seed, step)`, so a run resumed from a checkpoint
/// sees exactly the batches the uninterrupted run would have seen.
/// Per-sample gradients may be computed in parallel; they are always summed
/// in batch order.
pub struct Trainer {
    cfg: ExperimentConfig,
    model: DitModel<f64>,
    opt: AdamWState<f64>,
    step: u64,
    single: Vec<PreparedSample>,
    multi: Vec<PreparedSample>,
    pool: Option<rayon::ThreadPool>,
    dump_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(cfg: &ExperimentConfig, data: &TrainData) -> Result<Self> {
        cfg.validate()?;
        let cfg = cfg.resolved();
        let model = DitModel::new(cfg.model.clone(), cfg.train.seed)?;
        let opt = AdamWState::new(&model.params);
        Self::assemble(cfg, model, opt, 0, data)
    }

    pub fn resume(ckpt: Checkpoint, data: &TrainData) -> Result<Self> {
        let cfg = ckpt.config.resolved();
        let model = DitModel::from_params(cfg.model.clone(), ckpt.params)?;
        Self::assemble(cfg, model, ckpt.optimizer, ckpt.step, data)
    }

    fn assemble(
        cfg: ExperimentConfig,
        model: DitModel<f64>,
        opt: AdamWState<f64>,
        step: u64,
        data: &TrainData,
    ) -> Result<Self> {
        let mode = cfg.train.position_mode();
        let prep = |d: &Dataset| {
            d.samples
                .iter()
                .map(|s| prepare_sample(s, &cfg.model, mode))
                .collect::<Result<Vec<_>>>()
        };
        let (single, multi) = (prep(&data.single)?, prep(&data.multi)?);
        let (s1, s2) = cfg.train.steps();
        if s1 > 0 && single.is_empty() || s2 > 0 && multi.is_empty() {
            return Err(Error::invalid("training data is empty for a phase with steps"));
        }
        let threads = thread_count();
        let pool = if threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| Error::invalid(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Trainer {
            cfg,
            model,
            opt,
            step,
            single,
            multi,
            pool,
            dump_dir: None,
        })
    }

    /// Where a diagnostic dump goes if a loss turns non-finite.
    pub fn set_dump_dir(&mut self, dir: impl Into<PathBuf>) {
        self.dump_dir = Some(dir.into());
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn model(&self) -> &DitModel<f64> {
        &self.model
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn total_steps(&self) -> u64 {
        self.cfg.train.total_steps()
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            step: self.step,
            params: self.model.params.clone(),
            optimizer: self.opt.clone(),
        }
    }

    pub fn into_model(self) -> DitModel<f64> {
        self.model
    }

    fn draw_time(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self.cfg.train.time_sampling {
            TimeSampling::Uniform => rng.random::<f64>(),
            TimeSampling::LogitNormal => {
                let z: f64 = StandardNormal.sample(rng);
                1.0 / (1.0 + (-z).exp())
            }
        }
    }

    /// Runs one optimizer step and returns its log record.
    pub fn step(&mut self) -> Result<StepRecord> {
        if self.is_done() {
            return Err(Error::invalid("training already finished"));
        }
        let (single_steps, _) = self.cfg.train.steps();
        let pool = if self.step < single_steps {
            &self.single
        } else {
            &self.multi
        };
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.cfg.train.seed ^ splitmix64(self.step)));
        let shape = [self.cfg.model.noise_tokens(), self.cfg.model.patch_dim()];
        let batch: Vec<(usize, f64, Tensor<f64>)> = (0..self.cfg.train.batch_size)
            .map(|_| {
                let idx = rng.random_range(0..pool.len());
                let t = self.draw_time(&mut rng);
                let noise = Tensor::from_fn(&shape, |_| StandardNormal.sample(&mut rng));
                (idx, t, noise)
            })
            .collect();

        let lambda = self.cfg.train.effective_lambda();
        let model = &self.model;
        let run = |(idx, t, noise): &(usize, f64, Tensor<f64>)| -> Result<SampleResult> {
            let mut tape = Tape::new();
            let pv = model.register(&mut tape, true);
            let o = record_objective(model, &mut tape, &pv, &pool[*idx], *t, noise, lambda)?;
            let value = |v| tape.value(v).data()[0];
            let (diff, mask, total) = (value(o.diff), value(o.mask), value(o.total));
            if !(diff.is_finite() && mask.is_finite() && total.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite loss diff={diff} mask={mask} total={total}"
                )));
            }
            let mut g = tape.backward(o.total)?;
            let grads: Vec<Tensor<f64>> = pv.vars().iter().map(|&v| g.take(v)).collect();
            if grads.iter().any(|t| !t.is_finite()) {
                return Err(Error::Numeric("non-finite gradient".into()));
            }
            Ok(SampleResult {
                grads,
                diff,
                mask,
                total,
            })
        };
        let results: Vec<Result<SampleResult>> = match &self.pool {
            Some(p) => p.install(|| batch.par_iter().map(run).collect()),
            None => batch.iter().map(run).collect(),
        };

        if results.iter().any(|r| r.is_err()) {
            let entries: Vec<DumpEntry> = batch
                .iter()
                .zip(&results)
                .map(|((idx, t, _), r)| match r {
                    Ok(s) => DumpEntry {
                        scene_seed: pool[*idx].seed,
                        t: *t,
                        diff: Some(s.diff),
                        mask: Some(s.mask),
                        total: Some(s.total),
                        error: None,
                    },
                    Err(e) => DumpEntry {
                        scene_seed: pool[*idx].seed,
                        t: *t,
                        diff: None,
                        mask: None,
                        total: None,
                        error: Some(e.to_string()),
                    },
                })
                .collect();
            let first = results.into_iter().find_map(|r| r.err()).expect("an error is present");
            let mut msg = format!("step {}: {first}", self.step + 1);
            if let Some(dir) = &self.dump_dir {
                let path = dir.join(format!("nonfinite_step{}.json", self.step + 1));
                let body = serde_json::json!({ "step": self.step + 1, "error": first.to_string(), "batch": entries });
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                std::fs::write(&path, serde_json::to_vec_pretty(&body).expect("dump serializes"))
                    .map_err(|e| Error::io(&path, e))?;
                msg.push_str(&format!("; batch dumped to {}", path.display()));
            }
            return Err(match first {
                Error::Numeric(_) => Error::Numeric(msg),
                other => other,
            });
        }

        let results: Vec<SampleResult> = results.into_iter().map(|r| r.expect("checked")).collect();
        let inv = 1.0 / results.len() as f64;
        let mut grads = results[0].grads.clone();
        for r in &results[1..] {
            for (g, x) in grads.iter_mut().zip(&r.grads) {
                g.add_assign(x)?;
            }
        }
        for g in &mut grads {
            g.scale_in_place(inv);
        }
        adamw_step(&mut self.model.params, &grads, &mut self.opt, &self.cfg.train.adamw())?;
        self.step += 1;
        let mean = |f: fn(&SampleResult) -> f64| results.iter().map(f).sum::<f64>() * inv;
        Ok(StepRecord {
            step: self.step,
            diff: mean(|r| r.diff),
            mask: mean(|r| r.mask),
            total: mean(|r| r.total),
        })
    }

    /// Steps until `until` (capped at the configured total), reporting each
    /// record to `on_step`.
    pub fn run_until(&mut self, until: u64, mut on_step: impl FnMut(&StepRecord) -> Result<()>) -> Result<()> {
        let until = until.min(self.total_steps());
        while self.step < until {
            let rec = self.step()?;
            on_step(&rec)?;
        }
        Ok(())
    }

    /// Mean masked condition loss on the first `n` multi-subject training
    /// scenes at `t = 0.5`, with noise seeded by each scene.
    pub fn probe_leakage(&self, n: usize) -> Result<f64> {
        probe_leakage(&self.model, &self.multi[..n.min(self.multi.len())])
    }
}

/// See [`Trainer::probe_leakage`].
pub fn probe_leakage(model: &DitModel<f64>, samples: &[PreparedSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("no scenes to probe"));
    }
    let cfg = model.config();
    let shape = [cfg.noise_tokens(), cfg.patch_dim()];
    let mut total = 0.0;
    for s in samples {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(s.seed));
        let noise = Tensor::from_fn(&shape, |_| StandardNormal.sample(&mut rng));
        let noisy = s.clean.zip_map(&noise, |y, e| 0.5 * y + 0.5 * e)?;
        let (_, cams) = model.predict(&s.seq, 0.5, &noisy, &[cfg.cam_block_index])?;
        let maps: Vec<Tensor<f64>> = cams[0].iter().map(normalize_cam).collect();
        total += masked_condition_loss(&maps, &s.masks)?;
    }
    Ok(total / samples.len() as f64)
}
