use std::sync::Arc;

use super::cam::cam_from_logits;
use super::params::ParamLayout;
use super::sequence::{SegmentKind, TokenSequence};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{RotationTable, Tape, Tensor, Var};
use crate::rope::{shared_rotation_table, RopeConfig};
use crate::scalar::Scalar;

const LN_EPS: f64 = 1e-6;

/// The toy diffusion transformer: configuration plus parameter tensors in
/// [`ParamLayout`] order.
#[derive(Clone, Debug)]
pub struct DitModel<T> {
    cfg: ModelConfig,
    rope: RopeConfig,
    layout: ParamLayout,
    pub params: Vec<Tensor<T>>,
}

/// Parameter tensors registered on one tape.
#[derive(Clone, Debug)]
pub struct ParamVars(Vec<Var>);

impl ParamVars {
    /// Handles already on a tape, in [`ParamLayout`] order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        ParamVars(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

/// What one forward pass produced.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `noise_tokens × patch_dim` predicted velocity.
    pub velocity: Var,
    /// Raw (pre-normalization) maps, `cams_raw[b][r]` for the `b`-th
    /// requested block and reference `r`, each `1 × noise_tokens`.
    pub cams_raw: Vec<Vec<Var>>,
}

/// Which cross-attention maps [`DitModel::forward_tokens`] should extract.
#[derive(Clone, Debug, Default)]
pub struct CamPlan {
    pub blocks: Vec<usize>,
    pub references: Vec<std::ops::Range<usize>>,
    pub noise: std::ops::Range<usize>,
}

impl<T: Scalar> DitModel<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let layout = ParamLayout::new(&cfg);
        let params = layout.init(seed);
        Ok(DitModel {
            rope: cfg.rope()?,
            cfg,
            layout,
            params,
        })
    }

    pub fn from_params(cfg: ModelConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        cfg.validate()?;
        let layout = ParamLayout::new(&cfg);
        layout.check(&params)?;
        Ok(DitModel {
            rope: cfg.rope()?,
            cfg,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn rope(&self) -> &RopeConfig {
        &self.rope
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Registers every parameter on `tape`, as trainable leaves or as
    /// constants.
    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> ParamVars {
        ParamVars(
            self.params
                .iter()
                .map(|p| {
                    if trainable {
                        tape.param(p.clone())
                    } else {
                        tape.constant(p.clone())
                    }
                })
                .collect(),
        )
    }

    /// Sinusoidal features of the diffusion time, `1 × d_model`.
    fn time_features(&self, t: T) -> Tensor<T> {
        let d = self.cfg.d_model;
        let half = d / 2;
        let ts = t * T::lit(1000.0);
        Tensor::from_fn(&[1, d], |k| {
            if k >= 2 * half {
                return T::zero();
            }
            let f = T::lit((-(10_000f64.ln()) * (k % half) as f64 / half as f64).exp());
            if k < half {
                (ts * f).cos()
            } else {
                (ts * f).sin()
            }
        })
    }

    /// Conditioning vector `SiLU(MLP(time features))`, `1 × d_model`.
    pub fn time_conditioning(&self, tape: &mut Tape<T>, pv: &ParamVars, t: T) -> Result<Var> {
        let p = pv.vars();
        let l = &self.layout;
        let feat = tape.constant(self.time_features(t));
        let h = tape.matmul(feat, p[l.time_w1])?;
        let h = tape.add_row(h, p[l.time_b1])?;
        let h = tape.silu(h);
        let h = tape.matmul(h, p[l.time_w2])?;
        let h = tape.add_row(h, p[l.time_b2])?;
        Ok(tape.silu(h))
    }

    /// Token embeddings for the whole sequence, `len × d_model`: condition
    /// ids through the lookup table, references and noise through the shared
    /// patch projection, references offset by a learned vector.
    pub fn embed(&self, tape: &mut Tape<T>, pv: &ParamVars, seq: &TokenSequence<T>, noisy: &Tensor<T>) -> Result<Var> {
        let p = pv.vars();
        let l = &self.layout;
        let mut parts = Vec::with_capacity(seq.segments.len());
        for s in &seq.segments {
            let v = match s.kind {
                SegmentKind::Condition => tape.gather_rows(p[l.cond_table], &seq.condition_ids)?,
                SegmentKind::Reference(r) => {
                    let x = tape.constant(seq.references[r].patches.clone());
                    let e = tape.matmul(x, p[l.patch_w])?;
                    let e = tape.add_row(e, p[l.patch_b])?;
                    tape.add_row(e, p[l.ref_embed])?
                }
                SegmentKind::Noise => {
                    let x = tape.constant(noisy.clone());
                    let e = tape.matmul(x, p[l.patch_w])?;
                    tape.add_row(e, p[l.patch_b])?
                }
            };
            parts.push(v);
        }
        tape.concat_rows(&parts)
    }

    /// Runs the block stack on pre-embedded tokens.
    ///
    /// `x` is `len × d_model`, `cond` the `1 × d_model` conditioning vector,
    /// `table` the per-token rotations and `visibility` an optional
    /// `len × len` attention mask. Returns the final hidden states and the
    /// raw maps requested by `cams`.
    pub fn forward_tokens(
        &self,
        tape: &mut Tape<T>,
        pv: &ParamVars,
        x: Var,
        cond: Var,
        table: Arc<RotationTable<T>>,
        visibility: Option<&[bool]>,
        cams: &CamPlan,
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        let p = pv.vars();
        let d = self.cfg.d_model;
        let hd = self.cfg.head_dim();
        let inv_sqrt = T::one() / T::lit(hd as f64).sqrt();
        let mut x = x;
        let mut cams_raw = Vec::with_capacity(cams.blocks.len());
        for (bi, b) in self.layout.blocks.iter().enumerate() {
            let m = tape.matmul(cond, p[b.mod_w])?;
            let m = tape.add_row(m, p[b.mod_b])?;
            let mut chunk = Vec::with_capacity(6);
            for k in 0..6 {
                chunk.push(tape.slice_cols(m, k * d, d)?);
            }
            let (shift1, scale1, gate1, shift2, scale2, gate2) =
                (chunk[0], chunk[1], chunk[2], chunk[3], chunk[4], chunk[5]);

            let h = tape.layer_norm(x, T::lit(LN_EPS));
            let h = tape.modulate(h, shift1, scale1)?;
            let q = tape.matmul(h, p[b.wq])?;
            let q = tape.add_row(q, p[b.bq])?;
            let k = tape.matmul(h, p[b.wk])?;
            let k = tape.add_row(k, p[b.bk])?;
            let v = tape.matmul(h, p[b.wv])?;
            let v = tape.add_row(v, p[b.bv])?;

            let mut heads = Vec::with_capacity(self.cfg.n_heads);
            let mut head_logits = Vec::with_capacity(self.cfg.n_heads);
            for head in 0..self.cfg.n_heads {
                let (qh, kh, vh) = if self.cfg.n_heads == 1 {
                    (q, k, v)
                } else {
                    (
                        tape.slice_cols(q, head * hd, hd)?,
                        tape.slice_cols(k, head * hd, hd)?,
                        tape.slice_cols(v, head * hd, hd)?,
                    )
                };
                let qr = tape.rotate_pairs(qh, table.clone())?;
                let kr = tape.rotate_pairs(kh, table.clone())?;
                let logits = tape.matmul_nt(qr, kr)?;
                let logits = tape.scale(logits, inv_sqrt);
                let probs = tape.softmax(logits, visibility)?;
                heads.push(tape.matmul(probs, vh)?);
                head_logits.push(logits);
            }
            if cams.blocks.contains(&bi) {
                let mut per_ref = Vec::with_capacity(cams.references.len());
                for r in &cams.references {
                    per_ref.push(cam_from_logits(tape, &head_logits, r.clone(), cams.noise.clone())?);
                }
                cams_raw.push(per_ref);
            }
            let o = if heads.len() == 1 {
                heads[0]
            } else {
                tape.concat_cols(&heads)?
            };
            let o = tape.matmul(o, p[b.wo])?;
            let o = tape.add_row(o, p[b.bo])?;
            let o = tape.mul_row(o, gate1)?;
            x = tape.add(x, o)?;

            let h = tape.layer_norm(x, T::lit(LN_EPS));
            let h = tape.modulate(h, shift2, scale2)?;
            let h = tape.matmul(h, p[b.mlp_w1])?;
            let h = tape.add_row(h, p[b.mlp_b1])?;
            let h = tape.silu(h);
            let h = tape.matmul(h, p[b.mlp_w2])?;
            let h = tape.add_row(h, p[b.mlp_b2])?;
            let h = tape.mul_row(h, gate2)?;
            x = tape.add(x, h)?;
        }
        Ok((x, cams_raw))
    }

    /// Velocity prediction `v(noisy, t | references, condition)` for every
    /// noise token, plus raw cross-attention maps for `cam_blocks`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        pv: &ParamVars,
        seq: &TokenSequence<T>,
        t: T,
        noisy: &Tensor<T>,
        cam_blocks: &[usize],
    ) -> Result<ForwardOutput> {
        let n = self.cfg.noise_tokens();
        if seq.noise_grid != self.cfg.noise_grid {
            return Err(Error::dim(format!(
                "sequence noise grid {:?} differs from the model's {:?}",
                seq.noise_grid, self.cfg.noise_grid
            )));
        }
        if noisy.rows() != n || noisy.cols() != self.cfg.patch_dim() {
            return Err(Error::dim(format!(
                "noisy latent {:?} should be {n}x{}",
                noisy.shape(),
                self.cfg.patch_dim()
            )));
        }
        if !(t >= T::zero() && t <= T::one()) {
            return Err(Error::invalid(format!("diffusion time {t} outside [0, 1]")));
        }
        if let Some(&b) = cam_blocks.iter().find(|&&b| b >= self.cfg.n_blocks) {
            return Err(Error::invalid(format!("no block {b} to extract maps from")));
        }
        let noise = seq.noise_segment();
        let plan = CamPlan {
            blocks: cam_blocks.to_vec(),
            references: (0..seq.references.len())
                .map(|r| seq.reference_segment(r).map(|s| s.range()))
                .collect::<Result<_>>()?,
            noise: noise.range(),
        };

        let p = pv.vars();
        let l = &self.layout;
        let cond = self.time_conditioning(tape, pv, t)?;
        let x = self.embed(tape, pv, seq, noisy)?;
        let table = shared_rotation_table(&seq.coords, &self.rope)?;
        let (x, cams_raw) = self.forward_tokens(tape, pv, x, cond, table, seq.mask(), &plan)?;

        let d = self.cfg.d_model;
        let xs = tape.slice_rows(x, noise.start, noise.len)?;
        let fm = tape.matmul(cond, p[l.final_mod_w])?;
        let fm = tape.add_row(fm, p[l.final_mod_b])?;
        let shift = tape.slice_cols(fm, 0, d)?;
        let scale = tape.slice_cols(fm, d, d)?;
        let h = tape.layer_norm(xs, T::lit(LN_EPS));
        let h = tape.modulate(h, shift, scale)?;
        let out = tape.matmul(h, p[l.out_w])?;
        let velocity = tape.add_row(out, p[l.out_b])?;
        if !tape.value(velocity).is_finite() {
            return Err(Error::Numeric("non-finite velocity prediction".into()));
        }
        Ok(ForwardOutput { velocity, cams_raw })
    }

    /// Forward pass without gradients; returns the velocity and the raw maps.
    pub fn predict(
        &self,
        seq: &TokenSequence<T>,
        t: T,
        noisy: &Tensor<T>,
        cam_blocks: &[usize],
    ) -> Result<(Tensor<T>, Vec<Vec<Tensor<T>>>)> {
        let mut tape = Tape::new();
        let pv = self.register(&mut tape, false);
        let out = self.forward(&mut tape, &pv, seq, t, noisy, cam_blocks)?;
        let cams = out
            .cams_raw
            .iter()
            .map(|per| per.iter().map(|&v| tape.value(v).clone()).collect())
            .collect();
        Ok((tape.value(out.velocity).clone(), cams))
    }
}
