use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Indices of one transformer block's tensors in [`ParamLayout`].
#[derive(Clone, Debug)]
pub struct BlockParams {
    pub mod_w: usize,
    pub mod_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub mlp_w1: usize,
    pub mlp_b1: usize,
    pub mlp_w2: usize,
    pub mlp_b2: usize,
}

/// Fixed declaration order of every parameter tensor. Checkpoints store the
/// tensors in exactly this order.
#[derive(Clone, Debug)]
pub struct ParamLayout {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    pub patch_w: usize,
    pub patch_b: usize,
    pub ref_embed: usize,
    pub cond_table: usize,
    pub time_w1: usize,
    pub time_b1: usize,
    pub time_w2: usize,
    pub time_b2: usize,
    pub blocks: Vec<BlockParams>,
    pub final_mod_w: usize,
    pub final_mod_b: usize,
    pub out_w: usize,
    pub out_b: usize,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
}

impl Builder {
    fn add(&mut self, name: impl Into<String>, shape: [usize; 2]) -> usize {
        self.names.push(name.into());
        self.shapes.push(shape.to_vec());
        self.names.len() - 1
    }
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let mut b = Builder {
            names: Vec::new(),
            shapes: Vec::new(),
        };
        let patch_w = b.add("patch.w", [cfg.patch_dim(), d]);
        let patch_b = b.add("patch.b", [1, d]);
        let ref_embed = b.add("reference.embed", [1, d]);
        let cond_table = b.add("condition.table", [cfg.vocab_size, d]);
        let time_w1 = b.add("time.w1", [d, d]);
        let time_b1 = b.add("time.b1", [1, d]);
        let time_w2 = b.add("time.w2", [d, d]);
        let time_b2 = b.add("time.b2", [1, d]);
        let blocks = (0..cfg.n_blocks)
            .map(|k| BlockParams {
                mod_w: b.add(format!("block{k}.mod.w"), [d, 6 * d]),
                mod_b: b.add(format!("block{k}.mod.b"), [1, 6 * d]),
                wq: b.add(format!("block{k}.attn.wq"), [d, d]),
                bq: b.add(format!("block{k}.attn.bq"), [1, d]),
                wk: b.add(format!("block{k}.attn.wk"), [d, d]),
                bk: b.add(format!("block{k}.attn.bk"), [1, d]),
                wv: b.add(format!("block{k}.attn.wv"), [d, d]),
                bv: b.add(format!("block{k}.attn.bv"), [1, d]),
                wo: b.add(format!("block{k}.attn.wo"), [d, d]),
                bo: b.add(format!("block{k}.attn.bo"), [1, d]),
                mlp_w1: b.add(format!("block{k}.mlp.w1"), [d, cfg.mlp_hidden]),
                mlp_b1: b.add(format!("block{k}.mlp.b1"), [1, cfg.mlp_hidden]),
                mlp_w2: b.add(format!("block{k}.mlp.w2"), [cfg.mlp_hidden, d]),
                mlp_b2: b.add(format!("block{k}.mlp.b2"), [1, d]),
            })
            .collect();
        let final_mod_w = b.add("final.mod.w", [d, 2 * d]);
        let final_mod_b = b.add("final.mod.b", [1, 2 * d]);
        let out_w = b.add("final.out.w", [d, cfg.patch_dim()]);
        let out_b = b.add("final.out.b", [1, cfg.patch_dim()]);
        ParamLayout {
            names: b.names,
            shapes: b.shapes,
            patch_w,
            patch_b,
            ref_embed,
            cond_table,
            time_w1,
            time_b1,
            time_w2,
            time_b2,
            blocks,
            final_mod_w,
            final_mod_b,
            out_w,
            out_b,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn check(&self, params: &[Tensor<impl Scalar>]) -> Result<()> {
        if params.len() != self.len() {
            return Err(Error::Load(format!(
                "expected {} parameter tensors, found {}",
                self.len(),
                params.len()
            )));
        }
        for (k, p) in params.iter().enumerate() {
            if p.shape() != self.shapes[k].as_slice() {
                return Err(Error::Load(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    self.names[k],
                    p.shape(),
                    self.shapes[k]
                )));
            }
        }
        Ok(())
    }

    /// Initial values: scaled normal weights, zero biases, and zero
    /// modulation/output projections so every block starts as the identity
    /// and the model starts by predicting zero velocity.
    pub fn init<T: Scalar>(&self, seed: u64) -> Vec<Tensor<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let zero_init = |name: &str| {
            let leaf = name.rsplit('.').next().unwrap_or(name);
            leaf.starts_with('b') || name.contains(".mod.") || name == "final.out.w"
        };
        self.names
            .iter()
            .zip(&self.shapes)
            .map(|(name, shape)| {
                if zero_init(name) {
                    return Tensor::zeros(shape);
                }
                let std = match name.as_str() {
                    "condition.table" | "reference.embed" => 0.5,
                    _ => 1.0 / (shape[0] as f64).sqrt(),
                };
                Tensor::from_fn(shape, |_| T::lit(std * std_normal.sample(&mut rng)))
            })
            .collect()
    }
}
