//! Binary checkpoint, all integers and floats little-endian:
//!
//! ```text
//! b"LDIT1"
//! u64 n, n bytes      experiment config as compact JSON
//! u64                 training step
//! u64 k               parameter tensor count
//! k × tensor          parameters in declaration order
//! u64                 optimizer step
//! k × tensor          first moments
//! k × tensor          second moments
//!
//! tensor := u64 rank, rank × u64 dims, prod(dims) × f64
//! ```

use std::path::Path;

use super::ExperimentConfig;
use crate::dit::ParamLayout;
use crate::error::{Error, Result};
use crate::numerics::{AdamWState, Tensor};

pub const MAGIC: &[u8; 5] = b"LDIT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub step: u64,
    pub params: Vec<Tensor<f64>>,
    pub optimizer: AdamWState<f64>,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor<f64>) {
    put_u64(out, t.shape().len() as u64);
    for &d in t.shape() {
        put_u64(out, d as u64);
    }
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Load(format!("checkpoint truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("eight bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| Error::Load(format!("implausible {what} {v}")))
    }

    fn tensor(&mut self, what: &str) -> Result<Tensor<f64>> {
        let rank = self.len(what)?;
        if rank > 8 {
            return Err(Error::Load(format!("{what} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.len(what)?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n.saturating_mul(8) <= self.bytes.len())
            .ok_or_else(|| Error::Load(format!("{what} shape {shape:?} is implausible")))?;
        let raw = self.take(n * 8, what)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();
        Tensor::new(shape, data).map_err(|e| Error::Load(e.to_string()))
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        put_u64(&mut out, cfg.len() as u64);
        out.extend_from_slice(&cfg);
        put_u64(&mut out, self.step);
        put_u64(&mut out, self.params.len() as u64);
        for p in &self.params {
            put_tensor(&mut out, p);
        }
        put_u64(&mut out, self.optimizer.step);
        for t in self.optimizer.m.iter().chain(&self.optimizer.v) {
            put_tensor(&mut out, t);
        }
        out
    }

    /// Parses and checks every tensor against the layout the stored config
    /// implies.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(Error::Load("not an LDIT1 checkpoint".into()));
        }
        let n = r.len("config length")?;
        let config: ExperimentConfig =
            serde_json::from_slice(r.take(n, "config")?).map_err(|e| Error::Load(format!("checkpoint config: {e}")))?;
        let step = r.u64("step")?;
        let k = r.len("tensor count")?;
        let params = (0..k).map(|_| r.tensor("parameter")).collect::<Result<Vec<_>>>()?;
        let opt_step = r.u64("optimizer step")?;
        let m = (0..k).map(|_| r.tensor("first moment")).collect::<Result<Vec<_>>>()?;
        let v = (0..k).map(|_| r.tensor("second moment")).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Load(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        config
            .validate()
            .map_err(|e| Error::Load(format!("checkpoint config: {e}")))?;
        let layout = ParamLayout::new(&config.resolved().model);
        layout.check(&params)?;
        layout.check(&m)?;
        layout.check(&v)?;
        Ok(Checkpoint {
            config,
            step,
            params,
            optimizer: AdamWState { step: opt_step, m, v },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
