//! Versioned little-endian binary container.
//!
//! Layout: magic, version, variant tag, gene count, loss options, fitted flag,
//! every tensor as `(name, rows, cols, values)`, then the optional Adam state
//! with moments keyed by tensor index.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::model::{decoder_dims, encoder_dims, LossWeights, Model, ZooOptions};
use super::variant::{Similarity, Variant};
use super::{CLASSIFIER_DIMS, DISCRIMINATOR_HIDDEN, EMBEDDING_ACTIVATION};
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamConfig, AdamState, Matrix, Mlp, ParamId, ParamStore};
use crate::tsv::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CRELABCK";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn values(&mut self, m: &Matrix) {
        for &v in m.iter() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("size overflows usize".into()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint("tensor size overflows".into()))?;
        if n.saturating_mul(8) > self.bytes.len() - self.pos {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Matrix::from_shape_vec((rows, cols), data).expect("length checked"))
    }
}

/// Serialize a model to checkpoint bytes.
pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.str(&model.variant.to_string());
    w.u64(model.n_genes as u64);
    let o = &model.options;
    w.f64(o.weights.recon);
    w.f64(o.weights.sim);
    w.f64(o.weights.ortho);
    w.f64(o.lambda);
    w.u8(u8::from(o.sim_on_private));
    w.u8(u8::from(model.fitted));
    w.u64(model.store.len() as u64);
    for (_, name, t) in model.store.iter() {
        w.str(name);
        w.u64(t.nrows() as u64);
        w.u64(t.ncols() as u64);
        w.values(t);
    }
    match &model.optimizer {
        None => w.u8(0),
        Some(adam) => {
            w.u8(1);
            w.f64(adam.config.learning_rate);
            w.f64(adam.config.beta1);
            w.f64(adam.config.beta2);
            w.f64(adam.config.epsilon);
            w.u64(adam.step_count);
            w.u64(adam.moments.len() as u64);
            for (id, (m, v)) in &adam.moments {
                w.u64(id.index() as u64);
                w.values(m);
                w.values(v);
            }
        }
    }
    w.0
}

fn expect_dims(mlp: &Mlp, name: &str, dims: &[usize]) -> Result<()> {
    if mlp.dims() != dims {
        return Err(Error::Checkpoint(format!(
            "{name} has widths {:?}, expected {dims:?}",
            mlp.dims()
        )));
    }
    Ok(())
}

/// Deserialize checkpoint bytes.
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let variant: Variant = r.str()?.parse()?;
    let n_genes = r.usize()?;
    let options = ZooOptions {
        weights: LossWeights {
            recon: r.f64()?,
            sim: r.f64()?,
            ortho: r.f64()?,
        },
        lambda: r.f64()?,
        sim_on_private: r.u8()? != 0,
    };
    let fitted = r.u8()? != 0;
    let n_tensors = r.usize()?;
    let mut store = ParamStore::new();
    for _ in 0..n_tensors {
        let name = r.str()?;
        let rows = r.usize()?;
        let cols = r.usize()?;
        let t = r.matrix(rows, cols)?;
        if store.find(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
        store.push(name, t);
    }

    let relu = Activation::Relu;
    let shared = Mlp::bind(&store, "shared", 3, relu, EMBEDDING_ACTIVATION)?;
    expect_dims(&shared, "shared", &encoder_dims(n_genes))?;
    let private = if variant.has_private() {
        let c = Mlp::bind(&store, "private_cell_line", 3, relu, EMBEDDING_ACTIVATION)?;
        let p = Mlp::bind(&store, "private_patient", 3, relu, EMBEDDING_ACTIVATION)?;
        expect_dims(&c, "private_cell_line", &encoder_dims(n_genes))?;
        expect_dims(&p, "private_patient", &encoder_dims(n_genes))?;
        Some([c, p])
    } else {
        None
    };
    let decoder = Mlp::bind(&store, "decoder", 3, relu, Activation::Identity)?;
    expect_dims(&decoder, "decoder", &decoder_dims(n_genes))?;
    let discriminator = if variant.similarity() == Similarity::Adv {
        let d = Mlp::bind(&store, "discriminator", 2, relu, Activation::Identity)?;
        expect_dims(
            &d,
            "discriminator",
            &[variant.similarity_width(), DISCRIMINATOR_HIDDEN, 1],
        )?;
        Some(d)
    } else {
        None
    };
    let classifier = Mlp::bind(&store, "classifier", 3, relu, Activation::Sigmoid)?;
    expect_dims(&classifier, "classifier", &CLASSIFIER_DIMS)?;

    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let config = AdamConfig {
                learning_rate: r.f64()?,
                beta1: r.f64()?,
                beta2: r.f64()?,
                epsilon: r.f64()?,
            };
            let step_count = r.u64()?;
            let n = r.usize()?;
            let ids: Vec<ParamId> = store.ids().collect();
            let mut moments = BTreeMap::new();
            for _ in 0..n {
                let idx = r.usize()?;
                let id = *ids
                    .get(idx)
                    .ok_or_else(|| Error::Checkpoint(format!("moment for unknown tensor {idx}")))?;
                let (rows, cols) = store.get(id).dim();
                let m = r.matrix(rows, cols)?;
                let v = r.matrix(rows, cols)?;
                moments.insert(id, (m, v));
            }
            Some(AdamState {
                config,
                step_count,
                moments,
            })
        }
        t => return Err(Error::Checkpoint(format!("bad optimizer tag {t}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Model {
        variant,
        n_genes,
        options,
        store,
        shared,
        private,
        decoder,
        discriminator,
        classifier,
        fitted,
        optimizer,
    })
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(model))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
