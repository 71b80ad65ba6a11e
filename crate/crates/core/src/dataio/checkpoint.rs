//! Versioned binary checkpoint (`.tagc`): model parameters by name plus
//! the sampling/training configuration and the trainer RNG state, so a
//! reloaded model reproduces forward outputs bit-identically.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{ModelConfig, ModelParams};
use crate::sampler::{Modality, RecentSpec, SamplingConfig, SpanningScope, Task};
use crate::tensor::{Element, Tensor};
use crate::trainer::TrainConfig;

use super::{io_err, ByteReader, ByteWriter, DataError};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TAGC";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Everything needed to resume inference exactly where training left off.
#[derive(Debug, Clone)]
pub struct Checkpoint<E: Element> {
    pub modality: Modality,
    pub model: ModelParams<E>,
    pub sampling: SamplingConfig,
    pub train: TrainConfig,
    /// Epochs completed when the snapshot was taken.
    pub epoch: u32,
    pub rng: ChaCha8Rng,
}

pub fn save_checkpoint<E: Element>(ckpt: &Checkpoint<E>, path: &Path) -> Result<(), DataError> {
    let mut w = ByteWriter::new();
    w.bytes(&CHECKPOINT_MAGIC);
    w.u16(CHECKPOINT_VERSION);
    w.u8(E::DTYPE.tag());
    w.u8(ckpt.modality.tag());

    write_model_config(&mut w, &ckpt.model.config);
    write_sampling_config(&mut w, &ckpt.sampling);
    write_train_config(&mut w, &ckpt.train);
    w.u32(ckpt.epoch);

    // ChaCha state: seed, word position, stream.
    w.bytes(&ckpt.rng.get_seed());
    w.u128(ckpt.rng.get_word_pos());
    w.u64(ckpt.rng.get_stream());

    let named = ckpt.model.named_tensors();
    w.u32(named.len() as u32);
    for (name, tensor) in named {
        w.string(&name);
        w.u8(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            w.u32(d as u32);
        }
        for &v in tensor.data() {
            w.f64(v.to_f64());
        }
    }
    fs::write(path, w.into_bytes()).map_err(|e| io_err(path, e))
}

pub fn load_checkpoint<E: Element>(path: &Path) -> Result<Checkpoint<E>, DataError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = ByteReader::new(&bytes, path);
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(DataError::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let dtype = r.u8()?;
    if dtype != E::DTYPE.tag() {
        return Err(DataError::DtypeMismatch {
            path: path.to_path_buf(),
            expected: E::DTYPE.tag(),
            found: dtype,
        });
    }
    let modality_tag = r.u8()?;
    let modality = Modality::from_tag(modality_tag).ok_or(DataError::BadTag {
        path: path.to_path_buf(),
        what: "modality",
        tag: modality_tag,
    })?;

    let model_config = read_model_config(&mut r)?;
    let sampling = read_sampling_config(&mut r)?;
    let train = read_train_config(&mut r)?;
    let epoch = r.u32()?;

    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let word_pos = r.u128()?;
    let stream = r.u64()?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    let count = r.u32()? as usize;
    let mut tensors = std::collections::HashMap::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(E::from_f64(r.f64()?));
        }
        let tensor = Tensor::new(shape.clone(), data).map_err(|_| DataError::TensorShape {
            name: name.clone(),
            expected: shape.clone(),
            found: shape.clone(),
        })?;
        tensors.insert(name, tensor);
    }
    r.finish()?;

    // Rebuild the parameter tree and fill it by name.
    let mut model = ModelParams::<E>::init(model_config, 0)
        .map_err(|e| DataError::InvalidSpec(e.to_string()))?;
    let names: Vec<String> = model
        .named_tensors()
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    for (name, slot) in names.iter().zip(model.tensors_mut()) {
        let loaded = tensors
            .remove(name)
            .ok_or_else(|| DataError::MissingTensor { name: name.clone() })?;
        if loaded.shape() != slot.shape() {
            return Err(DataError::TensorShape {
                name: name.clone(),
                expected: slot.shape().to_vec(),
                found: loaded.shape().to_vec(),
            });
        }
        *slot = loaded;
    }
    if let Some(name) = tensors.into_keys().next() {
        return Err(DataError::UnexpectedTensor { name });
    }

    Ok(Checkpoint {
        modality,
        model,
        sampling,
        train,
        epoch,
        rng,
    })
}

fn write_model_config(w: &mut ByteWriter, cfg: &ModelConfig) {
    w.u32(cfg.input_dim as u32);
    w.u32(cfg.hidden as u32);
    w.u32(cfg.repr as u32);
    w.u32(cfg.classes as u32);
    w.u32(cfg.scale_count as u32);
    w.u32(cfg.recent_scopes as u32);
    w.f64(cfg.dropout);
}

fn read_model_config(r: &mut ByteReader) -> Result<ModelConfig, DataError> {
    Ok(ModelConfig {
        input_dim: r.u32()? as usize,
        hidden: r.u32()? as usize,
        repr: r.u32()? as usize,
        classes: r.u32()? as usize,
        scale_count: r.u32()? as usize,
        recent_scopes: r.u32()? as usize,
        dropout: r.f64()?,
    })
}

fn task_tag(task: Task) -> u8 {
    match task {
        Task::Anticipation => 0,
        Task::Recognition => 1,
        Task::Activity => 2,
    }
}

fn write_sampling_config(w: &mut ByteWriter, cfg: &SamplingConfig) {
    w.u8(task_tag(cfg.task));
    match &cfg.recent {
        RecentSpec::StartOffsets(offsets) => {
            w.u8(0);
            w.u32(offsets.len() as u32);
            for &o in offsets {
                w.f64(o);
            }
        }
        RecentSpec::WindowExpansions(exps) => {
            w.u8(1);
            w.u32(exps.len() as u32);
            for &x in exps {
                w.f64(x);
            }
        }
        RecentSpec::Partitions(n) => {
            w.u8(2);
            w.u32(*n as u32);
        }
    }
    w.u32(cfg.recent_snippets as u32);
    w.u32(cfg.spanning_scales.len() as u32);
    for &k in &cfg.spanning_scales {
        w.u32(k as u32);
    }
    match cfg.spanning_scope {
        SpanningScope::Seconds(s) => {
            w.u8(0);
            w.f64(s);
        }
        SpanningScope::EntireVideo => {
            w.u8(1);
            w.f64(0.0);
        }
    }
    w.f64(cfg.anticipation_gap);
}

fn read_sampling_config(r: &mut ByteReader) -> Result<SamplingConfig, DataError> {
    let path = r.path().to_path_buf();
    let bad_tag = |what: &'static str, tag: u8| DataError::BadTag {
        path: path.clone(),
        what,
        tag,
    };
    let task = match r.u8()? {
        0 => Task::Anticipation,
        1 => Task::Recognition,
        2 => Task::Activity,
        t => return Err(bad_tag("task", t)),
    };
    let recent = match r.u8()? {
        0 => {
            let n = r.u32()? as usize;
            let mut offsets = Vec::with_capacity(n);
            for _ in 0..n {
                offsets.push(r.f64()?);
            }
            RecentSpec::StartOffsets(offsets)
        }
        1 => {
            let n = r.u32()? as usize;
            let mut exps = Vec::with_capacity(n);
            for _ in 0..n {
                exps.push(r.f64()?);
            }
            RecentSpec::WindowExpansions(exps)
        }
        2 => RecentSpec::Partitions(r.u32()? as usize),
        t => return Err(bad_tag("recent spec", t)),
    };
    let recent_snippets = r.u32()? as usize;
    let scale_count = r.u32()? as usize;
    let mut spanning_scales = Vec::with_capacity(scale_count);
    for _ in 0..scale_count {
        spanning_scales.push(r.u32()? as usize);
    }
    let spanning_scope = match r.u8()? {
        0 => SpanningScope::Seconds(r.f64()?),
        1 => {
            let _ = r.f64()?;
            SpanningScope::EntireVideo
        }
        t => return Err(bad_tag("spanning scope", t)),
    };
    let anticipation_gap = r.f64()?;
    Ok(SamplingConfig {
        task,
        recent,
        recent_snippets,
        spanning_scales,
        spanning_scope,
        anticipation_gap,
    })
}

fn write_train_config(w: &mut ByteWriter, cfg: &TrainConfig) {
    w.u32(cfg.batch_size as u32);
    w.f64(cfg.lr0);
    w.f64(cfg.dropout);
    w.u32(cfg.epochs as u32);
    w.u64(cfg.seed);
}

fn read_train_config(r: &mut ByteReader) -> Result<TrainConfig, DataError> {
    Ok(TrainConfig {
        batch_size: r.u32()? as usize,
        lr0: r.f64()?,
        dropout: r.f64()?,
        epochs: r.u32()? as usize,
        seed: r.u64()?,
    })
}
