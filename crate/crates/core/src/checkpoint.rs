//! Single-file, sectioned, versioned model container.
//!
//! Layout: magic `AFC1`, format version, architecture fingerprint, a section
//! table (name, offset, length), then the section payloads. Sections:
//! `meta` (JSON: architecture, temperatures, stats, dtype), `vocab` (the
//! tokenizer config text), `params` (named tensors, little-endian), and an
//! optional `train_state` (Adam moments plus best-model bookkeeping) which
//! makes a checkpoint resumable.
//!
//! Serialization is deterministic, so save -> load -> save is byte-identical.
//! Loading verifies the stored fingerprint against one recomputed from the
//! loaded sections and fails loudly on any mismatch.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::{AlignmentModel, ArchConfig, Temperatures, TrainState};
use crate::error::{Error, Result};
use crate::scalar::{Dtype, Scalar};
use crate::tensor::Tensor;
use crate::text::Vocab;
use crate::vision::ChannelStats;

const MAGIC: &[u8; 4] = b"AFC1";
const VERSION: u32 = 1;

/// FNV-1a 64-bit hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaSection {
    arch: ArchConfig,
    temps: Temperatures,
    stats: ChannelStats,
    dtype: String,
}

/// A model loaded from disk, tagged by its scalar type.
pub enum LoadedModel {
    F32(AlignmentModel<f32>, Option<TrainState<f32>>),
    F64(AlignmentModel<f64>, Option<TrainState<f64>>),
}

impl LoadedModel {
    pub fn dtype(&self) -> Dtype {
        match self {
            LoadedModel::F32(..) => Dtype::F32,
            LoadedModel::F64(..) => Dtype::F64,
        }
    }
}

// --- little-endian primitives ---

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Checkpoint("bad utf-8 string".into()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn encode_tensors<T: Scalar>(tensors: &[(String, Tensor<T>)]) -> Vec<u8> {
    let mut out = Vec::new();
    put_u32(&mut out, tensors.len() as u32);
    for (name, t) in tensors {
        put_str(&mut out, name);
        put_u32(&mut out, t.dims.len() as u32);
        for &d in &t.dims {
            put_u64(&mut out, d as u64);
        }
        put_u64(&mut out, (t.data.len() * T::BYTE_WIDTH) as u64);
        for &v in &t.data {
            v.write_le_bytes(&mut out);
        }
    }
    out
}

fn decode_tensors<T: Scalar>(r: &mut Reader) -> Result<Vec<(String, Tensor<T>)>> {
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.str()?;
        let ndims = r.u32()? as usize;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(r.u64()? as usize);
        }
        let byte_len = r.u64()? as usize;
        let numel: usize = dims.iter().product();
        if byte_len != numel * T::BYTE_WIDTH {
            return Err(Error::Checkpoint(format!(
                "tensor {name:?} has inconsistent length"
            )));
        }
        let raw = r.take(byte_len)?;
        let data: Vec<T> = raw
            .chunks_exact(T::BYTE_WIDTH)
            .map(T::from_le_bytes)
            .collect();
        out.push((name, Tensor::from_vec(&dims, data)));
    }
    Ok(out)
}

fn encode_state<T: Scalar>(state: &TrainState<T>) -> Vec<u8> {
    let mut out = Vec::new();
    put_u64(&mut out, state.epochs_done as u64);
    put_u64(&mut out, state.adam_step);
    put_f64(&mut out, state.best_val);
    put_u64(&mut out, state.best_epoch as u64);
    let unnamed = |ts: &[Tensor<T>]| -> Vec<(String, Tensor<T>)> {
        ts.iter()
            .enumerate()
            .map(|(i, t)| (i.to_string(), t.clone()))
            .collect()
    };
    out.extend(encode_tensors(&unnamed(&state.m)));
    out.extend(encode_tensors(&unnamed(&state.v)));
    out.extend(encode_tensors(&state.best_params));
    out
}

fn decode_state<T: Scalar>(r: &mut Reader) -> Result<TrainState<T>> {
    let epochs_done = r.u64()? as usize;
    let adam_step = r.u64()?;
    let best_val = r.f64()?;
    let best_epoch = r.u64()? as usize;
    let m = decode_tensors::<T>(r)?
        .into_iter()
        .map(|(_, t)| t)
        .collect();
    let v = decode_tensors::<T>(r)?
        .into_iter()
        .map(|(_, t)| t)
        .collect();
    let best_params = decode_tensors::<T>(r)?;
    Ok(TrainState {
        epochs_done,
        adam_step,
        m,
        v,
        best_val,
        best_epoch,
        best_params,
    })
}

/// Write a checkpoint. Pass the training state to make it resumable.
pub fn save_model<T: Scalar>(
    model: &AlignmentModel<T>,
    state: Option<&TrainState<T>>,
    path: &Path,
) -> Result<()> {
    let meta = MetaSection {
        arch: model.arch.clone(),
        temps: model.temps.clone(),
        stats: model.stats.clone(),
        dtype: T::DTYPE.name().to_string(),
    };
    let mut sections: Vec<(&str, Vec<u8>)> = vec![
        (
            "meta",
            serde_json::to_vec(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?,
        ),
        ("vocab", model.vocab.render().into_bytes()),
        ("params", encode_tensors(model.params())),
    ];
    if let Some(s) = state {
        sections.push(("train_state", encode_state(s)));
    }

    let mut header = Vec::new();
    header.extend_from_slice(MAGIC);
    put_u32(&mut header, VERSION);
    put_u64(&mut header, model.fingerprint());
    put_u32(&mut header, sections.len() as u32);

    let table_len: usize = sections
        .iter()
        .map(|(n, _)| 4 + n.len() + 8 + 8)
        .sum::<usize>();
    let mut offset = header.len() + table_len;
    let mut table = Vec::new();
    for (name, payload) in &sections {
        put_str(&mut table, name);
        put_u64(&mut table, offset as u64);
        put_u64(&mut table, payload.len() as u64);
        offset += payload.len();
    }

    let mut file = std::fs::File::create(path)?;
    file.write_all(&header)?;
    file.write_all(&table)?;
    for (_, payload) in &sections {
        file.write_all(payload)?;
    }
    Ok(())
}

fn section<'a>(buf: &'a [u8], table: &[(String, u64, u64)], name: &str) -> Result<&'a [u8]> {
    let (_, off, len) = table
        .iter()
        .find(|(n, _, _)| n == name)
        .ok_or_else(|| Error::Checkpoint(format!("missing section {name:?}")))?;
    let (off, len) = (*off as usize, *len as usize);
    if off + len > buf.len() {
        return Err(Error::Checkpoint(format!("section {name:?} out of bounds")));
    }
    Ok(&buf[off..off + len])
}

fn load_typed<T: Scalar>(
    meta: &MetaSection,
    vocab: Vocab,
    buf: &[u8],
    table: &[(String, u64, u64)],
    stored_fingerprint: u64,
) -> Result<(AlignmentModel<T>, Option<TrainState<T>>)> {
    let params = decode_tensors::<T>(&mut Reader::new(section(buf, table, "params")?))?;
    let model = AlignmentModel::from_parts(
        meta.arch.clone(),
        meta.temps.clone(),
        meta.stats.clone(),
        vocab,
        params,
    )?;
    if model.fingerprint() != stored_fingerprint {
        return Err(Error::Checkpoint(format!(
            "fingerprint mismatch: file says {stored_fingerprint:#018x}, \
             contents hash to {:#018x}",
            model.fingerprint()
        )));
    }
    let state = if table.iter().any(|(n, _, _)| n == "train_state") {
        let mut r = Reader::new(section(buf, table, "train_state")?);
        let s = decode_state::<T>(&mut r)?;
        if !r.done() {
            return Err(Error::Checkpoint("trailing bytes in train_state".into()));
        }
        Some(s)
    } else {
        None
    };
    Ok((model, state))
}

/// Read a checkpoint, dispatching on the stored scalar type.
pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let buf = std::fs::read(path).map_err(|e| Error::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut r = Reader::new(&buf);
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint(
            "not a checkpoint file (bad magic)".into(),
        ));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let stored_fingerprint = r.u64()?;
    let n_sections = r.u32()? as usize;
    let mut table = Vec::with_capacity(n_sections);
    for _ in 0..n_sections {
        let name = r.str()?;
        let off = r.u64()?;
        let len = r.u64()?;
        table.push((name, off, len));
    }

    let meta: MetaSection = serde_json::from_slice(section(&buf, &table, "meta")?)
        .map_err(|e| Error::Checkpoint(format!("bad meta section: {e}")))?;
    let vocab_text = String::from_utf8(section(&buf, &table, "vocab")?.to_vec())
        .map_err(|_| Error::Checkpoint("vocab section is not utf-8".into()))?;
    let vocab = Vocab::parse(&vocab_text)?;

    match Dtype::from_name(&meta.dtype) {
        Some(Dtype::F32) => {
            let (m, s) = load_typed::<f32>(&meta, vocab, &buf, &table, stored_fingerprint)?;
            Ok(LoadedModel::F32(m, s))
        }
        Some(Dtype::F64) => {
            let (m, s) = load_typed::<f64>(&meta, vocab, &buf, &table, stored_fingerprint)?;
            Ok(LoadedModel::F64(m, s))
        }
        None => Err(Error::Checkpoint(format!("unknown dtype {:?}", meta.dtype))),
    }
}

/// FNV-1a checksum of a whole file.
pub fn file_checksum(path: &Path) -> Result<u64> {
    Ok(fnv1a64(&std::fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::TrainConfig;
    use crate::data::{write_synth_dir, SynthSpec};

    fn trained(tag: &str) -> (AlignmentModel<f32>, TrainState<f32>) {
        let base =
            std::env::temp_dir().join(format!("promptloc-ckpt-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&base);
        std::fs::create_dir_all(&base).unwrap();
        let mut spec = SynthSpec::new(8, 1);
        spec.image_size = 32;
        let corpus = write_synth_dir(&spec, &base).unwrap();
        let arch = ArchConfig {
            dim: 8,
            image_side: 32,
            in_channels: 3,
            stage_channels: [4, 6, 6, 8],
            text_layers: 2,
            max_tokens: 24,
            word_agg_mean: false,
        };
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 1,
            learning_rate: 1e-3,
            val_fraction: 0.0,
            ..TrainConfig::default()
        };
        let out =
            crate::align::train::<f32>(&corpus, &[], &arch, &cfg, None, |_, _, _| Ok(())).unwrap();
        (out.final_model, out.state)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let (model, state) = trained("rt");
        let d = std::env::temp_dir().join(format!("promptloc-ckpt-rt-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        let p1 = d.join("a.ckpt");
        let p2 = d.join("b.ckpt");
        save_model(&model, Some(&state), &p1).unwrap();
        match load_model(&p1).unwrap() {
            LoadedModel::F32(m, Some(s)) => {
                assert_eq!(m.param_checksum(), model.param_checksum());
                assert_eq!(s.epochs_done, state.epochs_done);
                assert_eq!(s.adam_step, state.adam_step);
                save_model(&m, Some(&s), &p2).unwrap();
            }
            _ => panic!("expected f32 model with state"),
        }
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn fingerprint_tampering_fails_loudly() {
        let (model, _) = trained("fp");
        let d = std::env::temp_dir().join(format!("promptloc-ckpt-fp-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        let p = d.join("m.ckpt");
        save_model(&model, None, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[8] ^= 0xff; // flip a fingerprint byte
        std::fs::write(&p, &bytes).unwrap();
        match load_model(&p) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("fingerprint")),
            other => panic!("expected checkpoint error, got ok={}", other.is_ok()),
        }
    }

    #[test]
    fn truncated_file_is_checkpoint_error() {
        let (model, _) = trained("tr");
        let d = std::env::temp_dir().join(format!("promptloc-ckpt-tr-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        let p = d.join("m.ckpt");
        save_model(&model, None, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_model(&p).is_err());
    }

    #[test]
    fn f64_models_round_trip_with_dtype_tag() {
        let (model32, _) = trained("64");
        let model64: AlignmentModel<f64> = model32.cast();
        let d = std::env::temp_dir().join(format!("promptloc-ckpt-64-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        let p = d.join("m64.ckpt");
        save_model(&model64, None, &p).unwrap();
        match load_model(&p).unwrap() {
            LoadedModel::F64(m, None) => assert_eq!(m.param_checksum(), model64.param_checksum()),
            _ => panic!("expected f64 model"),
        }
    }
}
