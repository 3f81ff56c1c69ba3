//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes   "PWSDCKPT"
//! version    u32 LE
//! sections   u32 LE    number of sections
//! section*   tag [u8; 4], payload length u64 LE, payload
//! checksum   32 bytes  SHA-256 of every preceding byte
//! ```
//!
//! Integers are u64 LE, floats f64 LE, strings a u64 byte length followed by
//! UTF-8. Sections appear in this order:
//!
//! * `MCFG` context encoder, gloss encoder (vocab_size, d_model, n_layers,
//!   n_heads, d_ff, max_seq_len each), fusion (poly_m, n_heads, d_model)
//! * `TCFG` batch_size, epochs, learning_rate, beta1, beta2, eps, seed,
//!   clip flag (u8) and clip norm, min_freq
//! * `VOCB` min_freq, word count, words in id order from id 4
//! * `PARM` tensor count, then per tensor: name, rank, dims, data
//! * `ADAM` step, buffer count, then per buffer: length, m, v
//! * `STEP` run seed, training step counter

use std::path::Path;

use sha2::{Digest, Sha256};

use super::vocab::Vocab;
use super::write_atomic;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::model::{ModelConfig, ModelParams};
use crate::optim::AdamState;
use crate::tensor::{ParamSet, Tensor};
use crate::train::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"PWSDCKPT";
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub train: TrainConfig,
    pub vocab: Vocab,
    pub params: ModelParams,
    pub adam: AdamState,
    pub seed: u64,
    pub step: u64,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn floats(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
    fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CheckpointIntegrity(format!(
                "{}: needed {n} bytes at offset {}, {} left",
                self.what,
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
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
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .map_err(|_| Error::CheckpointIntegrity(format!("{}: count {v} too large", self.what)))
    }
    /// A count of items that each occupy at least `unit` bytes.
    fn count(&mut self, unit: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(unit) > self.buf.len() - self.pos {
            return Err(Error::CheckpointIntegrity(format!(
                "{}: count {n} exceeds remaining bytes",
                self.what
            )));
        }
        Ok(n)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| {
            Error::CheckpointIntegrity(format!("{}: float count overflow", self.what))
        })?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn str(&mut self) -> Result<String> {
        let n = self.count(1)?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::CheckpointIntegrity(format!("{}: invalid UTF-8", self.what)))
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::CheckpointIntegrity(format!(
                "{}: {} trailing bytes",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn write_encoder(w: &mut Writer, c: &EncoderConfig) {
    for v in [c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_seq_len] {
        w.usize(v);
    }
}

fn read_encoder(r: &mut Reader<'_>) -> Result<EncoderConfig> {
    Ok(EncoderConfig {
        vocab_size: r.usize()?,
        d_model: r.usize()?,
        n_layers: r.usize()?,
        n_heads: r.usize()?,
        d_ff: r.usize()?,
        max_seq_len: r.usize()?,
    })
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut sections: Vec<(&[u8; 4], Writer)> = Vec::new();

        let mut w = Writer::default();
        write_encoder(&mut w, &self.config.context_encoder);
        write_encoder(&mut w, &self.config.gloss_encoder);
        let f = &self.config.fusion;
        for v in [f.poly_m, f.n_heads, f.d_model] {
            w.usize(v);
        }
        sections.push((b"MCFG", w));

        let mut w = Writer::default();
        let t = &self.train;
        w.usize(t.batch_size);
        w.usize(t.epochs);
        w.floats(&[t.learning_rate, t.beta1, t.beta2, t.eps]);
        w.u64(t.seed);
        w.0.push(u8::from(t.grad_clip.is_some()));
        w.f64(t.grad_clip.unwrap_or(0.0));
        w.usize(t.min_freq);
        sections.push((b"TCFG", w));

        let mut w = Writer::default();
        w.usize(self.vocab.min_freq());
        w.usize(self.vocab.words().len());
        for word in self.vocab.words() {
            w.str(word);
        }
        sections.push((b"VOCB", w));

        let mut w = Writer::default();
        let named = self.params.named_tensors();
        w.usize(named.len());
        for (name, t) in &named {
            w.str(name);
            w.usize(t.shape().len());
            for &d in t.shape() {
                w.usize(d);
            }
            w.floats(t.data());
        }
        sections.push((b"PARM", w));

        let mut w = Writer::default();
        w.u64(self.adam.step);
        w.usize(self.adam.m.len());
        for (m, v) in self.adam.m.iter().zip(&self.adam.v) {
            w.usize(m.len());
            w.floats(m);
            w.floats(v);
        }
        sections.push((b"ADAM", w));

        let mut w = Writer::default();
        w.u64(self.seed);
        w.u64(self.step);
        sections.push((b"STEP", w));

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        for (tag, body) in sections {
            out.extend_from_slice(tag);
            out.extend_from_slice(&(body.0.len() as u64).to_le_bytes());
            out.extend_from_slice(&body.0);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut head = Reader::new(bytes, "header");
        if head.take(MAGIC.len())? != MAGIC {
            return Err(Error::CheckpointIntegrity("not a checkpoint file".into()));
        }
        let version = head.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if bytes.len() < head.pos + 4 + DIGEST_LEN {
            return Err(Error::CheckpointIntegrity("file truncated".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::CheckpointIntegrity("checksum mismatch".into()));
        }

        let mut r = Reader::new(body, "header");
        r.pos = head.pos;
        let n_sections = r.u32()?;
        let mut sections = Vec::with_capacity(n_sections as usize);
        for _ in 0..n_sections {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
            let len = r.usize()?;
            sections.push((tag, r.take(len)?));
        }
        r.finish()?;
        let section = |tag: &[u8; 4], what: &'static str| -> Result<Reader<'_>> {
            sections
                .iter()
                .find(|(t, _)| t == tag)
                .map(|(_, b)| Reader::new(b, what))
                .ok_or_else(|| Error::CheckpointIntegrity(format!("missing {what} section")))
        };

        let mut r = section(b"MCFG", "model config")?;
        let context_encoder = read_encoder(&mut r)?;
        let gloss_encoder = read_encoder(&mut r)?;
        let fusion = FusionConfig {
            poly_m: r.usize()?,
            n_heads: r.usize()?,
            d_model: r.usize()?,
        };
        r.finish()?;
        let config = ModelConfig {
            context_encoder,
            gloss_encoder,
            fusion,
        };
        config
            .validate()
            .map_err(|e| Error::CheckpointIntegrity(format!("stored config invalid: {e}")))?;

        let mut r = section(b"TCFG", "train config")?;
        let batch_size = r.usize()?;
        let epochs = r.usize()?;
        let learning_rate = r.f64()?;
        let beta1 = r.f64()?;
        let beta2 = r.f64()?;
        let eps = r.f64()?;
        let seed = r.u64()?;
        let has_clip = r.u8()? != 0;
        let clip = r.f64()?;
        let min_freq = r.usize()?;
        r.finish()?;
        let train = TrainConfig {
            batch_size,
            epochs,
            learning_rate,
            beta1,
            beta2,
            eps,
            seed,
            grad_clip: has_clip.then_some(clip),
            min_freq,
        };

        let mut r = section(b"VOCB", "vocab")?;
        let vocab_min_freq = r.usize()?;
        let n = r.count(8)?;
        let words = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        let vocab = Vocab::from_tokens(words, vocab_min_freq)
            .map_err(|e| Error::CheckpointIntegrity(e.to_string()))?;

        let mut params = ModelParams::init(&config, 0)
            .map_err(|e| Error::CheckpointIntegrity(e.to_string()))?;
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        let mut r = section(b"PARM", "parameters")?;
        let count = r.count(8)?;
        if count != names.len() {
            return Err(Error::CheckpointIntegrity(format!(
                "{count} tensors stored, config implies {}",
                names.len()
            )));
        }
        for (name, slot) in names.iter().zip(params.tensors_mut()) {
            let stored = r.str()?;
            if &stored != name {
                return Err(Error::CheckpointIntegrity(format!(
                    "expected tensor {name}, found {stored}"
                )));
            }
            let rank = r.count(8)?;
            let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            if shape != slot.shape() {
                return Err(Error::CheckpointIntegrity(format!(
                    "tensor {name}: stored shape {shape:?}, expected {:?}",
                    slot.shape()
                )));
            }
            let data = r.floats(slot.numel())?;
            *slot = Tensor::new(shape, data)?;
        }
        r.finish()?;

        let mut r = section(b"ADAM", "optimizer state")?;
        let adam_step = r.u64()?;
        let buffers = r.count(8)?;
        let tensors = params.tensors();
        if buffers != tensors.len() {
            return Err(Error::CheckpointIntegrity(format!(
                "{buffers} optimizer buffers for {} tensors",
                tensors.len()
            )));
        }
        let mut adam = AdamState::new(&tensors);
        adam.step = adam_step;
        for i in 0..buffers {
            let len = r.count(16)?;
            if len != tensors[i].numel() {
                return Err(Error::CheckpointIntegrity(format!(
                    "optimizer buffer {i} has {len} entries, tensor has {}",
                    tensors[i].numel()
                )));
            }
            adam.m[i] = r.floats(len)?;
            adam.v[i] = r.floats(len)?;
        }
        r.finish()?;

        let mut r = section(b"STEP", "step")?;
        let run_seed = r.u64()?;
        let step = r.u64()?;
        r.finish()?;

        Ok(Self {
            config,
            train,
            vocab,
            params,
            adam,
            seed: run_seed,
            step,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &ckpt.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
