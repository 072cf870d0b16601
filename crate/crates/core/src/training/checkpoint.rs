use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Vocabulary;
use crate::diffcore::{AdamState, Tensor};
use crate::encoders::ModelParams;
use crate::error::{Error, Result};

use super::{TrainConfig, TrainState};

const MAGIC: &[u8; 4] = b"TDNR";
pub const CHECKPOINT_VERSION: u8 = 1;

/// Everything needed to evaluate a model or continue training it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
    pub state: TrainState,
}

struct Entry {
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

fn load_err(msg: impl Into<String>) -> Error {
    Error::Load(msg.into())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Result<[u8; 32]> {
    let mut out = [0u8; 32];
    if s.len() != 64 {
        return Err(load_err("rng seed must be 64 hex digits"));
    }
    for (i, byte) in out.iter_mut().enumerate() {
        *byte =
            u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| load_err("bad rng seed"))?;
    }
    Ok(out)
}

impl Checkpoint {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, t) in self.params.set.iter() {
            out.push((name.to_string(), t));
        }
        for (moment, list) in [
            ("adam.m", &self.state.adam.first),
            ("adam.v", &self.state.adam.second),
        ] {
            for ((name, _), t) in self.params.set.iter().zip(list) {
                out.push((format!("{moment}/{name}"), t));
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = String::from("[config]\n");
        manifest.push_str(&self.config.to_text());
        let rng = &self.state.rng;
        let _ = write!(
            manifest,
            "[state]\nepochs_completed={}\nadam_step={}\nrng_seed={}\nrng_stream={}\nrng_word_pos={}\n",
            self.state.epochs_completed,
            self.state.adam.step,
            hex(&rng.get_seed()),
            rng.get_stream(),
            rng.get_word_pos()
        );
        let words = self.vocab.words();
        let _ = writeln!(manifest, "[vocab]\ncount={}", words.len());
        for w in words {
            manifest.push_str(w);
            manifest.push('\n');
        }
        manifest.push_str("[tensors]\n");
        let mut blob = Vec::new();
        for (name, t) in self.tensors() {
            let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            let len = t.numel() * 4;
            let _ = writeln!(
                manifest,
                "{name}\t{}\t{}\t{len}",
                shape.join("x"),
                blob.len()
            );
            for v in t.values() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }

        let mut out = Vec::with_capacity(13 + manifest.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        out.extend_from_slice(&blob);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 13 || &bytes[..4] != MAGIC {
            return Err(load_err("not a checkpoint file"));
        }
        if bytes[4] != CHECKPOINT_VERSION {
            return Err(load_err(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                bytes[4]
            )));
        }
        let mlen = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes")) as usize;
        let rest = &bytes[13..];
        if mlen > rest.len() {
            return Err(load_err("manifest extends past the end of the file"));
        }
        let manifest =
            std::str::from_utf8(&rest[..mlen]).map_err(|_| load_err("manifest is not UTF-8"))?;
        let blob = &rest[mlen..];

        let mut sections: HashMap<&str, Vec<&str>> = HashMap::new();
        let mut current = None;
        for line in manifest.lines() {
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = Some(name);
                sections.entry(name).or_default();
            } else if let Some(sec) = current {
                sections.entry(sec).or_default().push(line);
            } else if !line.is_empty() {
                return Err(load_err("manifest content before the first section"));
            }
        }
        let section = |name: &str| {
            sections
                .get(name)
                .ok_or_else(|| load_err(format!("manifest lacks a [{name}] section")))
        };

        let config = TrainConfig::from_text(&section("config")?.join("\n"))
            .map_err(|e| load_err(format!("config: {e}")))?;

        let state_kv: HashMap<&str, &str> = section("state")?
            .iter()
            .filter_map(|l| l.split_once('='))
            .collect();
        let field = |k: &str| {
            state_kv
                .get(k)
                .copied()
                .ok_or_else(|| load_err(format!("state lacks {k}")))
        };
        let num = |k: &str| -> Result<u128> {
            field(k)?.parse().map_err(|_| load_err(format!("bad {k}")))
        };
        let epochs_completed = num("epochs_completed")? as usize;
        let adam_step = num("adam_step")? as u64;
        let mut rng = ChaCha8Rng::from_seed(unhex(field("rng_seed")?)?);
        rng.set_stream(num("rng_stream")? as u64);
        rng.set_word_pos(num("rng_word_pos")?);

        let vocab_lines = section("vocab")?;
        let count: usize = vocab_lines
            .first()
            .and_then(|l| l.strip_prefix("count="))
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| load_err("vocab section lacks a count"))?;
        if vocab_lines.len() != count + 1 {
            return Err(load_err(format!(
                "vocab lists {} words but declares {count}",
                vocab_lines.len() - 1
            )));
        }
        let vocab = Vocabulary::from_tokens(vocab_lines[1..].iter().map(|w| w.to_string()));

        let mut entries: HashMap<String, Entry> = HashMap::new();
        let mut spans = Vec::new();
        for line in section("tensors")?.iter().filter(|l| !l.is_empty()) {
            let parts: Vec<&str> = line.split('\t').collect();
            let [name, shape, offset, len] = parts[..] else {
                return Err(load_err(format!("malformed tensor line {line:?}")));
            };
            let shape = shape
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| load_err(format!("bad shape for {name}")))?;
            let offset: usize = offset
                .parse()
                .map_err(|_| load_err(format!("bad offset for {name}")))?;
            let len: usize = len
                .parse()
                .map_err(|_| load_err(format!("bad length for {name}")))?;
            if len != shape.iter().product::<usize>() * 4 {
                return Err(load_err(format!("{name}: length disagrees with shape")));
            }
            spans.push((offset, len));
            if entries
                .insert(name.to_string(), Entry { shape, offset, len })
                .is_some()
            {
                return Err(load_err(format!("tensor {name} listed twice")));
            }
        }
        spans.sort_unstable();
        let mut cursor = 0;
        for (offset, len) in spans {
            if offset != cursor {
                return Err(load_err("tensor spans overlap or leave gaps"));
            }
            cursor += len;
        }
        if cursor != blob.len() {
            return Err(load_err(format!(
                "manifest covers {cursor} bytes but the blob holds {}",
                blob.len()
            )));
        }

        let mut used = 0;
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let e = entries
                .get(name)
                .ok_or_else(|| load_err(format!("missing tensor {name}")))?;
            if e.shape != shape {
                return Err(load_err(format!(
                    "tensor {name} has shape {:?} but the config implies {shape:?}",
                    e.shape
                )));
            }
            used += 1;
            let values = blob[e.offset..e.offset + e.len]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Tensor::new(shape.to_vec(), values)
        };
        let params = ModelParams::build(config.model_dims(vocab.len()), |name, shape, _| {
            take(name, shape)
        })
        .map_err(|e| match e {
            Error::Load(_) => e,
            other => load_err(other.to_string()),
        })?;
        let mut adam = AdamState::new(&params.set);
        adam.step = adam_step;
        for (i, (name, t)) in params.set.iter().enumerate() {
            adam.first[i] = take(&format!("adam.m/{name}"), t.shape())?;
            adam.second[i] = take(&format!("adam.v/{name}"), t.shape())?;
        }
        if used != entries.len() {
            return Err(load_err("manifest lists tensors the model does not use"));
        }
        Ok(Checkpoint {
            config,
            vocab,
            params,
            state: TrainState {
                epochs_completed,
                adam,
                rng,
            },
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
