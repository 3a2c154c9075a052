//! Versioned binary checkpoints.
//!
//! Layout: the 8 bytes `MMSDCKPT`, a little-endian `u32` format version, a
//! little-endian `u64` header length, a UTF-8 JSON header, then every tensor
//! as little-endian `f64` in header order. The header holds both configs, the
//! schedule counters, the RNG position, optimizer scalars and a tensor index
//! of `(group, name, shape)`. Groups are `generator`, `discriminator` and the
//! Adam moments `gen_opt.m`, `gen_opt.v`, `disc_opt.m`, `disc_opt.v`.
//! Parameter names are listed in `docs/parameters.md`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use mmsd_autograd::{Adam, ParamStore, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::network::Mmsd;
use crate::trainer::TrainState;

pub const MAGIC: &[u8; 8] = b"MMSDCKPT";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    step: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    group: String,
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    epoch: u32,
    step: u64,
    rng: RngState,
    gen_opt: AdamState,
    disc_opt: AdamState,
    tensors: Vec<TensorEntry>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(out)
}

fn adam_state(a: &Adam) -> AdamState {
    AdamState { lr: a.lr, beta1: a.beta1, beta2: a.beta2, step: a.steps() }
}

pub fn encode(state: &TrainState) -> Vec<u8> {
    let groups: [(&str, &BTreeMap<String, Tensor>); 4] = [
        ("gen_opt.m", state.gen_opt.first_moments()),
        ("gen_opt.v", state.gen_opt.second_moments()),
        ("disc_opt.m", state.disc_opt.first_moments()),
        ("disc_opt.v", state.disc_opt.second_moments()),
    ];
    let mut entries = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut push = |group: &str, name: &str, t: &Tensor| {
        entries.push(TensorEntry { group: group.into(), name: name.into(), shape: t.shape().to_vec() });
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (name, t) in state.model.generator.iter() {
        push("generator", name, t);
    }
    for (name, t) in state.model.discriminator.iter() {
        push("discriminator", name, t);
    }
    for (group, map) in groups {
        for (name, t) in map {
            push(group, name, t);
        }
    }
    let header = Header {
        model: state.model.config.clone(),
        train: state.config.clone(),
        epoch: state.epoch,
        step: state.step,
        rng: RngState {
            seed: hex(&state.rng.get_seed()),
            stream: state.rng.get_stream(),
            word_pos: state.rng.get_word_pos().to_string(),
        },
        gen_opt: adam_state(&state.gen_opt),
        disc_opt: adam_state(&state.disc_opt),
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<TrainState> {
    let bad = |m: &str| Error::format(path, m);
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::VersionMismatch { expected: VERSION, found: version });
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&format!("bad header: {e}")))?;
    let mut payload = &body[hlen..];

    let mut groups: BTreeMap<String, BTreeMap<String, Tensor>> = BTreeMap::new();
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        if payload.len() < n * 8 {
            return Err(bad(&format!("payload truncated in `{}`", e.name)));
        }
        let data = payload[..n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        payload = &payload[n * 8..];
        groups.entry(e.group.clone()).or_default().insert(e.name.clone(), Tensor::new(e.shape.clone(), data));
    }
    if !payload.is_empty() {
        return Err(bad("trailing bytes after payload"));
    }
    let mut take = |g: &str| groups.remove(g).unwrap_or_default();
    let store = |m: BTreeMap<String, Tensor>| {
        let mut s = ParamStore::new();
        for (k, v) in m {
            s.insert(k, v);
        }
        s
    };
    let generator = store(take("generator"));
    let discriminator = store(take("discriminator"));
    let opt = |a: &AdamState, m, v| Adam::restore(a.lr, a.beta1, a.beta2, a.step, m, v);
    let gen_opt = opt(&header.gen_opt, take("gen_opt.m"), take("gen_opt.v"));
    let disc_opt = opt(&header.disc_opt, take("disc_opt.m"), take("disc_opt.v"));
    if let Some(g) = groups.keys().next() {
        return Err(bad(&format!("unknown tensor group `{g}`")));
    }

    let seed = unhex(&header.rng.seed).ok_or_else(|| bad("bad RNG seed"))?;
    let word_pos: u128 = header.rng.word_pos.parse().map_err(|_| bad("bad RNG position"))?;
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::from_seed(seed);
    rng.set_stream(header.rng.stream);
    rng.set_word_pos(word_pos);

    header.model.validate()?;
    let expected = Mmsd::init(header.model.clone(), 0)?;
    for (which, have, want) in
        [("generator", &generator, &expected.generator), ("discriminator", &discriminator, &expected.discriminator)]
    {
        let shapes = |s: &ParamStore| s.iter().map(|(k, v)| (k.clone(), v.shape().to_vec())).collect::<Vec<_>>();
        if shapes(have) != shapes(want) {
            return Err(bad(&format!("{which} parameters do not match the stored model config")));
        }
    }
    Ok(TrainState {
        model: Mmsd { config: header.model, generator, discriminator },
        config: header.train,
        gen_opt,
        disc_opt,
        epoch: header.epoch,
        step: header.step,
        rng,
    })
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    crate::dataset::media::write_file(path, &encode(state))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrong_version_names_both() {
        let state = TrainState::new(TrainConfig::miniature()).unwrap();
        let mut bytes = encode(&state);
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        let err = decode(&bytes, Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::VersionMismatch { expected: 1, found: 7 }));
        assert!(err.to_string().contains("expected 1, found 7"));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let state = TrainState::new(TrainConfig::miniature()).unwrap();
        let bytes = encode(&state);
        assert!(decode(&bytes[..bytes.len() - 3], Path::new("x")).is_err());
        assert!(decode(b"garbage", Path::new("x")).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra, Path::new("x")).is_err());
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let state = TrainState::new(TrainConfig::miniature()).unwrap();
        let bytes = encode(&state);
        let back = decode(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, state);
        assert_eq!(encode(&back), bytes);
    }
}
