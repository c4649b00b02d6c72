//! Single-file versioned checkpoint: magic, version, a JSON header
//! (config echo, vocabulary, pitch statistics, trainer and RNG state,
//! tensor directory) and a little-endian f64 payload.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::AdamState;
use crate::array_io::write_atomic;
use crate::config::TrainingConfig;
use crate::dataset::{PitchStats, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{TtsModel, Variant};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HIMUVCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub seed: Vec<u8>,
    /// Decimal u128 word position.
    pub word_pos: String,
}

impl RngSnapshot {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().to_vec(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let seed: [u8; 32] = self
            .seed
            .as_slice()
            .try_into()
            .map_err(|_| Error::CorruptCheckpoint("RNG seed must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::CorruptCheckpoint("bad RNG word position".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Everything besides parameters needed to continue training exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub step: usize,
    pub data_order: Vec<usize>,
    pub data_cursor: usize,
    pub data_rng: RngSnapshot,
    pub noise_rng: RngSnapshot,
    pub generator_updates: u64,
    pub discriminator_updates: u64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    variant: String,
    config: TrainingConfig,
    vocab: Vocabulary,
    pitch_stats: PitchStats,
    state: Option<TrainerState>,
    tensors: Vec<TensorEntry>,
}

pub struct Checkpoint {
    pub variant: Variant,
    pub config: TrainingConfig,
    pub vocab: Vocabulary,
    pub pitch_stats: PitchStats,
    pub state: Option<TrainerState>,
    /// name → (shape, values)
    pub params: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
    pub generator_opt: AdamState,
    pub discriminator_opt: AdamState,
}

const PARAM: &str = "param:";
const GEN_M: &str = "adam.gen.m:";
const GEN_V: &str = "adam.gen.v:";
const DISC_M: &str = "adam.disc.m:";
const DISC_V: &str = "adam.disc.v:";

impl Checkpoint {
    /// Parameters only, no trainer state.
    pub fn from_model(model: &TtsModel) -> Result<Self> {
        let mut params = BTreeMap::new();
        for (name, var) in model.params.vars() {
            params.insert(name.clone(), (var.dims().to_vec(), model.params.values(name)?));
        }
        Ok(Self {
            variant: model.variant,
            config: model.config.clone(),
            vocab: model.vocab.clone(),
            pitch_stats: model.pitch_stats.clone(),
            state: None,
            params,
            generator_opt: AdamState::default(),
            discriminator_opt: AdamState::default(),
        })
    }

    /// Rebuilds the model and overwrites every parameter. The parameter set
    /// must match the variant exactly.
    pub fn to_model(&self) -> Result<TtsModel> {
        let model = TtsModel::build(self.variant, &self.config, self.vocab.clone(), self.pitch_stats.clone())?;
        let expected: Vec<&str> = model.params.names().collect();
        let found: Vec<&str> = self.params.keys().map(String::as_str).collect();
        if expected != found {
            return Err(Error::CorruptCheckpoint(format!(
                "parameter set does not match variant {}",
                self.variant
            )));
        }
        for (name, (shape, values)) in &self.params {
            let var = model.params.var(name).expect("name checked above");
            if var.dims() != shape.as_slice() {
                return Err(Error::CorruptCheckpoint(format!("shape of {name} differs")));
            }
            model.params.set_values(name, values)?;
        }
        Ok(model)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut payload: Vec<f64> = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, values: &[f64]| {
            tensors.push(TensorEntry { name, shape });
            payload.extend_from_slice(values);
        };
        for (name, (shape, values)) in &self.params {
            push(format!("{PARAM}{name}"), shape.clone(), values);
        }
        for (prefix, map) in [
            (GEN_M, &self.generator_opt.m),
            (GEN_V, &self.generator_opt.v),
            (DISC_M, &self.discriminator_opt.m),
            (DISC_V, &self.discriminator_opt.v),
        ] {
            for (name, values) in map {
                push(format!("{prefix}{name}"), vec![values.len()], values);
            }
        }
        let mut state = self.state.clone();
        if let Some(s) = state.as_mut() {
            s.generator_updates = self.generator_opt.updates;
            s.discriminator_updates = self.discriminator_opt.updates;
        }
        let header = Header {
            version: CHECKPOINT_VERSION,
            variant: self.variant.name().to_string(),
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            pitch_stats: self.pitch_stats.clone(),
            state,
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(24 + json.len() + 8 * payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: &str| Error::CorruptCheckpoint(msg.to_string());
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("missing checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < header_len {
            return Err(corrupt("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&body[..header_len]).map_err(|e| corrupt(&format!("header: {e}")))?;
        if header.version != version {
            return Err(corrupt("header version disagrees with preamble"));
        }
        let payload = &body[header_len..];
        let total: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if payload.len() != 8 * total {
            return Err(corrupt("payload size does not match tensor directory"));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let mut params = BTreeMap::new();
        let mut generator_opt = AdamState::default();
        let mut discriminator_opt = AdamState::default();
        for entry in header.tensors {
            let count: usize = entry.shape.iter().product();
            let data: Vec<f64> = values.by_ref().take(count).collect();
            let name = entry.name;
            if let Some(n) = name.strip_prefix(PARAM) {
                params.insert(n.to_string(), (entry.shape, data));
            } else if let Some(n) = name.strip_prefix(GEN_M) {
                generator_opt.m.insert(n.to_string(), data);
            } else if let Some(n) = name.strip_prefix(GEN_V) {
                generator_opt.v.insert(n.to_string(), data);
            } else if let Some(n) = name.strip_prefix(DISC_M) {
                discriminator_opt.m.insert(n.to_string(), data);
            } else if let Some(n) = name.strip_prefix(DISC_V) {
                discriminator_opt.v.insert(n.to_string(), data);
            } else {
                return Err(corrupt(&format!("unknown tensor entry {name}")));
            }
        }
        if let Some(s) = &header.state {
            generator_opt.updates = s.generator_updates;
            discriminator_opt.updates = s.discriminator_updates;
        }
        Ok(Self {
            variant: header.variant.parse()?,
            config: header.config,
            vocab: header.vocab,
            pitch_stats: header.pitch_stats,
            state: header.state,
            params,
            generator_opt,
            discriminator_opt,
        })
    }

    /// Atomic write (temporary sibling, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
