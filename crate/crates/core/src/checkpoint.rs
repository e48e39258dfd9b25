//! Binary artifact container shared by model checkpoints and encoded
//! dataset caches.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "TLANETCK"
//! version      u32
//! kind         u32 length + UTF-8
//! metadata     u64 length + JSON
//! vocab hash   u32 length + ASCII hex (SHA-256 of the vocabulary tokens)
//! vocabulary   u64 length + JSON (length 0 when absent)
//! tensors      u32 count, then per tensor:
//!                u32 name length + UTF-8 name
//!                u32 rank, rank × u64 dims
//!                product(dims) × f64 values
//! checksum     32 bytes SHA-256 of everything above
//! ```
//!
//! Nothing time-dependent is stored, so saving the same state twice yields
//! identical bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, TlaError};
use crate::io::{atomic_write, read_file};
use crate::models::train::{EpochRecord, TrainConfig, Trainer};
use crate::models::word2vec::{Word2VecConfig, Word2VecModel};
use crate::models::{ClassifierConfig, ModelKind, SequenceModel};
use crate::optim::AdamState;
use crate::tensor::{ParamSet, Tensor};
use crate::text::{Language, Vocabulary};
use crate::wisdomnet::WisdomNetHead;

pub const MAGIC: &[u8; 8] = b"TLANETCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub vocab_hash: String,
    pub vocab: Option<Vocabulary>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| TlaError::Format(format!("container has no tensor '{name}'")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        put_str32(&mut b, &self.kind)?;
        put_bytes64(&mut b, &serde_json::to_vec(&self.meta)?);
        put_str32(&mut b, &self.vocab_hash)?;
        match &self.vocab {
            Some(v) => put_bytes64(&mut b, &serde_json::to_vec(v)?),
            None => put_bytes64(&mut b, &[]),
        }
        b.extend_from_slice(&u32_len(self.tensors.len())?.to_le_bytes());
        for (name, t) in &self.tensors {
            put_str32(&mut b, name)?;
            b.extend_from_slice(&u32_len(t.rank())?.to_le_bytes());
            for &d in t.shape() {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.values() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&b);
        b.extend_from_slice(&digest);
        Ok(b)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
            return Err(TlaError::Format("not a TLA container (bad magic)".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(TlaError::Incompatible(format!(
                "container version {version} is not supported (expected {VERSION})"
            )));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(TlaError::Format("container checksum mismatch".into()));
        }
        let kind = r.string32()?;
        let meta: serde_json::Value = serde_json::from_slice(r.bytes64()?)?;
        let vocab_hash = r.string32()?;
        let vocab_bytes = r.bytes64()?;
        let vocab = if vocab_bytes.is_empty() {
            None
        } else {
            Some(serde_json::from_slice::<Vocabulary>(vocab_bytes)?)
        };
        if let Some(v) = &vocab {
            if v.content_hash() != vocab_hash {
                return Err(TlaError::Incompatible(
                    "stored vocabulary does not match its recorded hash".into(),
                ));
            }
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string32()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| TlaError::Format("tensor too large".into()))?)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Tensor::new(shape, values)?));
        }
        if r.pos != body.len() {
            return Err(TlaError::Format("trailing bytes after the tensor section".into()));
        }
        Ok(Container {
            kind,
            meta,
            vocab_hash,
            vocab,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Container::from_bytes(&read_file(path)?)
    }
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| TlaError::Format(format!("length {n} exceeds the container limit")))
}

fn put_str32(b: &mut Vec<u8>, s: &str) -> Result<()> {
    b.extend_from_slice(&u32_len(s.len())?.to_le_bytes());
    b.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_bytes64(b: &mut Vec<u8>, data: &[u8]) {
    b.extend_from_slice(&(data.len() as u64).to_le_bytes());
    b.extend_from_slice(data);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| TlaError::Format("container is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string32(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| TlaError::Format("invalid UTF-8 string".into()))
    }

    fn bytes64(&mut self) -> Result<&'a [u8]> {
        let n = usize::try_from(self.u64()?).map_err(|_| TlaError::Format("section too large".into()))?;
        self.take(n)
    }
}

/// A trained network of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Sequence(SequenceModel),
    Word2vec {
        model: Word2VecModel,
        config: Word2VecConfig,
    },
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Sequence(m) => m.kind,
            TrainedModel::Word2vec { .. } => ModelKind::Word2vecFeatures,
        }
    }
}

/// Optimizer progress needed to resume a sequence-model run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub config: TrainConfig,
    pub seed: u64,
    pub epoch: usize,
    pub step: usize,
    pub adam: AdamState,
    /// Records of the completed epochs, so a resumed run keeps its full trace.
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: TrainedModel,
    pub vocab: Vocabulary,
    pub language: Language,
    pub max_len: usize,
    pub head: Option<WisdomNetHead>,
    pub training: Option<TrainingState>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    model_kind: ModelKind,
    language: Language,
    max_len: usize,
    classifier: Option<ClassifierConfig>,
    word2vec: Option<Word2VecMeta>,
    head: Option<HeadMeta>,
    training: Option<TrainingMeta>,
}

#[derive(Serialize, Deserialize)]
struct Word2VecMeta {
    config: Word2VecConfig,
    vocab_size: usize,
    dim: usize,
    negatives: usize,
}

#[derive(Serialize, Deserialize)]
struct HeadMeta {
    num_classes: usize,
    feature_dim: usize,
    threshold: f64,
}

#[derive(Serialize, Deserialize)]
struct TrainingMeta {
    config: TrainConfig,
    seed: u64,
    epoch: usize,
    step: usize,
    adam_t: u64,
    history: Vec<EpochRecord>,
}

const MODEL_KIND: &str = "model";
const DATASET_KIND: &str = "dataset";

fn vector(values: &[f64]) -> Tensor {
    Tensor::vector(values.to_vec())
}

impl Checkpoint {
    /// Captures the trainer state; gradient buffers are not persisted.
    pub fn from_trainer(trainer: &Trainer, vocab: Vocabulary, language: Language, head: Option<WisdomNetHead>) -> Self {
        let mut model = trainer.model.clone();
        model.params.zero_grad();
        Checkpoint {
            max_len: model.config.max_len,
            model: TrainedModel::Sequence(model),
            vocab,
            language,
            head,
            training: Some(TrainingState {
                config: trainer.config.clone(),
                seed: trainer.seed,
                epoch: trainer.epoch,
                step: trainer.step,
                adam: trainer.adam.clone(),
                history: Vec::new(),
            }),
        }
    }

    /// Attaches the epoch records completed so far.
    pub fn with_history(mut self, history: Vec<EpochRecord>) -> Self {
        if let Some(t) = &mut self.training {
            t.history = history;
        }
        self
    }

    /// Rebuilds a trainer that continues where this checkpoint stopped.
    pub fn into_trainer(self) -> Result<Trainer> {
        let TrainedModel::Sequence(model) = self.model else {
            return Err(TlaError::Incompatible("word2vec checkpoints cannot resume sequence training".into()));
        };
        let st = self
            .training
            .ok_or_else(|| TlaError::Incompatible("checkpoint carries no optimizer state".into()))?;
        Ok(Trainer {
            model,
            adam: st.adam,
            config: st.config,
            seed: st.seed,
            epoch: st.epoch,
            step: st.step,
        })
    }

    pub fn to_container(&self) -> Container {
        let mut tensors = Vec::new();
        let (classifier, word2vec) = match &self.model {
            TrainedModel::Sequence(m) => {
                for (name, t) in m.params.names().iter().zip(m.params.tensors()) {
                    tensors.push((format!("param:{name}"), Tensor::new(t.shape().to_vec(), t.values().to_vec()).expect("valid")));
                }
                (Some(m.config.clone()), None)
            }
            TrainedModel::Word2vec { model, config } => {
                let (v, d) = (model.vocab_size, model.dim);
                tensors.push(("w2v:input".into(), Tensor::new(vec![v, d], model.input.clone()).expect("valid")));
                tensors.push(("w2v:output".into(), Tensor::new(vec![v, d], model.output.clone()).expect("valid")));
                tensors.push(("w2v:unigram".into(), vector(&model.unigram)));
                (
                    None,
                    Some(Word2VecMeta {
                        config: config.clone(),
                        vocab_size: v,
                        dim: d,
                        negatives: model.negatives,
                    }),
                )
            }
        };
        let head = self.head.as_ref().map(|h| {
            tensors.push((
                "head:weights".into(),
                Tensor::new(vec![h.num_classes, h.feature_dim], h.weights.clone()).expect("valid"),
            ));
            tensors.push(("head:bias".into(), vector(&h.bias)));
            HeadMeta {
                num_classes: h.num_classes,
                feature_dim: h.feature_dim,
                threshold: h.threshold,
            }
        });
        let training = self.training.as_ref().map(|st| {
            if let TrainedModel::Sequence(m) = &self.model {
                for ((name, mv), vv) in m.params.names().iter().zip(&st.adam.m).zip(&st.adam.v) {
                    tensors.push((format!("adam.m:{name}"), vector(mv)));
                    tensors.push((format!("adam.v:{name}"), vector(vv)));
                }
            }
            TrainingMeta {
                config: st.config.clone(),
                seed: st.seed,
                epoch: st.epoch,
                step: st.step,
                adam_t: st.adam.t,
                history: st.history.clone(),
            }
        });
        let meta = CheckpointMeta {
            model_kind: self.model.kind(),
            language: self.language,
            max_len: self.max_len,
            classifier,
            word2vec,
            head,
            training,
        };
        Container {
            kind: MODEL_KIND.into(),
            meta: serde_json::to_value(meta).expect("metadata serializes"),
            vocab_hash: self.vocab.content_hash(),
            vocab: Some(self.vocab.clone()),
            tensors,
        }
    }

    pub fn from_container(c: Container) -> Result<Self> {
        if c.kind != MODEL_KIND {
            return Err(TlaError::Incompatible(format!("expected a model checkpoint, found a '{}' container", c.kind)));
        }
        let meta: CheckpointMeta = serde_json::from_value(c.meta.clone())?;
        let vocab = c
            .vocab
            .clone()
            .ok_or_else(|| TlaError::Format("checkpoint has no vocabulary".into()))?;
        let model = match (meta.model_kind, meta.classifier, meta.word2vec) {
            (ModelKind::Word2vecFeatures, _, Some(w)) => {
                let input = c.tensor("w2v:input")?;
                let output = c.tensor("w2v:output")?;
                if input.shape() != [w.vocab_size, w.dim] || output.shape() != [w.vocab_size, w.dim] {
                    return Err(TlaError::Incompatible("word2vec matrices do not match their metadata".into()));
                }
                TrainedModel::Word2vec {
                    model: Word2VecModel {
                        input: input.values().to_vec(),
                        output: output.values().to_vec(),
                        vocab_size: w.vocab_size,
                        dim: w.dim,
                        negatives: w.negatives,
                        unigram: c.tensor("w2v:unigram")?.values().to_vec(),
                    },
                    config: w.config,
                }
            }
            (kind, Some(cfg), None) if kind != ModelKind::Word2vecFeatures => {
                let mut m = SequenceModel::new(kind, cfg)?;
                let mut stored = ParamSet::new();
                for name in m.params.names() {
                    stored.add(name.clone(), c.tensor(&format!("param:{name}"))?.clone());
                }
                m.params.load_values_from(&stored)?;
                TrainedModel::Sequence(m)
            }
            _ => return Err(TlaError::Format("checkpoint metadata is inconsistent".into())),
        };
        if let TrainedModel::Sequence(m) = &model {
            if m.config.vocab_size != vocab.len() {
                return Err(TlaError::Incompatible(format!(
                    "model expects {} tokens but the vocabulary has {}",
                    m.config.vocab_size,
                    vocab.len()
                )));
            }
        }
        let head = match meta.head {
            Some(h) => {
                let w = c.tensor("head:weights")?;
                if w.shape() != [h.num_classes, h.feature_dim] {
                    return Err(TlaError::Incompatible("rejection head shape does not match its metadata".into()));
                }
                Some(WisdomNetHead {
                    weights: w.values().to_vec(),
                    bias: c.tensor("head:bias")?.values().to_vec(),
                    num_classes: h.num_classes,
                    feature_dim: h.feature_dim,
                    threshold: h.threshold,
                })
            }
            None => None,
        };
        let training = match (meta.training, &model) {
            (Some(t), TrainedModel::Sequence(m)) => {
                let mut adam = AdamState::new(&m.params, t.config.adam());
                for (i, name) in m.params.names().iter().enumerate() {
                    adam.m[i] = c.tensor(&format!("adam.m:{name}"))?.values().to_vec();
                    adam.v[i] = c.tensor(&format!("adam.v:{name}"))?.values().to_vec();
                }
                adam.t = t.adam_t;
                Some(TrainingState {
                    config: t.config,
                    seed: t.seed,
                    epoch: t.epoch,
                    step: t.step,
                    adam,
                    history: t.history,
                })
            }
            _ => None,
        };
        Ok(Checkpoint {
            model,
            vocab,
            language: meta.language,
            max_len: meta.max_len,
            head,
            training,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_container(Container::load(path)?)
    }
}

/// Token ids and labels of one split, encoded against a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub name: String,
    pub language: Language,
    pub ids: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
    pub vocab_hash: String,
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    name: String,
    language: Language,
}

impl EncodedDataset {
    pub fn to_container(&self) -> Result<Container> {
        let rows = self.ids.len();
        let len = self.ids.first().map_or(0, Vec::len);
        if self.ids.iter().any(|r| r.len() != len) {
            return Err(TlaError::dim("encoded rows must share one padded length"));
        }
        let flat = self.ids.iter().flatten().map(|&i| i as f64).collect();
        Ok(Container {
            kind: DATASET_KIND.into(),
            meta: serde_json::to_value(DatasetMeta {
                name: self.name.clone(),
                language: self.language,
            })?,
            vocab_hash: self.vocab_hash.clone(),
            vocab: None,
            tensors: vec![
                ("ids".into(), Tensor::new(vec![rows, len], flat)?),
                ("labels".into(), Tensor::vector(self.labels.iter().map(|&l| l as f64).collect())),
            ],
        })
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != DATASET_KIND {
            return Err(TlaError::Incompatible(format!("expected a dataset cache, found a '{}' container", c.kind)));
        }
        let meta: DatasetMeta = serde_json::from_value(c.meta.clone())?;
        let ids = c.tensor("ids")?;
        let (rows, len) = (ids.shape()[0], ids.shape().get(1).copied().unwrap_or(0));
        let to_id = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(TlaError::Format(format!("invalid token id {v} in dataset cache")))
            }
        };
        let ids = (0..rows)
            .map(|r| ids.values()[r * len..(r + 1) * len].iter().map(|&v| to_id(v)).collect())
            .collect::<Result<Vec<_>>>()?;
        let labels = c
            .tensor("labels")?
            .values()
            .iter()
            .map(|&v| to_id(v))
            .collect::<Result<Vec<_>>>()?;
        Ok(EncodedDataset {
            name: meta.name,
            language: meta.language,
            ids,
            labels,
            vocab_hash: c.vocab_hash.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        EncodedDataset::from_container(&Container::load(path)?)
    }

    /// Fails with [`TlaError::Incompatible`] unless encoded with `vocab`.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        let expected = vocab.content_hash();
        if self.vocab_hash != expected {
            return Err(TlaError::Incompatible(format!(
                "dataset was encoded with vocabulary {} but the checkpoint uses {}",
                short(&self.vocab_hash),
                short(&expected)
            )));
        }
        Ok(())
    }
}

fn short(h: &str) -> &str {
    &h[..h.len().min(12)]
}
