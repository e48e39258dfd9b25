//! Command implementations behind the `tla` binary. Each command computes
//! all of its results before writing any file, and every file is written
//! atomically, so a failed command leaves no partial output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{HttpTranslator, OfflineMock, Translator};
use crate::augment::{build_fully_translated, build_pool, build_semi_noisy, Corpus, LanguageSplits, ReconciliationReport};
use crate::checkpoint::{Checkpoint, EncodedDataset, TrainedModel, MAGIC};
use crate::config::{BuiltinCorpus, ExperimentConfig, TranslatorKind};
use crate::error::{Result, TlaError};
use crate::io::{atomic_write, read_file, sha256_hex};
use crate::metrics::{aggregate, confusion, emit_results_table, Averaging, EvalReport, ResultEntry, TableFormat};
use crate::models::train::{mix_seed, EpochRecord, Trainer};
use crate::models::word2vec::{word2vec_features, word2vec_train, Word2VecModel};
use crate::models::{ModelKind, SequenceModel};
use crate::synthetic::{marker_corpus, reference_raw_corpus};
use crate::tensor::{scalar_recurrence, ScalarRecurrence};
use crate::text::{encode_text, load_trac2, split_to_csv, build_vocab, DatasetSplit, Language, Vocabulary};
use crate::wisdomnet::{
    classify_probs, sweep_probabilities, uniform_grid, validate_threshold, wisdomnet_refine, wisdomnet_train,
    Classification, SweepPoint, WisdomNetHead,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.tlc";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACE_FILE: &str = "loss_trace.csv";
pub const NUM_CLASSES: usize = 3;
/// Dataset argument that selects the bundled marker corpus.
pub const BUILTIN_MARKERS: &str = "builtin:markers";

/// Rows per inference chunk.
const PREDICT_CHUNK: usize = 64;
/// Domain separators for seeds derived from the run seed.
const HEAD_STREAM: u64 = 0x4845_4144;
const WORD2VEC_STREAM: u64 = 0x5732_56;
const NOISE_STREAM: u64 = 0x4E4F_4953;

/// One line of the loss trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// `sequence`, `word2vec` or `head`.
    pub stage: String,
    pub epoch: usize,
    pub loss: f64,
    pub classification_loss: Option<f64>,
    pub reconstruction_loss: Option<f64>,
    pub running_accuracy: Option<f64>,
}

impl TraceRow {
    fn scalar(stage: &str, epoch: usize, loss: f64) -> Self {
        TraceRow {
            stage: stage.into(),
            epoch,
            loss,
            classification_loss: None,
            reconstruction_loss: None,
            running_accuracy: None,
        }
    }
}

impl From<&EpochRecord> for TraceRow {
    fn from(r: &EpochRecord) -> Self {
        TraceRow {
            stage: "sequence".into(),
            epoch: r.epoch,
            loss: r.loss,
            classification_loss: Some(r.classification_loss),
            reconstruction_loss: Some(r.reconstruction_loss),
            running_accuracy: Some(r.running_accuracy),
        }
    }
}

/// CSV of the trace with shortest round-trip floats; empty cells for
/// quantities a stage does not have.
pub fn trace_csv(rows: &[TraceRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| TlaError::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| TlaError::Format(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Hash over the ordered `(name, sha256)` list of inputs.
pub fn inputs_hash(inputs: &[InputDigest]) -> String {
    let mut listing = String::new();
    for i in inputs {
        let _ = writeln!(listing, "{}\0{}", i.name, i.sha256);
    }
    sha256_hex(listing.as_bytes())
}

fn digest(name: impl Into<String>, bytes: &[u8]) -> InputDigest {
    InputDigest {
        name: name.into(),
        sha256: sha256_hex(bytes),
        bytes: bytes.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub inputs: Vec<InputDigest>,
    pub input_hash: String,
    pub vocab_hash: String,
    pub vocab_size: usize,
    /// Completed epochs found in the checkpoint a resumed run started from.
    pub resumed_from_epoch: Option<usize>,
    pub trace: Vec<TraceRow>,
    pub train_report: EvalReport,
    pub test_report: Option<EvalReport>,
    pub wall_clock_seconds: f64,
}

struct LoadedData {
    train: DatasetSplit,
    test: Option<DatasetSplit>,
    inputs: Vec<InputDigest>,
}

fn load_data(cfg: &ExperimentConfig) -> Result<LoadedData> {
    let mut snapshot = cfg.clone();
    snapshot.output_dir = PathBuf::new();
    let mut inputs = vec![digest("config", snapshot.to_json()?.as_bytes())];
    let d = &cfg.data;
    let train = match (&d.train, d.builtin) {
        (Some(p), _) => {
            inputs.push(digest("data.train", &read_file(p)?));
            load_trac2(p, d.language)?
        }
        (None, Some(BuiltinCorpus::Markers)) => {
            inputs.push(digest("data.builtin.markers", crate::synthetic::MARKER_CSV.as_bytes()));
            marker_corpus()
        }
        (None, None) => return Err(TlaError::Config("data: one of train or builtin is required".into())),
    };
    let test = match &d.test {
        Some(p) => {
            inputs.push(digest("data.test", &read_file(p)?));
            Some(load_trac2(p, d.language)?)
        }
        None => None,
    };
    if train.is_empty() {
        return Err(TlaError::Validation("training split is empty".into()));
    }
    Ok(LoadedData { train, test, inputs })
}

/// Token ids and label indices of a split, encoded in parallel.
pub fn encode_split(vocab: &Vocabulary, split: &DatasetSplit, max_len: usize) -> Result<(Vec<Vec<usize>>, Vec<usize>)> {
    let ids = split
        .examples
        .par_iter()
        .map(|e| encode_text(vocab, &e.text, max_len))
        .collect::<Result<Vec<_>>>()?;
    Ok((ids, split.labels()))
}

/// Features the head consumes and the class distribution used for
/// rejection, one row per sequence.
pub fn features_and_probs(ck: &Checkpoint, ids: &[Vec<usize>]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let (features, own_probs) = match &ck.model {
        TrainedModel::Sequence(m) => {
            let outs = m.predict(ids, PREDICT_CHUNK)?;
            outs.into_iter().map(|o| (o.features, Some(o.probabilities))).unzip()
        }
        TrainedModel::Word2vec { model, .. } => {
            let f = ids
                .par_iter()
                .map(|t| word2vec_features(model, t))
                .collect::<Result<Vec<_>>>()?;
            let n = f.len();
            (f, vec![None; n])
        }
    };
    let probs = match &ck.head {
        Some(h) => features.par_iter().map(|x| h.probabilities(x)).collect::<Result<Vec<_>>>()?,
        None => own_probs
            .into_iter()
            .map(|p| p.ok_or_else(|| TlaError::Incompatible("word2vec checkpoint has no classifier head".into())))
            .collect::<Result<Vec<_>>>()?,
    };
    Ok((features, probs))
}

/// Threshold classification of every row.
pub fn classify_ids(ck: &Checkpoint, ids: &[Vec<usize>], theta: f64) -> Result<Vec<Classification>> {
    validate_threshold(theta)?;
    let (_, probs) = features_and_probs(ck, ids)?;
    Ok(probs.iter().map(|p| classify_probs(p, theta)).collect())
}

/// Support-weighted report of the checkpoint on encoded rows.
pub fn evaluate_ids(ck: &Checkpoint, ids: &[Vec<usize>], labels: &[usize], theta: f64) -> Result<EvalReport> {
    let preds = classify_ids(ck, ids, theta)?;
    Ok(aggregate(&confusion(&preds, labels, NUM_CLASSES)?, Averaging::Weighted))
}

fn train_head(cfg: &ExperimentConfig, features: &[Vec<f64>], labels: &[usize]) -> Result<(WisdomNetHead, Vec<TraceRow>)> {
    let h = &cfg.head;
    let (mut head, losses) = wisdomnet_train(
        features,
        labels,
        NUM_CLASSES,
        h.epochs,
        h.learning_rate,
        mix_seed(cfg.seed, HEAD_STREAM),
    )?;
    let mut all = losses;
    if h.refine_epochs > 0 {
        all.extend(wisdomnet_refine(&mut head, features, labels, h.refine_epochs, h.learning_rate)?);
    }
    if let Some(i) = all.iter().position(|l| !l.is_finite()) {
        return Err(TlaError::Numeric {
            step: i,
            message: "head loss is not finite".into(),
        });
    }
    head.threshold = cfg.theta;
    let trace = all.iter().enumerate().map(|(i, &l)| TraceRow::scalar("head", i, l)).collect();
    Ok((head, trace))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainOptions {
    /// Continue from `checkpoint.tlc` in the output directory if present.
    pub resume: bool,
    /// Save a resumable checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

fn classifier_model(cfg: &ExperimentConfig, vocab: &Vocabulary) -> Result<SequenceModel> {
    let mut c = cfg.classifier.clone();
    c.vocab_size = vocab.len();
    c.seed = cfg.seed;
    SequenceModel::new(cfg.model, c)
}

fn resume_trainer(cfg: &ExperimentConfig, vocab: &Vocabulary, path: &Path) -> Result<(Trainer, Vec<EpochRecord>)> {
    let ck = Checkpoint::load(path)?;
    if ck.vocab.content_hash() != vocab.content_hash() {
        return Err(TlaError::Incompatible(format!(
            "{} was trained with a different vocabulary",
            path.display()
        )));
    }
    let fresh = classifier_model(cfg, vocab)?;
    let TrainedModel::Sequence(m) = &ck.model else {
        return Err(TlaError::Incompatible(format!("{} holds a word2vec model", path.display())));
    };
    if m.kind != fresh.kind || m.config != fresh.config {
        return Err(TlaError::Incompatible(format!(
            "{} holds a {} with a different classifier configuration",
            path.display(),
            m.kind
        )));
    }
    let history = ck.training.as_ref().map(|t| t.history.clone()).unwrap_or_default();
    let mut trainer = ck.into_trainer()?;
    let mut saved = trainer.config.clone();
    saved.epochs = cfg.optimizer.epochs;
    if saved != cfg.optimizer || trainer.seed != cfg.seed {
        return Err(TlaError::Incompatible(format!(
            "{} was trained with different optimizer settings or seed",
            path.display()
        )));
    }
    trainer.config = cfg.optimizer.clone();
    Ok((trainer, history))
}

/// Trains the configured model, fits the rejecting head, and writes the
/// checkpoint, loss trace and manifest into the output directory.
pub fn cmd_train(cfg: &ExperimentConfig, opts: &TrainOptions) -> Result<RunManifest> {
    let started = Instant::now();
    cfg.validate()?;
    let data = load_data(cfg)?;
    let texts = data.train.texts();
    let vocab = build_vocab(&texts, cfg.data.max_vocab, cfg.data.min_freq)?;
    let max_len = cfg.classifier.max_len;
    let (ids, labels) = encode_split(&vocab, &data.train, max_len)?;
    let out = &cfg.output_dir;
    let ck_path = out.join(CHECKPOINT_FILE);
    let mut trace = Vec::new();
    let mut resumed_from_epoch = None;

    let (model, training, features) = if cfg.model == ModelKind::Word2vecFeatures {
        if opts.resume {
            return Err(TlaError::Config("--resume applies to sequence models only".into()));
        }
        let w = &cfg.word2vec;
        let mut model = Word2VecModel::new(vocab.len(), w.dim, w.negatives, cfg.seed)?;
        let losses = word2vec_train(&mut model, &ids, w, mix_seed(cfg.seed, WORD2VEC_STREAM))?;
        trace.extend(losses.iter().enumerate().map(|(i, &l)| TraceRow::scalar("word2vec", i, l)));
        let features = ids.iter().map(|t| word2vec_features(&model, t)).collect::<Result<Vec<_>>>()?;
        (TrainedModel::Word2vec { model, config: w.clone() }, None, features)
    } else {
        let (mut trainer, mut history) = if opts.resume && ck_path.is_file() {
            let (t, h) = resume_trainer(cfg, &vocab, &ck_path)?;
            resumed_from_epoch = Some(t.epoch);
            (t, h)
        } else {
            (Trainer::new(classifier_model(cfg, &vocab)?, cfg.optimizer.clone(), cfg.seed)?, Vec::new())
        };
        trainer.fit(&ids, &labels, |t, r| {
            history.push(*r);
            if opts.checkpoint_every > 0 && t.epoch % opts.checkpoint_every == 0 {
                Checkpoint::from_trainer(t, vocab.clone(), cfg.data.language, None)
                    .with_history(history.clone())
                    .save(&ck_path)?;
            }
            Ok(())
        })?;
        trace.extend(history.iter().map(TraceRow::from));
        let features = if cfg.head.enabled {
            trainer
                .model
                .predict(&ids, PREDICT_CHUNK)?
                .into_iter()
                .map(|o| o.features)
                .collect()
        } else {
            Vec::new()
        };
        let ck = Checkpoint::from_trainer(&trainer, vocab.clone(), cfg.data.language, None).with_history(history);
        (ck.model, ck.training, features)
    };

    let head = if cfg.head.enabled {
        let (h, rows) = train_head(cfg, &features, &labels)?;
        trace.extend(rows);
        Some(h)
    } else {
        None
    };
    let ck = Checkpoint {
        model,
        vocab: vocab.clone(),
        language: cfg.data.language,
        max_len,
        head,
        training,
    };
    let train_report = evaluate_ids(&ck, &ids, &labels, cfg.theta)?;
    let test_report = match &data.test {
        Some(t) => {
            let (tid, tl) = encode_split(&vocab, t, max_len)?;
            Some(evaluate_ids(&ck, &tid, &tl, cfg.theta)?)
        }
        None => None,
    };
    let ck_bytes = ck.to_container().to_bytes()?;
    let trace_bytes = trace_csv(&trace)?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        input_hash: inputs_hash(&data.inputs),
        inputs: data.inputs,
        vocab_hash: vocab.content_hash(),
        vocab_size: vocab.len(),
        resumed_from_epoch,
        trace,
        train_report,
        test_report,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    let manifest_bytes = serde_json::to_vec_pretty(&manifest)?;
    atomic_write(&ck_path, &ck_bytes)?;
    atomic_write(&out.join(TRACE_FILE), &trace_bytes)?;
    atomic_write(&out.join(MANIFEST_FILE), &manifest_bytes)?;
    Ok(manifest)
}

/// An evaluation input: TRAC-2 CSV, an encoded dataset container, or the
/// bundled marker corpus.
fn load_eval_rows(ck: &Checkpoint, dataset: &Path) -> Result<(Vec<Vec<usize>>, Vec<usize>, String)> {
    if dataset == Path::new(BUILTIN_MARKERS) {
        let (ids, labels) = encode_split(&ck.vocab, &marker_corpus(), ck.max_len)?;
        return Ok((ids, labels, "markers".into()));
    }
    if !dataset.is_file() {
        return Err(TlaError::Config(format!("--dataset: file not found: {}", dataset.display())));
    }
    let bytes = read_file(dataset)?;
    if bytes.starts_with(MAGIC) {
        let enc = EncodedDataset::load(dataset)?;
        enc.check_vocab(&ck.vocab)?;
        return Ok((enc.ids, enc.labels, enc.name));
    }
    let split = load_trac2(dataset, ck.language)?;
    let (ids, labels) = encode_split(&ck.vocab, &split, ck.max_len)?;
    Ok((ids, labels, split.name))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateOptions {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    /// Overrides the threshold stored with the head.
    pub theta: Option<f64>,
    /// Also write the coverage/accuracy sweep over θ ∈ {0, 0.05, …, 1}.
    pub sweep: bool,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub model: ModelKind,
    pub language: Language,
    pub dataset: String,
    pub vocab_hash: String,
    pub theta: f64,
    pub report: EvalReport,
    pub sweep: Option<Vec<SweepPoint>>,
}

pub const SWEEP_POINTS: usize = 21;

fn sweep_csv(points: &[SweepPoint]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p).map_err(|e| TlaError::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| TlaError::Format(e.to_string()))
}

/// Evaluates a checkpoint and writes `report.json`, `results.csv`,
/// `results.txt` and, with `sweep`, `sweep.csv`.
pub fn cmd_evaluate(opts: &EvaluateOptions) -> Result<EvaluationSummary> {
    if !opts.checkpoint.is_file() {
        return Err(TlaError::Config(format!(
            "--checkpoint: file not found: {}",
            opts.checkpoint.display()
        )));
    }
    let ck = Checkpoint::load(&opts.checkpoint)?;
    let theta = opts
        .theta
        .or(ck.head.as_ref().map(|h| h.threshold))
        .unwrap_or(crate::wisdomnet::DEFAULT_THRESHOLD);
    validate_threshold(theta).map_err(|_| TlaError::Config(format!("--theta must lie in [0, 1], got {theta}")))?;
    let (ids, labels, name) = load_eval_rows(&ck, &opts.dataset)?;
    let (_, probs) = features_and_probs(&ck, &ids)?;
    let preds: Vec<Classification> = probs.iter().map(|p| classify_probs(p, theta)).collect();
    let report = aggregate(&confusion(&preds, &labels, NUM_CLASSES)?, Averaging::Weighted);
    let sweep = if opts.sweep {
        Some(sweep_probabilities(&probs, &labels, &uniform_grid(SWEEP_POINTS))?)
    } else {
        None
    };
    let summary = EvaluationSummary {
        model: ck.model.kind(),
        language: ck.language,
        dataset: name,
        vocab_hash: ck.vocab.content_hash(),
        theta,
        report: report.clone(),
        sweep,
    };
    let entries = [ResultEntry {
        model: summary.model.display_name().into(),
        language: ck.language,
        report,
    }];
    let json = serde_json::to_vec_pretty(&summary)?;
    let csv = emit_results_table(&entries, TableFormat::Csv)?;
    let text = emit_results_table(&entries, TableFormat::Text)?;
    let sweep_bytes = summary.sweep.as_deref().map(sweep_csv).transpose()?;
    atomic_write(&opts.out.join("report.json"), &json)?;
    atomic_write(&opts.out.join("results.csv"), csv.as_bytes())?;
    atomic_write(&opts.out.join("results.txt"), text.as_bytes())?;
    if let Some(b) = sweep_bytes {
        atomic_write(&opts.out.join("sweep.csv"), &b)?;
    }
    Ok(summary)
}

/// Encodes a CSV split with a checkpoint's vocabulary into a reusable
/// dataset container tagged with the vocabulary hash.
pub fn cmd_encode(checkpoint: &Path, dataset: &Path, out: &Path) -> Result<EncodedDataset> {
    for (flag, p) in [("--checkpoint", checkpoint), ("--dataset", dataset)] {
        if !p.is_file() {
            return Err(TlaError::Config(format!("{flag}: file not found: {}", p.display())));
        }
    }
    let ck = Checkpoint::load(checkpoint)?;
    let split = load_trac2(dataset, ck.language)?;
    let (ids, labels) = encode_split(&ck.vocab, &split, ck.max_len)?;
    let enc = EncodedDataset {
        name: split.name,
        language: ck.language,
        ids,
        labels,
        vocab_hash: ck.vocab.content_hash(),
    };
    enc.save(out)?;
    Ok(enc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentOutcome {
    pub raw: Corpus,
    pub semi_noisy: Option<Corpus>,
    pub translated: Option<DatasetSplit>,
    pub report: ReconciliationReport,
    pub files: Vec<PathBuf>,
}

fn load_raw(cfg: &ExperimentConfig) -> Result<Corpus> {
    let a = &cfg.augmentation;
    if let Some(seed) = a.fixture_seed {
        return Ok(reference_raw_corpus(seed));
    }
    a.raw
        .iter()
        .map(|(&lang, p)| {
            Ok((
                lang,
                LanguageSplits {
                    train: load_trac2(&p.train, lang)?,
                    test: load_trac2(&p.test, lang)?,
                },
            ))
        })
        .collect()
}

/// Builds the configured augmented corpora and the reconciliation report
/// against the reference counts.
pub fn cmd_augment(cfg: &ExperimentConfig) -> Result<AugmentOutcome> {
    cfg.validate_augmentation()?;
    let a = &cfg.augmentation;
    let raw = load_raw(cfg)?;
    let client: Box<dyn Translator> = match a.translator {
        TranslatorKind::Mock => Box::new(OfflineMock::bundled()),
        TranslatorKind::Http => Box::new(HttpTranslator::new(a.http.clone().with_env())?),
    };
    let semi_noisy = if a.semi_noisy {
        let targets = a.targets();
        let mut noise = a.noise.clone();
        noise.seed = mix_seed(mix_seed(cfg.seed, NOISE_STREAM), noise.seed);
        let pool = build_pool(&raw, &targets, client.as_ref(), &noise)?;
        Some(build_semi_noisy(&raw, &pool, &targets, cfg.seed)?)
    } else {
        None
    };
    let translated = if a.fully_translated {
        let get = |l: Language| {
            raw.get(&l).ok_or_else(|| {
                TlaError::Config(format!("augmentation.fully_translated needs a raw {l} corpus"))
            })
        };
        Some(build_fully_translated(get(Language::Bangla)?, get(Language::Hindi)?, client.as_ref())?)
    } else {
        None
    };
    let report = ReconciliationReport::reconcile(&raw, semi_noisy.as_ref(), translated.as_ref());

    let out = &cfg.output_dir;
    let mut writes: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    if let Some(c) = &semi_noisy {
        for (lang, s) in c {
            writes.push((out.join(format!("semi-noisy/{lang}-train.csv")), split_to_csv(&s.train)?));
            writes.push((out.join(format!("semi-noisy/{lang}-test.csv")), split_to_csv(&s.test)?));
        }
    }
    if let Some(t) = &translated {
        writes.push((out.join("fully-translated/english-train.csv"), split_to_csv(t)?));
    }
    writes.push((out.join("reconciliation.json"), serde_json::to_vec_pretty(&report)?));
    writes.push((out.join("reconciliation.txt"), report.to_text().into_bytes()));
    for (p, b) in &writes {
        atomic_write(p, b)?;
    }
    Ok(AugmentOutcome {
        raw,
        semi_noisy,
        translated,
        report,
        files: writes.into_iter().map(|(p, _)| p).collect(),
    })
}

/// Trajectory table, closed-form value and regime label of `x_{i+1} = W·x_i`.
pub fn demo_recurrence(weight: f64, x0: f64, steps: u32) -> String {
    let r = ScalarRecurrence::new(weight, x0, steps);
    let mut s = String::new();
    let _ = writeln!(s, "i\tx_i");
    for (i, x) in r.trajectory().iter().enumerate() {
        let _ = writeln!(s, "{i}\t{x:e}");
    }
    let _ = writeln!(s, "closed form W^n*x0 = {:e}", scalar_recurrence(&r));
    let _ = writeln!(s, "regime: {}", r.regime());
    s
}
