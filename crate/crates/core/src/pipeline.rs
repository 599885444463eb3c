//! The pipeline stages behind each CLI subcommand. Every stage reads its
//! inputs from the configured paths and overwrites its outputs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::PipelineConfig;
use crate::corpus::{build_vocab, load_squad_json, prepare_dataset, LoadOptions, PrepareStats, QaDataset, RawDataset, Vocab};
use crate::dual::{build_training_set, train_dual_encoder, write_vector_dump, DualEncoder, DualTrainReport, TrainingSetStats};
use crate::error::{Error, Result};
use crate::eval::{EvalReport, RecallReport};
use crate::extractor::{
    candidates_for, dataset_recall, extract_all, read_candidate_dump, train_extractor, write_candidate_dump, Extractor,
    SpanCandidate, TrainReport,
};
use crate::index::{build_index, load_index, save_index, PhraseIndex};
use crate::piqa::{answer_with_index, evaluate_piqa, phrase_vectors, OracleEncoder};
use crate::seed::seed_everything;

/// Creates the parent directory of `path` and returns the path.
fn ensure_parent(path: PathBuf) -> Result<PathBuf> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(path)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let path = ensure_parent(path.to_path_buf())?;
    Ok(BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::io(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn load_raw(path: &Path, cfg: &PipelineConfig) -> Result<RawDataset> {
    load_squad_json(path, LoadOptions { skip_bad_answers: cfg.corpus.skip_bad_answers })
}

fn require_dev(cfg: &PipelineConfig) -> Result<&Path> {
    cfg.paths.dev.as_deref().ok_or_else(|| Error::config("paths.dev", "a dev set is required for this stage"))
}

/// Vocabulary plus the tokenized train and (optional) dev sets.
pub struct Prepared {
    pub vocab: Vocab,
    pub train: QaDataset,
    pub dev: Option<QaDataset>,
}

#[derive(Clone, Debug, Serialize)]
pub struct IngestReport {
    pub vocab_size: usize,
    pub train: PrepareStats,
    pub dev: Option<PrepareStats>,
}

/// Builds the vocabulary over every ingested text and writes it with the
/// tokenized caches.
pub fn ingest(cfg: &PipelineConfig) -> Result<IngestReport> {
    let train_raw = load_raw(&cfg.paths.train, cfg)?;
    let dev_raw = cfg.paths.dev.as_deref().map(|p| load_raw(p, cfg)).transpose()?;
    let mut all = train_raw.clone();
    if let Some(d) = &dev_raw {
        all.data.extend(d.data.iter().cloned());
    }
    let vocab = build_vocab(&all, cfg.corpus.min_freq)?;
    let (train, train_stats) = prepare_dataset(&train_raw, &vocab, &cfg.corpus);
    let paths = &cfg.paths;
    vocab.save(&ensure_parent(paths.vocab())?)?;
    train.save_cache(&ensure_parent(paths.train_cache())?)?;
    let dev_stats = match &dev_raw {
        Some(raw) => {
            let (dev, stats) = prepare_dataset(raw, &vocab, &cfg.corpus);
            dev.save_cache(&paths.dev_cache())?;
            Some(stats)
        }
        None => None,
    };
    let report = IngestReport { vocab_size: vocab.len(), train: train_stats, dev: dev_stats };
    write_json(&paths.ingest_report(), &report)?;
    Ok(report)
}

/// Reloads the vocabulary written by [`ingest`] and re-tokenizes the data.
pub fn prepared(cfg: &PipelineConfig) -> Result<Prepared> {
    let vocab = Vocab::load(&cfg.paths.vocab())?;
    let (train, _) = prepare_dataset(&load_raw(&cfg.paths.train, cfg)?, &vocab, &cfg.corpus);
    let dev = match &cfg.paths.dev {
        Some(p) => Some(prepare_dataset(&load_raw(p, cfg)?, &vocab, &cfg.corpus).0),
        None => None,
    };
    Ok(Prepared { vocab, train, dev })
}

pub fn train_extractor_stage(cfg: &PipelineConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let data = prepared(cfg)?;
    let seeds = seed_everything(cfg.seed);
    let mut ex = Extractor::new(cfg.encoder_for(data.vocab.len()), cfg.beam, &mut seeds.rng("extractor.init", 0))?;
    let report = train_extractor(&mut ex, &data.train, data.dev.as_ref(), &cfg.extractor_train(), &seeds)?;
    ex.save(&ensure_parent(cfg.paths.extractor())?)?;
    write_json(&cfg.paths.extractor_report(), &report)?;
    Ok(report)
}

pub fn load_extractor(cfg: &PipelineConfig, vocab_size: usize) -> Result<Extractor> {
    Extractor::load(cfg.encoder_for(vocab_size), cfg.beam, &cfg.paths.extractor())
}

pub fn load_dual(cfg: &PipelineConfig, vocab_size: usize) -> Result<DualEncoder> {
    DualEncoder::load(cfg.dual_config(vocab_size), &cfg.paths.dual())
}

#[derive(Clone, Debug, Serialize)]
pub struct ExtractionReport {
    pub train: RecallReport,
    pub dev: Option<RecallReport>,
}

fn dump(path: &Path, ds: &QaDataset, cands: &[Vec<SpanCandidate>]) -> Result<()> {
    let mut w = create(path)?;
    write_candidate_dump(&mut w, ds, cands).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_dump(path: &Path, ds: &QaDataset) -> Result<Vec<Vec<SpanCandidate>>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(candidates_for(ds, &read_candidate_dump(BufReader::new(f))?))
}

/// `k_train` candidates per training context and `k_eval` per dev context.
pub fn extract_candidates_stage(cfg: &PipelineConfig) -> Result<ExtractionReport> {
    cfg.validate()?;
    let data = prepared(cfg)?;
    let ex = load_extractor(cfg, data.vocab.len())?;
    let train_c = extract_all(&ex, &data.train, cfg.k_train, cfg.threads)?;
    dump(&cfg.paths.train_candidates(), &data.train, &train_c)?;
    let train = dataset_recall(&data.train, &train_c)?;
    let dev = match &data.dev {
        Some(dev) => {
            let c = extract_all(&ex, dev, cfg.k_eval, cfg.threads)?;
            dump(&cfg.paths.dev_candidates(), dev, &c)?;
            Some(dataset_recall(dev, &c)?)
        }
        None => None,
    };
    Ok(ExtractionReport { train, dev })
}

#[derive(Clone, Debug, Serialize)]
pub struct EncoderStageReport {
    pub training_set: TrainingSetStats,
    pub training: DualTrainReport,
}

pub fn train_encoder_stage(cfg: &PipelineConfig) -> Result<EncoderStageReport> {
    cfg.validate()?;
    let data = prepared(cfg)?;
    let train_c = read_dump(&cfg.paths.train_candidates(), &data.train)?;
    let (set, stats) = build_training_set(&data.train, &train_c, cfg.k_train)?;
    log::info!("dual-encoder training set: {} of {} questions kept", stats.kept, stats.questions);
    let dev_slice = match &data.dev {
        Some(dev) => {
            let slice = if cfg.dual_dev_questions == 0 { dev.clone() } else { dev.take_questions(cfg.dual_dev_questions) };
            let cands = read_dump(&cfg.paths.dev_candidates(), &slice)?;
            Some((slice, cands))
        }
        None => None,
    };
    let seeds = seed_everything(cfg.seed);
    let mut de = DualEncoder::new(cfg.dual_config(data.vocab.len()), &mut seeds.rng("dual.init", 0))?;
    let training = train_dual_encoder(
        &mut de,
        &data.train,
        &set,
        dev_slice.as_ref().map(|(d, c)| (d, c.as_slice())),
        &cfg.dual_train(),
        &seeds,
    )?;
    de.save(&ensure_parent(cfg.paths.dual())?)?;
    let report = EncoderStageReport { training_set: stats, training };
    write_json(&cfg.paths.dual_report(), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct IndexSummary {
    pub entries: usize,
    pub contexts: usize,
    pub dim: usize,
}

/// Encodes the dev candidates and writes the phrase index.
pub fn build_index_stage(cfg: &PipelineConfig) -> Result<IndexSummary> {
    require_dev(cfg)?;
    let data = prepared(cfg)?;
    let dev = data.dev.as_ref().expect("dev checked above");
    let de = load_dual(cfg, data.vocab.len())?;
    let cands = read_dump(&cfg.paths.dev_candidates(), dev)?;
    let vectors = phrase_vectors(dev, &cands, &de, cfg.threads)?;
    if cfg.write_vectors {
        let path = cfg.paths.vectors();
        let mut w = create(&path)?;
        write_vector_dump(&mut w, &vectors).map_err(|e| Error::io(&path, e))?;
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    let index = build_index(&vectors)?;
    save_index(&index, &ensure_parent(cfg.paths.index())?)?;
    Ok(IndexSummary { entries: index.len(), contexts: index.contexts().len(), dim: index.dim() })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryHit {
    pub rank: usize,
    pub score: f64,
    pub ctx_id: String,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// Encodes a free-text question and searches the index.
pub fn query(cfg: &PipelineConfig, question: &str, ctx_id: Option<&str>, top_k: usize) -> Result<Vec<QueryHit>> {
    let vocab = Vocab::load(&cfg.paths.vocab())?;
    let de = load_dual(cfg, vocab.len())?;
    let index: PhraseIndex = load_index(&cfg.paths.index())?;
    let mut tokens = vocab.encode_text(question);
    tokens.truncate(cfg.corpus.max_question_tokens);
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("question has no tokens".into()));
    }
    let g = de.encode_question(&tokens)?;
    let hits = index.search(&g, top_k, ctx_id)?;
    Ok(hits
        .into_iter()
        .map(|h| {
            let e = index.entry(h.entry);
            QueryHit { rank: h.rank, score: h.score, ctx_id: e.ctx_id.into(), start: e.start, end: e.end, text: e.text.into() }
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    pub recall: RecallReport,
    /// EM of an encoder that always picks a correct candidate when one exists.
    pub oracle_em: f64,
}

/// Answers every dev question from the saved index and writes the report.
pub fn evaluate_stage(cfg: &PipelineConfig) -> Result<Evaluation> {
    require_dev(cfg)?;
    let vocab = Vocab::load(&cfg.paths.vocab())?;
    let de = load_dual(cfg, vocab.len())?;
    let index = load_index(&cfg.paths.index())?;
    let data = prepared(cfg)?;
    let dev = data.dev.as_ref().expect("dev checked above");
    let report = answer_with_index(dev, &index, &de, cfg.threads)?;
    let cands = read_dump(&cfg.paths.dev_candidates(), dev)?;
    let recall = dataset_recall(dev, &cands)?;
    let oracle_em = evaluate_piqa(dev, &cands, &OracleEncoder::new(dev), cfg.threads)?.report.exact_match;
    let path = cfg.paths.report();
    let mut w = create(&path)?;
    w.write_all(report.to_json().as_bytes()).and_then(|_| w.write_all(b"\n")).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;
    Ok(Evaluation { report, recall, oracle_em })
}

/// Every stage in order.
pub fn run_all(cfg: &PipelineConfig) -> Result<Evaluation> {
    ingest(cfg)?;
    train_extractor_stage(cfg)?;
    extract_candidates_stage(cfg)?;
    train_encoder_stage(cfg)?;
    build_index_stage(cfg)?;
    evaluate_stage(cfg)
}
