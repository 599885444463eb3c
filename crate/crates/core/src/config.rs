//! Pipeline configuration: a flat `key = value` file with dotted keys.
//!
//! ```text
//! # comment
//! seed = 7
//! paths.train = data/toy/train.json
//! beam.s = 50
//! ```
//!
//! Any key can be overridden on the command line as `--beam.s 20`.

use std::path::{Path, PathBuf};

use crate::corpus::CorpusConfig;
use crate::dual::{DualConfig, DualTrainConfig, Pooling};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::extractor::{BeamConfig, ExtractorTrainConfig};
use crate::nn::AdamWConfig;

/// Environment variable consulted when no `--config` is given.
pub const CONFIG_ENV: &str = "EFFQA_CONFIG";

#[derive(Clone, Debug, PartialEq)]
pub struct Paths {
    pub train: PathBuf,
    pub dev: Option<PathBuf>,
    /// Directory for every artifact without an explicit path.
    pub work: PathBuf,
}

impl Paths {
    pub fn vocab(&self) -> PathBuf {
        self.work.join("vocab.txt")
    }
    pub fn train_cache(&self) -> PathBuf {
        self.work.join("train.cache.jsonl")
    }
    pub fn dev_cache(&self) -> PathBuf {
        self.work.join("dev.cache.jsonl")
    }
    pub fn ingest_report(&self) -> PathBuf {
        self.work.join("ingest.json")
    }
    pub fn extractor(&self) -> PathBuf {
        self.work.join("extractor.eqnn")
    }
    pub fn extractor_report(&self) -> PathBuf {
        self.work.join("extractor_report.json")
    }
    pub fn train_candidates(&self) -> PathBuf {
        self.work.join("train.candidates.jsonl")
    }
    pub fn dev_candidates(&self) -> PathBuf {
        self.work.join("dev.candidates.jsonl")
    }
    pub fn dual(&self) -> PathBuf {
        self.work.join("dual.eqnn")
    }
    pub fn dual_report(&self) -> PathBuf {
        self.work.join("dual_report.json")
    }
    pub fn index(&self) -> PathBuf {
        self.work.join("dev.pqix")
    }
    pub fn vectors(&self) -> PathBuf {
        self.work.join("dev.vectors.jsonl")
    }
    pub fn report(&self) -> PathBuf {
        self.work.join("eval_report.json")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; 0 means one per core.
    pub threads: usize,
    pub paths: Paths,
    pub corpus: CorpusConfig,
    /// Shape of both encoders; `vocab_size` is filled in from the vocabulary.
    pub encoder: EncoderConfig,
    pub beam: BeamConfig,
    pub k_train: usize,
    pub k_eval: usize,
    pub extractor: ExtractorTrainConfig,
    pub dual_dim: usize,
    pub dual_pooling: Pooling,
    pub dual: DualTrainConfig,
    /// Dev questions used for dual-encoder model selection (0 = all).
    pub dual_dev_questions: usize,
    pub write_vectors: bool,
    pub query_top_k: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            threads: 0,
            paths: Paths { train: PathBuf::from("train.json"), dev: None, work: PathBuf::from("runs") },
            corpus: CorpusConfig::default(),
            encoder: EncoderConfig::new(0),
            beam: BeamConfig::default(),
            k_train: 60,
            k_eval: 100,
            extractor: ExtractorTrainConfig::default(),
            dual_dim: 64,
            dual_pooling: Pooling::PairAll,
            dual: DualTrainConfig::default(),
            dual_dev_questions: 0,
            write_vectors: false,
            query_top_k: 5,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::config(key, format!("cannot parse {value:?}")))
}

fn set_lr(opt: &mut AdamWConfig, key: &str, field: &str, value: &str) -> Result<bool> {
    match field {
        "lr" => opt.learning_rate = parse(key, value)?,
        "weight_decay" => opt.weight_decay = parse(key, value)?,
        "beta1" => opt.beta1 = parse(key, value)?,
        "beta2" => opt.beta2 = parse(key, value)?,
        "epsilon" => opt.epsilon = parse(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

impl PipelineConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (section, field) = key.split_once('.').unwrap_or(("", key));
        let known = match (section, field) {
            ("", "seed") => {
                self.seed = parse(key, value)?;
                true
            }
            ("", "threads") => {
                self.threads = parse(key, value)?;
                true
            }
            ("paths", "train") => {
                self.paths.train = value.into();
                true
            }
            ("paths", "dev") => {
                self.paths.dev = (!value.is_empty()).then(|| value.into());
                true
            }
            ("paths", "work") => {
                self.paths.work = value.into();
                true
            }
            ("corpus", "min_freq") => {
                self.corpus.min_freq = parse(key, value)?;
                true
            }
            ("corpus", "max_context_tokens") => {
                self.corpus.max_context_tokens = parse(key, value)?;
                true
            }
            ("corpus", "max_question_tokens") => {
                self.corpus.max_question_tokens = parse(key, value)?;
                true
            }
            ("corpus", "skip_bad_answers") => {
                self.corpus.skip_bad_answers = parse(key, value)?;
                true
            }
            ("encoder", "d_model") => {
                self.encoder.d_model = parse(key, value)?;
                true
            }
            ("encoder", "n_layers") => {
                self.encoder.n_layers = parse(key, value)?;
                true
            }
            ("encoder", "n_heads") => {
                self.encoder.n_heads = parse(key, value)?;
                true
            }
            ("encoder", "d_ff") => {
                self.encoder.d_ff = parse(key, value)?;
                true
            }
            ("encoder", "max_positions") => {
                self.encoder.max_positions = parse(key, value)?;
                true
            }
            ("encoder", "dropout") => {
                self.encoder.dropout_rate = parse(key, value)?;
                true
            }
            ("beam", "s") => {
                self.beam.s = parse(key, value)?;
                true
            }
            ("beam", "e") => {
                self.beam.e = parse(key, value)?;
                true
            }
            ("beam", "max_answer_tokens") => {
                self.beam.max_answer_tokens = parse(key, value)?;
                true
            }
            ("beam", "k_train") => {
                self.k_train = parse(key, value)?;
                true
            }
            ("beam", "k_eval") => {
                self.k_eval = parse(key, value)?;
                true
            }
            ("extractor", "epochs") => {
                self.extractor.epochs = parse(key, value)?;
                true
            }
            ("extractor", "batch_size") => {
                self.extractor.batch_size = parse(key, value)?;
                true
            }
            ("extractor", "warmup") => {
                self.extractor.warmup_fraction = parse(key, value)?;
                true
            }
            ("extractor", "train_classic_head") => {
                self.extractor.train_classic_head = parse(key, value)?;
                true
            }
            ("extractor", f) => set_lr(&mut self.extractor.optimizer, key, f, value)?,
            ("dual", "dim") => {
                self.dual_dim = parse(key, value)?;
                true
            }
            ("dual", "pool") => {
                self.dual_pooling = value.parse()?;
                true
            }
            ("dual", "epochs") => {
                self.dual.epochs = parse(key, value)?;
                true
            }
            ("dual", "micro_batch") => {
                self.dual.micro_batch = parse(key, value)?;
                true
            }
            ("dual", "accumulation") => {
                self.dual.accumulation = parse(key, value)?;
                true
            }
            ("dual", "warmup") => {
                self.dual.warmup_fraction = parse(key, value)?;
                true
            }
            ("dual", "dev_questions") => {
                self.dual_dev_questions = parse(key, value)?;
                true
            }
            ("dual", f) => set_lr(&mut self.dual.optimizer, key, f, value)?,
            ("index", "write_vectors") => {
                self.write_vectors = parse(key, value)?;
                true
            }
            ("query", "top_k") => {
                self.query_top_k = parse(key, value)?;
                true
            }
            _ => false,
        };
        if known {
            Ok(())
        } else {
            Err(Error::config(key, "unknown configuration key"))
        }
    }

    /// Parses the text of a config file on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", n + 1), "expected `key = value`"))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    pub fn apply_overrides<'a>(&mut self, overrides: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        for (k, v) in overrides {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.beam.validate()?;
        let cap = self.beam.capacity();
        if self.k_train > cap {
            return Err(Error::config("beam.k_train", format!("{} exceeds s*e = {cap}", self.k_train)));
        }
        if self.k_eval > cap {
            return Err(Error::config("beam.k_eval", format!("{} exceeds s*e = {cap}", self.k_eval)));
        }
        if self.encoder.n_heads == 0 || self.encoder.d_model % self.encoder.n_heads != 0 {
            return Err(Error::config("encoder.n_heads", "must divide encoder.d_model"));
        }
        if self.corpus.max_context_tokens + 2 > self.encoder.max_positions {
            return Err(Error::config("corpus.max_context_tokens", "must leave room for [CLS] and [SEP]"));
        }
        self.extractor.optimizer.validate()?;
        self.dual.optimizer.validate()?;
        Ok(())
    }

    /// Encoder shape for a vocabulary of `vocab_size` tokens.
    pub fn encoder_for(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig { vocab_size, ..self.encoder.clone() }
    }

    pub fn dual_config(&self, vocab_size: usize) -> DualConfig {
        DualConfig { dim: self.dual_dim, pooling: self.dual_pooling, ..DualConfig::new(self.encoder_for(vocab_size)) }
    }

    pub fn extractor_train(&self) -> ExtractorTrainConfig {
        ExtractorTrainConfig { threads: self.threads, dev_k: self.k_eval, ..self.extractor.clone() }
    }

    pub fn dual_train(&self) -> DualTrainConfig {
        DualTrainConfig { threads: self.threads, ..self.dual.clone() }
    }
}
