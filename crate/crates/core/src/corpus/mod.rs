//! Dataset ingestion: SQuAD-format JSON, tokenization, answer alignment,
//! vocabulary and the synthetic corpora used for offline experiments.

pub mod dataset;
pub mod squad;
pub mod synthetic;
pub mod tokenize;
pub mod vocab;

pub use dataset::{
    align_answer, context_id, prepare_dataset, ContextRecord, CorpusConfig, GoldSpan, PrepareStats, QaDataset,
    QuestionRecord, TokenizedContext, TokenizedQuestion,
};
pub use squad::{load_squad_json, parse_squad_json, Answer, Article, LoadOptions, Paragraph, Qa, RawDataset};
pub use tokenize::{char_slice, detokenize, tokenize, Token};
pub use vocab::{build_vocab, Vocab, CLS_ID, PAD_ID, SEP_ID, UNK_ID};
