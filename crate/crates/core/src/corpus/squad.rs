//! SQuAD v1.1 JSON (also FQuAD, which shares the schema).

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::tokenize::char_slice;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub answer_start: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qa {
    pub id: String,
    pub question: String,
    pub answers: Vec<Answer>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub context: String,
    pub qas: Vec<Qa>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub title: String,
    pub paragraphs: Vec<Paragraph>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDataset {
    pub data: Vec<Article>,
}

impl RawDataset {
    pub fn num_paragraphs(&self) -> usize {
        self.data.iter().map(|a| a.paragraphs.len()).sum()
    }

    pub fn num_questions(&self) -> usize {
        self.data.iter().flat_map(|a| &a.paragraphs).map(|p| p.qas.len()).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&serde_json::json!({ "version": "1.1", "data": self.data }))
            .expect("dataset serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Skip answers whose `answer_start` does not point at their text
    /// instead of failing the load.
    pub skip_bad_answers: bool,
}

pub fn load_squad_json(path: &Path, opts: LoadOptions) -> Result<RawDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_squad_json(&text, opts)
}

fn field<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a Value> {
    let map = obj.as_object().ok_or_else(|| Error::SchemaViolation {
        path: path.to_string(),
        message: "expected an object".into(),
    })?;
    map.get(key).ok_or_else(|| Error::SchemaViolation {
        path: format!("{path}.{key}"),
        message: "missing field".into(),
    })
}

fn as_str<'a>(v: &'a Value, path: &str) -> Result<&'a str> {
    v.as_str().ok_or_else(|| Error::SchemaViolation { path: path.to_string(), message: "expected a string".into() })
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| Error::SchemaViolation { path: path.to_string(), message: "expected a list".into() })
}

pub fn parse_squad_json(text: &str, opts: LoadOptions) -> Result<RawDataset> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::MalformedJson(e.to_string()))?;
    let data = as_array(field(&root, "data", "$")?, "$.data")?;
    let mut seen = HashSet::new();
    let mut articles = Vec::with_capacity(data.len());
    for (ai, art) in data.iter().enumerate() {
        let ap = format!("$.data[{ai}]");
        let title = as_str(field(art, "title", &ap)?, &format!("{ap}.title"))?.to_string();
        let paras = as_array(field(art, "paragraphs", &ap)?, &format!("{ap}.paragraphs"))?;
        let mut paragraphs = Vec::with_capacity(paras.len());
        for (pi, para) in paras.iter().enumerate() {
            let pp = format!("{ap}.paragraphs[{pi}]");
            let context = as_str(field(para, "context", &pp)?, &format!("{pp}.context"))?.to_string();
            let ctx_chars = context.chars().count();
            let qas_v = as_array(field(para, "qas", &pp)?, &format!("{pp}.qas"))?;
            let mut qas = Vec::with_capacity(qas_v.len());
            for (qi, qa) in qas_v.iter().enumerate() {
                let qp = format!("{pp}.qas[{qi}]");
                let id = as_str(field(qa, "id", &qp)?, &format!("{qp}.id"))?.to_string();
                let question = as_str(field(qa, "question", &qp)?, &format!("{qp}.question"))?.to_string();
                let ans_v = as_array(field(qa, "answers", &qp)?, &format!("{qp}.answers"))?;
                let mut answers = Vec::with_capacity(ans_v.len());
                for (xi, ans) in ans_v.iter().enumerate() {
                    let xp = format!("{qp}.answers[{xi}]");
                    let text = as_str(field(ans, "text", &xp)?, &format!("{xp}.text"))?.to_string();
                    let start_v = field(ans, "answer_start", &xp)?;
                    let answer_start = start_v.as_u64().ok_or_else(|| Error::SchemaViolation {
                        path: format!("{xp}.answer_start"),
                        message: "expected a non-negative integer".into(),
                    })? as usize;
                    let len = text.chars().count();
                    let found = if answer_start + len <= ctx_chars {
                        char_slice(&context, answer_start, answer_start + len)
                    } else {
                        ""
                    };
                    if found != text {
                        if opts.skip_bad_answers {
                            log::warn!("skipping misaligned answer at {xp}");
                            continue;
                        }
                        return Err(Error::MisalignedAnswer {
                            qid: id,
                            answer_start,
                            expected: text,
                            found: found.to_string(),
                        });
                    }
                    answers.push(Answer { text, answer_start });
                }
                if !seen.insert(id.clone()) {
                    return Err(Error::DuplicateQuestionId(id));
                }
                if answers.is_empty() && !ans_v.is_empty() {
                    log::warn!("question {id} has no usable answer; skipped");
                    continue;
                }
                qas.push(Qa { id, question, answers });
            }
            paragraphs.push(Paragraph { context, qas });
        }
        articles.push(Article { title, paragraphs });
    }
    Ok(RawDataset { data: articles })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = r#"{"version":"1.1","data":[{"title":"T","paragraphs":[{"context":"the cat sat",
        "qas":[{"id":"q1","question":"who sat?","answers":[{"text":"cat","answer_start":4}]},
               {"id":"q2","question":"what did it do?","answers":[{"text":"sat","answer_start":8}]}]}]}]}"#;

    #[test]
    fn counts_are_preserved() {
        let ds = parse_squad_json(ONE, LoadOptions::default()).unwrap();
        assert_eq!(ds.num_questions(), 2);
        assert_eq!(ds.num_paragraphs(), 1);
        let again = parse_squad_json(&ds.to_json(), LoadOptions::default()).unwrap();
        assert_eq!(again, ds);
    }

    #[test]
    fn malformed_json() {
        assert!(matches!(parse_squad_json("{\"data\": [", LoadOptions::default()), Err(Error::MalformedJson(_))));
    }

    #[test]
    fn schema_violation_reports_path() {
        let bad = ONE.replace("\"question\":\"who sat?\",", "");
        match parse_squad_json(&bad, LoadOptions::default()) {
            Err(Error::SchemaViolation { path, .. }) => assert_eq!(path, "$.data[0].paragraphs[0].qas[0].question"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_squad_json("{}", LoadOptions::default()), Err(Error::SchemaViolation { .. })));
    }

    #[test]
    fn misaligned_answer_reported_or_skipped() {
        let bad = ONE.replace("\"answer_start\":4", "\"answer_start\":5");
        assert!(matches!(parse_squad_json(&bad, LoadOptions::default()), Err(Error::MisalignedAnswer { .. })));
        let ds = parse_squad_json(&bad, LoadOptions { skip_bad_answers: true }).unwrap();
        assert_eq!(ds.num_questions(), 1);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let bad = ONE.replace("\"q2\"", "\"q1\"");
        assert!(matches!(parse_squad_json(&bad, LoadOptions::default()), Err(Error::DuplicateQuestionId(_))));
    }
}
