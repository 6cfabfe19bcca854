use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// One document. `text` records are whitespace-tokenized on load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusRecord {
    pub doc_id: String,
    pub tokens: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    doc_id: String,
    tokens: Option<Vec<String>>,
    text: Option<String>,
}

/// Reads a JSON-lines corpus. Blank lines are skipped.
pub fn load_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, path)
}

pub fn parse_corpus(text: &str, path: &Path) -> Result<Vec<CorpusRecord>> {
    let corpus_err = |line: usize, message: String| Error::Corpus {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(raw_line).map_err(|e| corpus_err(line, e.to_string()))?;
        let tokens = match (raw.tokens, raw.text) {
            (Some(t), None) => t,
            (None, Some(text)) => text.split_whitespace().map(str::to_string).collect(),
            (Some(_), Some(_)) => {
                return Err(corpus_err(line, "record has both `tokens` and `text`".into()))
            }
            (None, None) => {
                return Err(corpus_err(line, "record has neither `tokens` nor `text`".into()))
            }
        };
        if let Some(&first) = seen.get(&raw.doc_id) {
            return Err(Error::DuplicateDocId {
                path: path.to_path_buf(),
                doc_id: raw.doc_id,
                first,
                second: line,
            });
        }
        seen.insert(raw.doc_id.clone(), line);
        out.push(CorpusRecord {
            doc_id: raw.doc_id,
            tokens,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<CorpusRecord>> {
        parse_corpus(text, Path::new("corpus.jsonl"))
    }

    #[test]
    fn text_is_whitespace_split() {
        let c = parse(r#"{"doc_id":"a","text":"x y  z"}"#).unwrap();
        assert_eq!(c[0].tokens, vec!["x", "y", "z"]);
    }

    #[test]
    fn pre_tokenized_kept_verbatim() {
        let c = parse("{\"doc_id\":\"a\",\"tokens\":[\"x y\",\"z\"]}\n\n{\"doc_id\":\"b\",\"text\":\"\"}\n").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].tokens, vec!["x y", "z"]);
        assert!(c[1].tokens.is_empty());
    }

    #[test]
    fn empty_file() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn duplicate_names_both_lines() {
        let lines: Vec<String> = ["a", "b", "c", "d", "e", "f", "c"]
            .iter()
            .map(|id| format!(r#"{{"doc_id":"{id}","text":"t"}}"#))
            .collect();
        let err = parse(&lines.join("\n")).unwrap_err();
        match &err {
            Error::DuplicateDocId { first, second, doc_id, .. } => {
                assert_eq!((*first, *second, doc_id.as_str()), (3, 7, "c"));
            }
            other => panic!("unexpected {other}"),
        }
        assert!(err.to_string().contains("lines 3 and 7"));
    }

    #[test]
    fn field_errors_carry_line_numbers() {
        let both = "{\"doc_id\":\"a\",\"text\":\"x\"}\n{\"doc_id\":\"b\",\"text\":\"x\",\"tokens\":[]}";
        assert!(matches!(parse(both), Err(Error::Corpus { line: 2, .. })));
        assert!(matches!(parse(r#"{"doc_id":"a"}"#), Err(Error::Corpus { line: 1, .. })));
        assert!(matches!(parse("{\"doc_id\":\"a\",\"text\":\"x\"}\nnot json"), Err(Error::Corpus { line: 2, .. })));
    }
}
