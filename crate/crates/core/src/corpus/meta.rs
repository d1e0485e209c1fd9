use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{CorpusError, ExampleRecord, Result};

/// Reads one JSON object per line: `id`, `source`, `token_count` and an
/// optional `losses` object mapping step strings to numbers. Blank lines are
/// skipped.
pub fn read_metadata(path: impl AsRef<Path>) -> Result<Vec<ExampleRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    parse_lines(BufReader::new(file)).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::io(path, source),
        other => other,
    })
}

pub(crate) fn parse_lines<R: BufRead>(reader: R) -> Result<Vec<ExampleRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io("<metadata>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExampleRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Record {
            line: idx + 1,
            message: e.to_string(),
        })?;
        rec.validate().map_err(|message| CorpusError::Record {
            line: idx + 1,
            message,
        })?;
        if !seen.insert(rec.id) {
            return Err(CorpusError::DuplicateId(rec.id));
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn write_metadata(path: impl AsRef<Path>, records: &[ExampleRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)
            .map_err(|e| CorpusError::io(path, std::io::Error::other(e)))?;
        w.write_all(b"\n").map_err(|e| CorpusError::io(path, e))?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Vec<ExampleRecord>> {
        parse_lines(s.as_bytes())
    }

    #[test]
    fn two_records() {
        let r = parse(
            "{\"id\":0,\"source\":1,\"token_count\":5,\"losses\":{\"100\":2.5}}\n\
             {\"id\":1,\"source\":0,\"token_count\":7}\n",
        )
        .unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].losses[&100], 2.5);
        assert!(r[1].losses.is_empty());
    }

    #[test]
    fn duplicate_id() {
        let err = parse(
            "{\"id\":0,\"source\":0,\"token_count\":1}\n{\"id\":0,\"source\":0,\"token_count\":1}\n",
        )
        .unwrap_err();
        assert_eq!(err.to_string(), "duplicate id 0");
    }

    #[test]
    fn zero_tokens_and_missing_field() {
        assert!(parse("{\"id\":0,\"source\":0,\"token_count\":0}\n").is_err());
        let err = parse("{\"id\":0,\"token_count\":3}\n").unwrap_err();
        assert!(err.to_string().contains("source"), "{err}");
    }

    #[test]
    fn non_finite_loss() {
        assert!(
            parse("{\"id\":0,\"source\":0,\"token_count\":2,\"losses\":{\"1\":1e999}}\n").is_err()
        );
    }
}
