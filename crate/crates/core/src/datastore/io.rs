//! Trace and database file formats.
//!
//! Traces are JSON lines, one query per line:
//! `{"q":0,"t":0,"b":[[0,5],[0,6]],"cat":"s-reg"}`. Block references are
//! `[table_id, block_no]` pairs. Loading does not validate block ids against
//! a database; replay does.
//!
//! Databases serialize as a single JSON document.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BlockId, Database, QueryRecord, QueryTrace};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct TraceLine {
    q: u64,
    t: u64,
    b: Vec<(u32, u32)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cat: Option<String>,
}

/// Writes a trace as JSON lines.
pub fn save_trace(trace: &QueryTrace, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for rec in &trace.records {
        let line = TraceLine {
            q: rec.query_id,
            t: rec.timestep,
            b: rec
                .accessed_blocks
                .iter()
                .map(|id| (id.table, id.block))
                .collect(),
            cat: rec.label.clone(),
        };
        let json = serde_json::to_string(&line)
            .map_err(|e| Error::Serialization(format!("trace record: {e}")))?;
        writeln!(w, "{json}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trace from JSON lines. An empty file yields an empty trace.
/// Malformed lines are parse errors naming the line number.
pub fn load_trace(path: impl AsRef<Path>) -> Result<QueryTrace> {
    let name = path
        .as_ref()
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TraceLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        records.push(QueryRecord {
            query_id: parsed.q,
            timestep: parsed.t,
            accessed_blocks: parsed
                .b
                .into_iter()
                .map(|(t, b)| BlockId::new(t, b))
                .collect(),
            label: parsed.cat,
        });
    }
    Ok(QueryTrace {
        records,
        database_ref: name,
    })
}

/// Writes a full database as JSON.
pub fn save_database(db: &Database, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, db)
        .map_err(|e| Error::Serialization(format!("database: {e}")))?;
    w.flush()?;
    Ok(())
}

/// Reads a database written by [`save_database`].
pub fn load_database(path: impl AsRef<Path>) -> Result<Database> {
    let reader = BufReader::new(File::open(path)?);
    serde_json::from_reader(reader).map_err(|e| Error::Serialization(format!("database: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn sample_trace() -> QueryTrace {
        let mut b0 = BTreeSet::new();
        b0.insert(BlockId::new(0, 1));
        b0.insert(BlockId::new(1, 3));
        let mut b1 = BTreeSet::new();
        b1.insert(BlockId::new(0, 2));
        QueryTrace {
            records: vec![
                QueryRecord {
                    query_id: 0,
                    timestep: 0,
                    accessed_blocks: b0,
                    label: Some("s-reg".into()),
                },
                QueryRecord {
                    query_id: 1,
                    timestep: 1,
                    accessed_blocks: b1,
                    label: None,
                },
            ],
            database_ref: "trace".into(),
        }
    }

    #[test]
    fn trace_roundtrips_field_for_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        let t = sample_trace();
        save_trace(&t, &path).unwrap();
        let back = load_trace(&path).unwrap();
        assert_eq!(back.records, t.records);
    }

    #[test]
    fn empty_file_is_an_empty_trace() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let t = load_trace(&path).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn malformed_line_names_the_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"q\":0,\"t\":0,\"b\":[[0,1]]}\nnot json\n").unwrap();
        match load_trace(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_block_fails_on_replay_validation_not_load() {
        use crate::datastore::gen::tests::spec;
        use crate::datastore::generate_database;

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, "{\"q\":0,\"t\":0,\"b\":[[9,999]]}\n").unwrap();
        let t = load_trace(&path).unwrap();
        assert_eq!(t.len(), 1);
        let db = generate_database(&spec(1, 50, 10), 1).unwrap();
        assert!(matches!(t.validate_against(&db), Err(Error::Integrity(_))));
    }
}
