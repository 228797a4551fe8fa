//! JSON-lines database files.
//!
//! Line 1 is a [`DbHeader`]; every further non-blank line is one record:
//!
//! ```text
//! {"schema":"llmconf-perfdb/1","hardware":{...},"backend":"trtllm","backend_version":"1.0.0"}
//! {"kind":"gemm","quant":"fp8","shape":{"m":64,"n":8192,"k":8192},"latency_us":412.5,"provenance":"synthetic"}
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    AttnKind, DbContents, HardwareSpec, OperatorKind, OperatorQuery, OperatorRecord, PerfDatabase, Provenance, Quant,
    Shape,
};
use crate::error::{Error, Result};

pub const SCHEMA: &str = "llmconf-perfdb/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbHeader {
    pub schema: String,
    pub hardware: HardwareSpec,
    pub backend: String,
    pub backend_version: String,
}

impl DbHeader {
    pub fn new(hardware: HardwareSpec, backend: impl Into<String>, version: impl Into<String>) -> Self {
        Self {
            schema: SCHEMA.to_string(),
            hardware,
            backend: backend.into(),
            backend_version: version.into(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    kind: OperatorKind,
    quant: Quant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attn_kind: Option<AttnKind>,
    shape: Shape,
    latency_us: f64,
    provenance: Provenance,
}

impl DbContents {
    /// Parses a database file without checking record invariants.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty database file".into(),
        })?;
        let header: DbHeader = serde_json::from_str(first).map_err(|e| Error::Parse {
            line: 1,
            message: format!("header: {e}"),
        })?;
        if header.schema != SCHEMA {
            return Err(Error::Parse {
                line: 1,
                message: format!("unsupported schema {:?}, expected {SCHEMA:?}", header.schema),
            });
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let r: RecordLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(OperatorRecord {
                query: OperatorQuery {
                    kind: r.kind,
                    quant: r.quant,
                    attn_kind: r.attn_kind,
                    shape: r.shape,
                },
                latency_us: r.latency_us,
                provenance: r.provenance,
            });
        }
        Ok(Self { header, records })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            let line = RecordLine {
                kind: r.query.kind,
                quant: r.query.quant,
                attn_kind: r.query.attn_kind,
                shape: r.query.shape.clone(),
                latency_us: r.latency_us,
                provenance: r.provenance,
            };
            out.push_str(&serde_json::to_string(&line).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

impl PerfDatabase {
    pub fn from_jsonl(text: &str) -> Result<Self> {
        PerfDatabase::new(DbContents::parse(text)?)
    }

    pub fn to_jsonl(&self) -> String {
        self.contents().to_jsonl()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

/// Reads, validates and indexes a database file.
pub fn load_db(path: &Path) -> Result<PerfDatabase> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PerfDatabase::from_jsonl(&text)
}
