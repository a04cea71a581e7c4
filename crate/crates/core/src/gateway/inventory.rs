//! Append-only order inventory.
//!
//! On disk this is newline-delimited JSON, one record per line:
//! `{"formatVersion":1,"recordId":N,"placedAt":"<RFC 3339>","tokenId":"...","order":{...}}`.
//! Record ids start at 1 and increase by one per placed order.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::order::OrderPayload;
use super::GatewayError;

pub const INVENTORY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OrderRecord {
    pub format_version: u32,
    pub record_id: u64,
    pub placed_at: DateTime<Utc>,
    pub token_id: String,
    pub order: OrderPayload,
}

#[derive(Debug)]
struct Inner {
    records: Vec<OrderRecord>,
    file: Option<File>,
}

#[derive(Debug)]
pub struct OrderInventory {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl OrderInventory {
    pub fn in_memory() -> Self {
        Self { path: None, inner: Mutex::new(Inner { records: Vec::new(), file: None }) }
    }

    /// Opens (or creates) an inventory file, loading existing records.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref().to_path_buf();
        let mut records = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: OrderRecord = serde_json::from_str(&line)
                    .map_err(|e| GatewayError::Integrity(format!("{}:{}: {e}", path.display(), n + 1)))?;
                records.push(record);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path: Some(path), inner: Mutex::new(Inner { records, file: Some(file) }) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub(crate) fn append(
        &self,
        order: OrderPayload,
        token_id: &str,
        placed_at: DateTime<Utc>,
    ) -> Result<OrderRecord, GatewayError> {
        let mut inner = self.inner.lock().expect("inventory lock");
        let record = OrderRecord {
            format_version: INVENTORY_FORMAT_VERSION,
            record_id: inner.records.len() as u64 + 1,
            placed_at,
            token_id: token_id.into(),
            order,
        };
        if let Some(file) = inner.file.as_mut() {
            let mut line = serde_json::to_string(&record).expect("record serializes");
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        inner.records.push(record.clone());
        Ok(record)
    }

    pub fn records(&self) -> Vec<OrderRecord> {
        self.inner.lock().expect("inventory lock").records.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("inventory lock").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn for_session(&self, session_id: &str) -> Vec<OrderRecord> {
        self.inner
            .lock()
            .expect("inventory lock")
            .records
            .iter()
            .filter(|r| r.order.session_id == session_id)
            .cloned()
            .collect()
    }
}
