//! Content-addressed persistence of provider outputs.
//!
//! One plain-JSON file per entry under a two-level hex fan-out, written
//! atomically (temp file + rename). Entries are immutable: re-putting an
//! identical payload is a no-op, re-putting a different payload under the
//! same key is an error. Payloads are canonicalized (sorted keys, fixed float
//! formatting) so byte equality equals semantic equality.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{DragError, Result};
use crate::providers::{prompts, ChatProvider, ChatRequest, ChatResponse, ProviderError};

/// Serialize a JSON value with sorted object keys and floats formatted to six
/// decimal places. Integers stay integers.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(&mut out, value);
    out
}

fn write_canonical(out: &mut String, value: &Value) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                let f = n.as_f64().expect("number is i64, u64, or f64");
                out.push_str(&format!("{f:.6}"));
            }
        }
        Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("string serializes"));
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(out, item);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key).expect("key serializes"));
                out.push(':');
                write_canonical(out, &map[*key]);
            }
            out.push('}');
        }
    }
}

/// Pipeline stage a cache entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Evidence,
    Rank,
    Triples,
    Aggregate,
    Answer,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Evidence => "evidence",
            Stage::Rank => "rank",
            Stage::Triples => "triples",
            Stage::Aggregate => "aggregate",
            Stage::Answer => "answer",
        }
    }

    /// Classify a chat request by its system prompt. Requests without a
    /// recognized pipeline system prompt (student answering, redaction,
    /// injection) fall under `Answer`.
    pub fn for_request(request: &ChatRequest) -> Stage {
        match request.system_content() {
            Some(prompts::EVIDENCE_SYSTEM_PROMPT) => Stage::Evidence,
            Some(prompts::RANKING_SYSTEM_PROMPT) => Stage::Rank,
            Some(prompts::TRIPLE_SYSTEM_PROMPT) => Stage::Triples,
            Some(prompts::AGGREGATION_SYSTEM_PROMPT) => Stage::Aggregate,
            _ => Stage::Answer,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Key of one cache entry: the stage plus a stable hash of
/// (stage, model id, prompt bytes, parameters).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey {
    pub stage: Stage,
    pub fingerprint: String,
}

impl CacheKey {
    pub fn new(stage: Stage, fingerprint: impl Into<String>) -> Self {
        Self {
            stage,
            fingerprint: fingerprint.into(),
        }
    }

    /// Key for a chat request at a given stage.
    pub fn for_request(stage: Stage, request: &ChatRequest) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"stage\x1f");
        hasher.update(stage.as_str().as_bytes());
        hasher.update(b"\x1e");
        hasher.update(request.fingerprint().as_bytes());
        Self {
            stage,
            fingerprint: hex::encode(hasher.finalize()),
        }
    }
}

/// A stored entry: key, creation time, stage-specific payload, provider id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub created_at: u64,
    pub payload: Value,
    pub provider_id: String,
}

/// Filesystem-backed store. Cheap to clone behind an `Arc`; safe for
/// concurrent writers thanks to atomic renames.
#[derive(Debug)]
pub struct FileStore {
    root: PathBuf,
}

impl FileStore {
    /// Open (and create if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entry_path(&self, key: &CacheKey) -> PathBuf {
        let f = &key.fingerprint;
        debug_assert!(f.len() >= 4, "fingerprint is hex of a hash");
        self.root
            .join(key.stage.as_str())
            .join(&f[0..2])
            .join(&f[2..4])
            .join(format!("{f}.json"))
    }

    /// Fetch the entry previously put under `key`, if any. A corrupt file is
    /// quarantined (renamed to `.corrupt`) and treated as a miss.
    pub fn get(&self, key: &CacheKey) -> Result<Option<CacheEntry>> {
        let path = self.entry_path(key);
        let bytes = match std::fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry) => Ok(Some(entry)),
            Err(e) => {
                log::warn!("quarantining corrupt cache entry {} ({e})", key.fingerprint);
                let quarantine = path.with_extension("json.corrupt");
                let _ = std::fs::rename(&path, quarantine);
                Ok(None)
            }
        }
    }

    /// Durably store `payload` under `key`. Entries are immutable.
    pub fn put(&self, key: &CacheKey, payload: Value, provider_id: &str) -> Result<()> {
        if let Some(existing) = self.get(key)? {
            if canonical_json(&existing.payload) == canonical_json(&payload) {
                return Ok(());
            }
            return Err(DragError::CacheConflict {
                key: format!("{}/{}", key.stage, key.fingerprint),
            });
        }
        let entry = CacheEntry {
            key: key.clone(),
            created_at: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            payload,
            provider_id: provider_id.to_string(),
        };
        let path = self.entry_path(key);
        let dir = path.parent().expect("entry path has a parent");
        std::fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".{}.{}.tmp", key.fingerprint, std::process::id()));
        let body = canonical_json(&serde_json::to_value(&entry)?);
        std::fs::write(&tmp, body.as_bytes())?;
        let file = std::fs::File::open(&tmp)?;
        file.sync_all()?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }
}

/// Chat provider wrapper that consults a [`FileStore`] before calling the
/// backend. Cache hits never touch the inner provider, which is what makes
/// reruns free and interrupted runs resumable.
pub struct CachingChatProvider {
    inner: Arc<dyn ChatProvider>,
    store: Arc<FileStore>,
}

impl CachingChatProvider {
    pub fn new(inner: Arc<dyn ChatProvider>, store: Arc<FileStore>) -> Self {
        Self { inner, store }
    }
}

impl ChatProvider for CachingChatProvider {
    fn provider_id(&self) -> &str {
        self.inner.provider_id()
    }

    fn chat_complete(
        &self,
        request: &ChatRequest,
    ) -> std::result::Result<ChatResponse, ProviderError> {
        let stage = Stage::for_request(request);
        let key = CacheKey::for_request(stage, request);
        match self.store.get(&key) {
            Ok(Some(entry)) => {
                return serde_json::from_value(entry.payload).map_err(|e| {
                    ProviderError::MalformedPayload(format!(
                        "cached payload for {} does not parse: {e}",
                        key.fingerprint
                    ))
                });
            }
            Ok(None) => {}
            Err(e) => {
                return Err(ProviderError::Transport(format!("cache read failed: {e}")));
            }
        }
        let response = self.inner.chat_complete(request)?;
        let payload = serde_json::to_value(&response)
            .map_err(|e| ProviderError::MalformedPayload(format!("response serialize: {e}")))?;
        self.store
            .put(&key, payload, self.inner.provider_id())
            .map_err(|e| ProviderError::Transport(format!("cache write failed: {e}")))?;
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn store() -> (tempfile::TempDir, FileStore) {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        (dir, store)
    }

    fn key(n: u64) -> CacheKey {
        CacheKey::new(Stage::Evidence, format!("{n:064x}"))
    }

    #[test]
    fn get_after_put_returns_equal_payload() {
        let (_dir, store) = store();
        let payload = json!({"lines": ["a", "b"], "score": 0.5});
        store.put(&key(1), payload.clone(), "mock").unwrap();
        let entry = store.get(&key(1)).unwrap().unwrap();
        assert_eq!(canonical_json(&entry.payload), canonical_json(&payload));
        assert_eq!(entry.provider_id, "mock");
    }

    #[test]
    fn get_of_never_put_key_is_none() {
        let (_dir, store) = store();
        assert!(store.get(&key(42)).unwrap().is_none());
    }

    #[test]
    fn identical_reput_is_noop_conflicting_reput_errors() {
        let (_dir, store) = store();
        store.put(&key(2), json!({"v": 1}), "mock").unwrap();
        store.put(&key(2), json!({"v": 1}), "mock").unwrap();
        let err = store.put(&key(2), json!({"v": 2}), "mock").unwrap_err();
        assert!(matches!(err, DragError::CacheConflict { .. }));
    }

    #[test]
    fn corrupt_entry_is_quarantined_and_treated_as_miss() {
        let (_dir, store) = store();
        store.put(&key(3), json!({"v": 1}), "mock").unwrap();
        let path = store.entry_path(&key(3));
        std::fs::write(&path, b"{ not json").unwrap();
        assert!(store.get(&key(3)).unwrap().is_none());
        assert!(!path.exists());
        assert!(path.with_extension("json.corrupt").exists());
    }

    #[test]
    fn thousand_puts_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = FileStore::open(dir.path()).unwrap();
            for i in 0..1000u64 {
                store.put(&key(i), json!({"i": i}), "mock").unwrap();
            }
        }
        let reopened = FileStore::open(dir.path()).unwrap();
        for i in 0..1000u64 {
            let entry = reopened.get(&key(i)).unwrap().unwrap();
            assert_eq!(entry.payload, json!({"i": i}));
        }
    }

    #[test]
    fn cache_key_is_stable_for_equal_requests() {
        use crate::providers::ChatMessage;
        let a = ChatRequest::new("m", vec![ChatMessage::user("q")], 0.0, 10).unwrap();
        let b = ChatRequest::new("m", vec![ChatMessage::user("q")], 0.0, 10).unwrap();
        assert_eq!(
            CacheKey::for_request(Stage::Answer, &a),
            CacheKey::for_request(Stage::Answer, &b)
        );
        assert_ne!(
            CacheKey::for_request(Stage::Answer, &a).fingerprint,
            CacheKey::for_request(Stage::Rank, &a).fingerprint
        );
    }

    #[test]
    fn canonical_json_sorts_keys_and_formats_floats() {
        let value = json!({"b": 1, "a": {"z": 0.5, "y": [1.25, 2]}});
        assert_eq!(
            canonical_json(&value),
            r#"{"a":{"y":[1.250000,2],"z":0.500000},"b":1}"#
        );
    }
}
