use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::{canonical_json, CacheKey, Completion, CompletionRequest, Usage};

pub const RESPONSES_FILE: &str = "responses.jsonl";

#[derive(Serialize, Deserialize)]
struct Record<'a> {
    key: CacheKey,
    model_id: String,
    #[serde(borrow)]
    request: &'a RawValue,
    text: String,
    usage: Usage,
}

/// Append-only response store: `{root}/{model_id}/responses.jsonl` plus an
/// in-memory index. Corrupt lines are skipped on load.
pub struct ResponseCache {
    root: PathBuf,
    index: Mutex<HashMap<CacheKey, (String, Usage)>>,
    writer: Mutex<()>,
}

fn model_dir(model_id: &str) -> String {
    model_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect()
}

impl ResponseCache {
    pub fn open(root: impl AsRef<Path>) -> io::Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let mut index = HashMap::new();
        let mut dirs: Vec<PathBuf> = fs::read_dir(&root)?.filter_map(|e| e.ok()).map(|e| e.path()).collect();
        dirs.sort();
        for d in dirs {
            let file = d.join(RESPONSES_FILE);
            if !file.is_file() {
                continue;
            }
            let content = fs::read_to_string(&file)?;
            for (i, line) in content.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Record>(line) {
                    Ok(r) => {
                        index.insert(r.key, (r.text, r.usage));
                    }
                    Err(e) => log::warn!("skipping corrupt cache line {} in {}: {e}", i + 1, file.display()),
                }
            }
        }
        Ok(ResponseCache { root, index: Mutex::new(index), writer: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.index.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &CacheKey) -> Option<Completion> {
        self.index.lock().unwrap().get(key).map(|(text, usage)| Completion {
            cached: true,
            ..Completion::new(text.clone(), *usage)
        })
    }

    /// Appends one record with a single write.
    pub fn put(&self, req: &CompletionRequest, key: &CacheKey, c: &Completion) -> io::Result<()> {
        let _guard = self.writer.lock().unwrap();
        if self.index.lock().unwrap().contains_key(key) {
            return Ok(());
        }
        let canonical = String::from_utf8(canonical_json(req)).expect("json is utf-8");
        let raw = RawValue::from_string(canonical).map_err(io::Error::other)?;
        let record = Record {
            key: key.clone(),
            model_id: req.model_id.clone(),
            request: &raw,
            text: c.text.clone(),
            usage: c.usage,
        };
        let mut line = serde_json::to_vec(&record).map_err(io::Error::other)?;
        line.push(b'\n');
        let dir = self.root.join(model_dir(&req.model_id));
        fs::create_dir_all(&dir)?;
        let mut f = OpenOptions::new().create(true).append(true).open(dir.join(RESPONSES_FILE))?;
        f.write_all(&line)?;
        self.index.lock().unwrap().insert(key.clone(), (c.text.clone(), c.usage));
        Ok(())
    }
}
