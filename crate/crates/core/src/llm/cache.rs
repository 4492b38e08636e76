//! Content-addressed record/replay store for generations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GenRequest, ImageData, Message};

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model_id: &'a str,
    messages: &'a [Message],
    images: Vec<&'a str>,
    /// Bit pattern, so that formatting can never change the key.
    temperature_bits: u64,
    max_tokens: u32,
}

/// Stable digest over everything that can change a response. Images enter
/// by content hash, not by path.
pub fn cache_key(request: &GenRequest, images: &[ImageData]) -> String {
    let material = KeyMaterial {
        model_id: &request.model_id,
        messages: &request.messages,
        images: images.iter().map(|i| i.sha256.as_str()).collect(),
        temperature_bits: request.temperature.to_bits(),
        max_tokens: request.max_tokens,
    };
    let bytes = serde_json::to_vec(&material).expect("key material serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    digest: String,
    model_id: String,
    response: String,
}

/// One JSON file per digest under `<dir>/<first two hex chars>/`.
#[derive(Debug)]
pub struct ReplayStore {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ReplayStore {
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, digest: &str) -> PathBuf {
        let shard = digest.get(..2).unwrap_or("xx");
        self.dir.join(shard).join(format!("{digest}.json"))
    }

    /// A corrupt entry is reported and treated as a miss.
    pub fn get(&self, digest: &str) -> Option<String> {
        let path = self.path(digest);
        let bytes = fs::read(&path).ok()?;
        match serde_json::from_slice::<Entry>(&bytes) {
            Ok(e) if e.digest == digest => Some(e.response),
            Ok(_) => {
                log::warn!("replay entry {} has a mismatched digest; ignoring", path.display());
                None
            }
            Err(err) => {
                log::warn!("replay entry {} is corrupt ({err}); ignoring", path.display());
                None
            }
        }
    }

    pub fn put(&self, digest: &str, model_id: &str, response: &str) -> std::io::Result<()> {
        let path = self.path(digest);
        let entry = Entry {
            digest: digest.to_string(),
            model_id: model_id.to_string(),
            response: response.to_string(),
        };
        let bytes = serde_json::to_vec_pretty(&entry).expect("entries serialize");
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("json.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)
    }

    pub fn len(&self) -> usize {
        walk_json(&self.dir)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn walk_json(dir: &Path) -> usize {
    let Ok(entries) = fs::read_dir(dir) else {
        return 0;
    };
    entries
        .filter_map(Result::ok)
        .map(|e| {
            let p = e.path();
            if p.is_dir() {
                walk_json(&p)
            } else {
                usize::from(p.extension().is_some_and(|x| x == "json"))
            }
        })
        .sum()
}
