//! Where every stage reads and writes under the corpus root.
//!
//! ```text
//! manifest.json                       corpus manifest
//! config.json                         config written by `synth`
//! provider/index.json                 mock search index
//! photos/<speaker>.emb                face embeddings of image results
//! videos/<video>.frf, .syn            frame features and sync confidences
//! videos/<video>.truth.json           generator ground truth
//! embeddings/utterances.emb           one x-vector per segment
//! embeddings/utterances.truth.json    true voice of each foreign segment
//! work/templates.emb, .json           template faces and gate outcomes
//! work/shots/<video>.json
//! work/tracks/<video>.json
//! work/backend.plda, work/split.json
//! work/cleaning.json, work/finetune.txt
//! reports/*.json, reports/*.txt
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use voxcurate_core::model::{CorpusManifest, SpeakerId, VideoId};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    pub fn manifest(&self) -> PathBuf {
        self.path("manifest.json")
    }

    pub fn config(&self) -> PathBuf {
        self.path("config.json")
    }

    pub fn provider_index(&self) -> PathBuf {
        self.path("provider/index.json")
    }

    pub fn photos_rel(speaker: &SpeakerId) -> String {
        format!("photos/{speaker}.emb")
    }

    pub fn frames_rel(video: &VideoId) -> String {
        format!("videos/{video}.frf")
    }

    pub fn sync_rel(video: &VideoId) -> String {
        format!("videos/{video}.syn")
    }

    pub fn video_truth(&self, video: &VideoId) -> PathBuf {
        self.path(format!("videos/{video}.truth.json"))
    }

    pub const EMBEDDINGS_REL: &'static str = "embeddings/utterances.emb";

    pub fn embedding_truth(&self) -> PathBuf {
        self.path("embeddings/utterances.truth.json")
    }

    pub fn templates(&self) -> PathBuf {
        self.path("work/templates.emb")
    }

    pub fn template_report(&self) -> PathBuf {
        self.path("work/templates.json")
    }

    pub fn shots(&self, video: &VideoId) -> PathBuf {
        self.path(format!("work/shots/{video}.json"))
    }

    pub fn tracks(&self, video: &VideoId) -> PathBuf {
        self.path(format!("work/tracks/{video}.json"))
    }

    pub fn backend(&self) -> PathBuf {
        self.path("work/backend.plda")
    }

    pub fn split(&self) -> PathBuf {
        self.path("work/split.json")
    }

    pub fn cleaning(&self) -> PathBuf {
        self.path("work/cleaning.json")
    }

    pub fn finetune(&self) -> PathBuf {
        self.path("work/finetune.txt")
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.path(format!("reports/{name}"))
    }

    /// Loads the manifest, validates it and checks that referenced files exist.
    pub fn load_manifest(&self) -> CliResult<CorpusManifest> {
        let path = self.manifest();
        let m: CorpusManifest = read_json(&path)?;
        m.validate().map_err(|e| CliError::schema(&path, e))?;
        let referenced = m
            .videos
            .iter()
            .flat_map(|v| [v.frames.as_str(), v.sync.as_str()])
            .chain(m.embedding_files.iter().map(String::as_str));
        for rel in referenced {
            if !self.path(rel).is_file() {
                return Err(CliError::MissingInput { path: self.path(rel), what: "referenced by manifest.json".into() });
            }
        }
        Ok(m)
    }

    pub fn save_manifest(&self, m: &CorpusManifest) -> CliResult<()> {
        write_json(&self.manifest(), m)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::schema(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::schema(path, e))?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn ensure_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}
