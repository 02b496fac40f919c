//! Media search and download behind a trait, with an offline mock.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use voxcurate_core::model::{SpeakerId, VideoId};

use crate::error::{CliError, CliResult};
use crate::layout::{read_json, Layout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaKind {
    Image,
    Video,
}

/// One search hit, in rank order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    pub id: String,
    pub kind: MediaKind,
}

/// Local feature files for a fetched candidate, relative to the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fetched {
    /// One record of a face-embedding file.
    Face { file: String, record: String },
    Video { id: VideoId, frames: String, sync: String },
}

pub trait MediaProvider {
    /// Searches `"{name} {suffix}"`, returning at most `limit` hits.
    fn search(&self, name: &str, suffix: &str, kind: MediaKind, limit: usize) -> CliResult<Vec<Candidate>>;
    fn fetch(&self, candidate: &Candidate) -> CliResult<Fetched>;
}

pub fn query(name: &str, suffix: &str) -> String {
    format!("{name} {suffix}")
}

/// Search index stored by `synth`: query text to ranked hits.
pub type SearchIndex = BTreeMap<String, Vec<Candidate>>;

pub fn image_id(speaker: &SpeakerId, record: &str) -> String {
    format!("{speaker}/{record}")
}

/// Answers from `provider/index.json` and serves files already under the root.
#[derive(Debug, Clone)]
pub struct MockProvider {
    layout: Layout,
    index: SearchIndex,
}

impl MockProvider {
    pub fn open(layout: &Layout) -> CliResult<Self> {
        Ok(Self { layout: layout.clone(), index: read_json(&layout.provider_index())? })
    }
}

impl MediaProvider for MockProvider {
    fn search(&self, name: &str, suffix: &str, kind: MediaKind, limit: usize) -> CliResult<Vec<Candidate>> {
        let hits = self.index.get(&query(name, suffix)).map(Vec::as_slice).unwrap_or_default();
        Ok(hits.iter().filter(|c| c.kind == kind).take(limit).cloned().collect())
    }

    fn fetch(&self, c: &Candidate) -> CliResult<Fetched> {
        let fetched = match c.kind {
            MediaKind::Image => {
                let (spk, record) = c.id.split_once('/').ok_or_else(|| {
                    CliError::schema(self.layout.provider_index(), format!("image id {:?} is not speaker/record", c.id))
                })?;
                let speaker = SpeakerId::new(spk).map_err(|e| CliError::schema(self.layout.provider_index(), e))?;
                Fetched::Face { file: Layout::photos_rel(&speaker), record: record.to_owned() }
            }
            MediaKind::Video => {
                let id = VideoId::new(c.id.as_str()).map_err(|e| CliError::schema(self.layout.provider_index(), e))?;
                Fetched::Video { frames: Layout::frames_rel(&id), sync: Layout::sync_rel(&id), id }
            }
        };
        let files: Vec<&String> = match &fetched {
            Fetched::Face { file, .. } => vec![file],
            Fetched::Video { frames, sync, .. } => vec![frames, sync],
        };
        for f in files {
            if !self.layout.path(f).is_file() {
                return Err(CliError::MissingInput { path: self.layout.path(f), what: format!("media for {}", c.id) });
            }
        }
        Ok(fetched)
    }
}
