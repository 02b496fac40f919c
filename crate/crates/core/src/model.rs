//! Shared domain types: identifiers, embeddings, segment records and the
//! corpus manifest, plus dataset statistics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Current manifest schema version.
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

fn validate_component(s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(|c| c == '/' || c.is_whitespace() || c.is_control()) {
        return Err(Error::InvalidId(s.to_string()));
    }
    Ok(())
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Result<Self> {
                let s = s.into();
                validate_component(&s)?;
                Ok(Self(s))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl TryFrom<String> for $name {
            type Error = Error;

            fn try_from(s: String) -> Result<Self> {
                Self::new(s)
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                Self::new(s)
            }
        }
    };
}

string_id!(
    /// Person of interest. Non-empty, no `/` and no whitespace.
    SpeakerId
);
string_id!(
    /// Source video. Same character rules as [`SpeakerId`].
    VideoId
);

/// `speaker/video/index`, e.g. `spk0003/vid0003_01/00007`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct UtteranceId {
    pub speaker: SpeakerId,
    pub video: VideoId,
    pub index: u32,
}

impl UtteranceId {
    pub fn new(speaker: SpeakerId, video: VideoId, index: u32) -> Self {
        Self { speaker, video, index }
    }
}

impl fmt::Display for UtteranceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{:05}", self.speaker, self.video, self.index)
    }
}

impl FromStr for UtteranceId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('/');
        let (Some(spk), Some(vid), Some(idx), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::InvalidId(s.to_string()));
        };
        let index = idx.parse::<u32>().map_err(|_| Error::InvalidId(s.to_string()))?;
        Ok(Self { speaker: SpeakerId::new(spk)?, video: VideoId::new(vid)?, index })
    }
}

impl TryFrom<String> for UtteranceId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<UtteranceId> for String {
    fn from(id: UtteranceId) -> String {
        id.to_string()
    }
}

/// A fixed-dimension vector with an id, as stored in embedding files.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub id: String,
    pub values: Vec<f32>,
}

impl Embedding {
    pub fn new(id: impl Into<String>, values: Vec<f32>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding"));
        }
        Ok(Self { id: id.into(), values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Checks that a set of embeddings shares one dimension and returns it
/// (`None` for an empty set).
pub fn common_dim(set: &[Embedding]) -> Result<Option<usize>> {
    let Some(first) = set.first() else {
        return Ok(None);
    };
    let dim = first.dim();
    for e in set {
        if e.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: e.dim() });
        }
    }
    Ok(Some(dim))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentSource {
    Tracked,
    DiarizationKept,
    DiarizationDropped,
}

/// A time span of one video where the person of interest is on screen and
/// talking.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRecord {
    pub video: VideoId,
    pub speaker: SpeakerId,
    pub index: u32,
    pub start_ms: u64,
    pub end_ms: u64,
    pub source: SegmentSource,
}

impl SegmentRecord {
    pub fn new(
        video: VideoId,
        speaker: SpeakerId,
        index: u32,
        start_ms: u64,
        end_ms: u64,
        source: SegmentSource,
    ) -> Result<Self> {
        if start_ms >= end_ms {
            return Err(Error::InvalidParameter(format!(
                "segment start {start_ms} ms is not before end {end_ms} ms"
            )));
        }
        Ok(Self { video, speaker, index, start_ms, end_ms, source })
    }

    pub fn duration_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }

    pub fn utterance_id(&self) -> UtteranceId {
        UtteranceId::new(self.speaker.clone(), self.video.clone(), self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeakerInfo {
    pub id: SpeakerId,
    pub name: String,
    /// Language / nationality tag, e.g. `zh`, `ja`, `ko`.
    pub nationality: String,
}

/// A video fetched for one speaker, with its feature files (paths relative
/// to the corpus root).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoEntry {
    pub id: VideoId,
    pub speaker: SpeakerId,
    pub frames: String,
    pub sync: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub schema_version: u32,
    pub speakers: Vec<SpeakerInfo>,
    #[serde(default)]
    pub videos: Vec<VideoEntry>,
    pub segments: Vec<SegmentRecord>,
    /// Embedding files (relative paths) holding one x-vector per utterance.
    #[serde(default)]
    pub embedding_files: Vec<String>,
}

impl Default for CorpusManifest {
    fn default() -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            speakers: Vec::new(),
            videos: Vec::new(),
            segments: Vec::new(),
            embedding_files: Vec::new(),
        }
    }
}

impl CorpusManifest {
    /// Structural checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported manifest schema_version {}",
                self.schema_version
            )));
        }
        let mut speakers = BTreeSet::new();
        for s in &self.speakers {
            if !speakers.insert(&s.id) {
                return Err(Error::InvalidParameter(format!("duplicate speaker {}", s.id)));
            }
        }
        let mut videos = BTreeSet::new();
        for v in &self.videos {
            if !videos.insert(&v.id) {
                return Err(Error::InvalidParameter(format!("duplicate video {}", v.id)));
            }
            if !speakers.contains(&v.speaker) {
                return Err(Error::InvalidParameter(format!(
                    "video {} names unknown speaker {}",
                    v.id, v.speaker
                )));
            }
        }
        let mut utts = BTreeSet::new();
        for seg in &self.segments {
            if !speakers.contains(&seg.speaker) {
                return Err(Error::InvalidParameter(format!(
                    "segment names unknown speaker {}",
                    seg.speaker
                )));
            }
            if seg.start_ms >= seg.end_ms {
                return Err(Error::InvalidParameter(format!(
                    "segment {} has start >= end",
                    seg.utterance_id()
                )));
            }
            if !utts.insert(seg.utterance_id()) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate utterance {}",
                    seg.utterance_id()
                )));
            }
        }
        Ok(())
    }
}

/// Dataset statistics in the shape of a corpus summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticsReport {
    /// Listed speakers per nationality tag.
    pub poi_per_nationality: BTreeMap<String, usize>,
    pub speakers_listed: usize,
    /// Speakers with at least one kept utterance.
    pub speakers_with_utterances: usize,
    pub total_utterances: usize,
    /// Over speakers with at least one utterance.
    pub mean_utterances_per_poi: f64,
    pub mean_duration_s: f64,
    pub total_duration_ms: u64,
    pub total_hours: f64,
}

/// Folds a manifest into summary statistics. Segments marked
/// `diarization_dropped` are not counted as utterances.
pub fn corpus_statistics(manifest: &CorpusManifest) -> StatisticsReport {
    let mut poi_per_nationality = BTreeMap::new();
    for s in &manifest.speakers {
        *poi_per_nationality.entry(s.nationality.clone()).or_insert(0) += 1;
    }
    let mut active = BTreeSet::new();
    let mut total_utterances = 0usize;
    let mut total_duration_ms = 0u64;
    for seg in manifest.segments.iter().filter(|s| s.source != SegmentSource::DiarizationDropped) {
        active.insert(&seg.speaker);
        total_utterances += 1;
        total_duration_ms += seg.duration_ms();
    }
    let speakers_with_utterances = active.len();
    let mean_utterances_per_poi = if speakers_with_utterances == 0 {
        0.0
    } else {
        total_utterances as f64 / speakers_with_utterances as f64
    };
    let mean_duration_s = if total_utterances == 0 {
        0.0
    } else {
        total_duration_ms as f64 / 1000.0 / total_utterances as f64
    };
    StatisticsReport {
        poi_per_nationality,
        speakers_listed: manifest.speakers.len(),
        speakers_with_utterances,
        total_utterances,
        mean_utterances_per_poi,
        mean_duration_s,
        total_duration_ms,
        total_hours: total_duration_ms as f64 / 3_600_000.0,
    }
}
