//! Pipeline configuration.
//!
//! A config file is either a JSON object or `key = value` lines with dotted
//! keys (`tracker.cost.c_detect = 8`). Values on `key = value` lines are read
//! as JSON when they parse as JSON and as plain strings otherwise, so
//! `tracker.verify_interval = null` and `provider.default_language = en` both
//! work. Blank lines and lines starting with `#` are ignored. `--set key=value`
//! overrides use the same syntax. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use voxcurate_core::backend::BackendParams;
use voxcurate_core::clustering::TemplateParams;
use voxcurate_core::eval::DcfParams;
use voxcurate_core::shots::ShotParams;
use voxcurate_core::speaking::SpeakingParams;
use voxcurate_core::synth::Spectrum;
use voxcurate_core::tracking::TrackerConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct PipelineConfig {
    /// Drives the synthetic world and the train/test speaker split.
    pub seed: u64,
    pub template: TemplateParams,
    pub shots: ShotParams,
    pub tracker: TrackerConfig,
    pub speaking: SpeakingParams,
    pub backend: BackendParams,
    pub dcf: DcfParams,
    pub cleaning: CleaningConfig,
    pub provider: ProviderConfig,
    pub synth: SynthConfig,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CleaningConfig {
    /// Radius used by `clean`.
    pub eps: f64,
    pub min_pts: usize,
    /// Grid used by `sweep`.
    pub grid: Vec<f64>,
    /// Read `eps` and `grid` as fractions of the largest per-speaker PLDA
    /// distance in the corpus instead of absolute distances.
    pub relative: bool,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self { eps: 80.0, min_pts: 3, grid: vec![70.0, 80.0, 100.0], relative: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySuffix {
    pub photo: String,
    pub video: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderConfig {
    /// Image results used per speaker.
    pub images: usize,
    /// Video results fetched per speaker.
    pub videos: usize,
    /// Query suffixes by language tag.
    pub suffixes: BTreeMap<String, QuerySuffix>,
    /// Tag used for speakers whose tag has no entry in `suffixes`.
    pub default_language: String,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        let mut suffixes = BTreeMap::new();
        suffixes.insert("en".to_owned(), QuerySuffix { photo: "photo".into(), video: "interview".into() });
        Self { images: 20, videos: 15, suffixes, default_language: "en".into() }
    }
}

impl ProviderConfig {
    pub fn suffix(&self, language: &str) -> &QuerySuffix {
        self.suffixes.get(language).unwrap_or_else(|| &self.suffixes[&self.default_language])
    }
}

/// Shape of the synthetic corpus written by `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub videos_per_speaker: usize,
    pub shots_per_video: u32,
    pub turns_per_shot: u32,
    /// Speaking turn and pause lengths, in frames.
    pub turn_frames: u32,
    pub gap_frames: u32,
    pub frame_ms: u32,
    /// Colour histogram bins per frame.
    pub bins: usize,
    pub face_dim: usize,
    /// Share of speaking turns in which the tracked face has switched to
    /// someone else.
    pub switch_rate: f64,
    /// Distinct foreign voices per speaker.
    pub sources_per_speaker: usize,
    pub photos: usize,
    pub photo_outliers: usize,
    /// Speakers (taken from the end) whose photo search yields too few
    /// consistent faces for a template.
    pub weak_speakers: usize,
    pub voice_dim: usize,
    pub between: Spectrum,
    pub within: Spectrum,
    pub nationalities: Vec<String>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_speakers: 50,
            videos_per_speaker: 2,
            shots_per_video: 4,
            turns_per_shot: 5,
            turn_frames: 125,
            gap_frames: 25,
            frame_ms: 40,
            bins: 16,
            face_dim: 16,
            switch_rate: 0.2,
            sources_per_speaker: 2,
            photos: 24,
            photo_outliers: 4,
            weak_speakers: 0,
            voice_dim: 32,
            between: Spectrum { scale: 4.0, decay: 0.9 },
            within: Spectrum::isotropic(0.5),
            nationalities: vec!["zh".into(), "ja".into(), "ko".into()],
        }
    }
}

impl SynthConfig {
    pub fn shot_frames(&self) -> u32 {
        self.gap_frames + self.turns_per_shot * (self.turn_frames + self.gap_frames)
    }
}

fn check(ok: bool, key: &str, msg: impl std::fmt::Display) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(format!("{key}: {msg}"))
    }
}

impl PipelineConfig {
    /// Range checks beyond what the types enforce.
    pub fn validate(&self) -> Result<(), String> {
        let t = &self.template;
        check(t.eps.is_finite() && t.eps >= 0.0, "template.eps", "must be finite and >= 0")?;
        check(t.min_pts >= 1, "template.min_pts", "must be >= 1")?;
        check(t.min_support >= 1, "template.min_support", "must be >= 1")?;
        self.shots.validate().map_err(|e| format!("shots: {e}"))?;
        self.tracker.validate().map_err(|e| format!("tracker: {e}"))?;
        self.speaking.validate().map_err(|e| format!("speaking: {e}"))?;
        check(self.backend.lda_dim >= 1, "backend.lda_dim", "must be >= 1")?;
        check(self.backend.plda.iters >= 1, "backend.plda.iters", "must be >= 1")?;
        let floor = self.backend.plda.floor;
        check(floor.is_finite() && floor > 0.0, "backend.plda.floor", "must be finite and > 0")?;
        self.dcf.validate().map_err(|e| format!("dcf: {e}"))?;
        let c = &self.cleaning;
        let eps_ok = |e: f64| e.is_finite() && e >= 0.0;
        check(eps_ok(c.eps), "cleaning.eps", "must be finite and >= 0")?;
        check(c.min_pts >= 1, "cleaning.min_pts", "must be >= 1")?;
        check(!c.grid.is_empty() && c.grid.iter().all(|&e| eps_ok(e)), "cleaning.grid", "needs finite values >= 0")?;
        check(c.grid.windows(2).all(|w| w[0] < w[1]), "cleaning.grid", "must be strictly increasing")?;
        let p = &self.provider;
        check(p.images >= 1 && p.videos >= 1, "provider", "images and videos must be >= 1")?;
        check(p.suffixes.contains_key(&p.default_language), "provider.default_language", "has no suffix entry")?;
        let s = &self.synth;
        check(s.n_speakers >= 2, "synth.n_speakers", "must be >= 2")?;
        check(s.videos_per_speaker >= 1, "synth.videos_per_speaker", "must be >= 1")?;
        check(s.shots_per_video >= 1 && s.turns_per_shot >= 1, "synth", "shots_per_video and turns_per_shot must be >= 1")?;
        check(s.turn_frames >= 1 && s.gap_frames >= 2, "synth", "turn_frames must be >= 1 and gap_frames >= 2")?;
        check(s.frame_ms >= 1, "synth.frame_ms", "must be >= 1")?;
        check(s.bins >= 2 && s.bins.is_multiple_of(2), "synth.bins", "must be even and >= 2")?;
        check(s.face_dim >= 2 && s.voice_dim >= 2, "synth", "face_dim and voice_dim must be >= 2")?;
        check((0.0..1.0).contains(&s.switch_rate), "synth.switch_rate", "must be in [0, 1)")?;
        check(s.sources_per_speaker >= 1, "synth.sources_per_speaker", "must be >= 1")?;
        check(s.weak_speakers < s.n_speakers, "synth.weak_speakers", "must be below n_speakers")?;
        check(!s.nationalities.is_empty(), "synth.nationalities", "must not be empty")?;
        for (key, sp) in [("synth.between", s.between), ("synth.within", s.within)] {
            check(sp.scale.is_finite() && sp.scale > 0.0, key, "scale must be > 0")?;
            check(sp.decay.is_finite() && sp.decay > 0.0 && sp.decay <= 1.0, key, "decay must be in (0, 1]")?;
        }
        Ok(())
    }

    /// Defaults, then the file (if any), then `--set` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        Self::load_with_base(Self::default(), path, overrides)
    }

    /// Like [`load`](Self::load) starting from `base` instead of the defaults.
    pub fn load_with_base(base: Self, path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut tree = serde_json::to_value(base).expect("config serializes");
        let origin = path.map_or_else(|| Path::new("--set").to_path_buf(), Path::to_path_buf);
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let file = parse_text(&text).map_err(|m| CliError::schema(path, m))?;
            merge(&mut tree, file);
        }
        for o in overrides {
            let (key, value) = split_assignment(o).ok_or_else(|| CliError::Usage(format!("--set {o:?} needs key=value")))?;
            set_path(&mut tree, key, value).map_err(|m| CliError::schema(&origin, m))?;
        }
        let cfg: Self = serde_json::from_value(tree).map_err(|e| CliError::schema(&origin, e))?;
        cfg.validate().map_err(|m| CliError::schema(&origin, m))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

fn split_assignment(line: &str) -> Option<(&str, Value)> {
    let (k, v) = line.split_once('=')?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() {
        return None;
    }
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_owned()));
    Some((k, value))
}

/// Parses either format into a JSON tree.
pub fn parse_text(text: &str) -> Result<Value, String> {
    if text.trim_start().starts_with('{') {
        return serde_json::from_str(text).map_err(|e| e.to_string());
    }
    let mut tree = Value::Object(Map::new());
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = split_assignment(line).ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
        set_path(&mut tree, key, value).map_err(|m| format!("line {}: {m}", n + 1))?;
    }
    Ok(tree)
}

fn set_path(tree: &mut Value, key: &str, value: Value) -> Result<(), String> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("malformed key {key:?}"));
    }
    for part in &parts[..parts.len() - 1] {
        let map = node.as_object_mut().ok_or_else(|| format!("{key}: {part} is not a section"))?;
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    let map = node.as_object_mut().ok_or_else(|| format!("{key}: parent is not a section"))?;
    map.insert(parts[parts.len() - 1].to_owned(), value);
    Ok(())
}

/// Recursively overlays `top` on `base`. Objects merge, everything else replaces.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}
