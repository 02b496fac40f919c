//! One function per command. Each reads its inputs from the root, checks that
//! earlier stages have run, and writes its outputs back.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use voxcurate_core::backend::{Backend, LabeledEmbeddingSet, LabeledVector};
use voxcurate_core::cleaning::{apply_cleaning, mean_vsr, plda_distance_matrix, CleaningReport, SpeakerDistances};
use voxcurate_core::clustering::{build_template, TemplateFace, TemplateOutcome};
use voxcurate_core::eval::{
    evaluate_split, evaluate_trained, split_speakers, EvalParams, SpeakerSplit, Trial, VerificationReport,
};
use voxcurate_core::model::{CorpusManifest, Embedding, SegmentRecord, SegmentSource, SpeakerId, UtteranceId, VideoEntry, VideoId};
use voxcurate_core::shots::{detect_shots, Shot};
use voxcurate_core::speaking::{extract_segments, FrameClock};
use voxcurate_core::tracking::{covered_frames, detect_every_frame, run_tracker, CostReport, TrackSegment};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::formats;
use crate::layout::{read_json, write_bytes, write_json, Layout};
use crate::provider::{Fetched, MediaKind, MediaProvider};

fn need(path: &std::path::Path, stage: &'static str, needs: &str, run: &'static str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::StageOrder { stage, needs: needs.to_owned(), run })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TemplateStatus {
    Accepted { speaker: SpeakerId, support: usize, photos: usize },
    Rejected { speaker: SpeakerId, largest: usize, photos: usize },
}

impl TemplateStatus {
    pub fn speaker(&self) -> &SpeakerId {
        match self {
            Self::Accepted { speaker, .. } | Self::Rejected { speaker, .. } => speaker,
        }
    }
}

/// `template`: image search, face clustering and the support gate.
pub fn template(layout: &Layout, cfg: &PipelineConfig, provider: &(dyn MediaProvider + Sync)) -> CliResult<Vec<TemplateStatus>> {
    let manifest = layout.load_manifest()?;
    let outcomes = manifest
        .speakers
        .par_iter()
        .map(|info| -> CliResult<(TemplateOutcome, usize)> {
            let suffix = &cfg.provider.suffix(&info.nationality).photo;
            let hits = provider.search(&info.name, suffix, MediaKind::Image, cfg.provider.images)?;
            let mut files: BTreeMap<String, BTreeMap<String, Embedding>> = BTreeMap::new();
            let mut faces = Vec::with_capacity(hits.len());
            for hit in &hits {
                let Fetched::Face { file, record } = provider.fetch(hit)? else {
                    return Err(CliError::schema(layout.provider_index(), format!("{} is not an image", hit.id)));
                };
                if !files.contains_key(&file) {
                    let path = layout.path(&file);
                    let set = formats::read_embeddings(&path).map_err(|e| CliError::format(&path, e))?;
                    files.insert(file.clone(), set.into_iter().map(|e| (e.id.clone(), e)).collect());
                }
                let face = files[&file].get(&record).ok_or_else(|| CliError::MissingInput {
                    path: layout.path(&file),
                    what: format!("record {record}"),
                })?;
                faces.push(face.clone());
            }
            Ok((build_template(info.id.clone(), &faces, &cfg.template)?, faces.len()))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut accepted = Vec::new();
    let mut status = Vec::new();
    for (outcome, photos) in outcomes {
        match outcome {
            TemplateOutcome::Accepted(t) => {
                status.push(TemplateStatus::Accepted { speaker: t.speaker.clone(), support: t.support, photos });
                accepted.push(Embedding { id: t.speaker.to_string(), values: t.vector.values });
            }
            TemplateOutcome::Rejected { speaker, largest } => {
                status.push(TemplateStatus::Rejected { speaker, largest, photos });
            }
        }
    }
    let path = layout.templates();
    crate::layout::ensure_dir(path.parent().expect("work dir"))?;
    formats::write_embeddings(&path, &accepted).map_err(|e| CliError::format(&path, e))?;
    write_json(&layout.template_report(), &status)?;
    Ok(status)
}

fn load_templates(layout: &Layout, stage: &'static str) -> CliResult<BTreeMap<SpeakerId, TemplateFace>> {
    need(&layout.template_report(), stage, "template faces", "template")?;
    let status: Vec<TemplateStatus> = read_json(&layout.template_report())?;
    let path = layout.templates();
    let vectors = formats::read_embeddings(&path).map_err(|e| CliError::format(&path, e))?;
    let by_id: BTreeMap<String, Embedding> = vectors.into_iter().map(|e| (e.id.clone(), e)).collect();
    let mut out = BTreeMap::new();
    for s in status {
        if let TemplateStatus::Accepted { speaker, support, .. } = s {
            let vector = by_id.get(speaker.as_str()).cloned().ok_or_else(|| {
                CliError::schema(&path, format!("no template vector for accepted speaker {speaker}"))
            })?;
            out.insert(speaker.clone(), TemplateFace { speaker, vector, support });
        }
    }
    Ok(out)
}

/// `shots`: video search for speakers with a template, then shot detection.
pub fn shots(layout: &Layout, cfg: &PipelineConfig, provider: &dyn MediaProvider) -> CliResult<BTreeMap<VideoId, Vec<Shot>>> {
    let mut manifest = layout.load_manifest()?;
    let templates = load_templates(layout, "shots")?;
    let mut videos = Vec::new();
    for info in manifest.speakers.iter().filter(|s| templates.contains_key(&s.id)) {
        let suffix = &cfg.provider.suffix(&info.nationality).video;
        for hit in provider.search(&info.name, suffix, MediaKind::Video, cfg.provider.videos)? {
            let Fetched::Video { id, frames, sync } = provider.fetch(&hit)? else {
                return Err(CliError::schema(layout.provider_index(), format!("{} is not a video", hit.id)));
            };
            videos.push(VideoEntry { id, speaker: info.id.clone(), frames, sync });
        }
    }
    videos.sort_by(|a, b| a.id.cmp(&b.id));
    videos.dedup_by(|a, b| a.id == b.id);
    manifest.videos = videos;
    manifest.validate().map_err(|e| CliError::schema(layout.manifest(), e))?;
    let detected = manifest
        .videos
        .par_iter()
        .map(|v| -> CliResult<(VideoId, Vec<Shot>)> {
            let path = layout.path(&v.frames);
            let frames = formats::read_frames(&path).map_err(|e| CliError::format(&path, e))?;
            let shots = detect_shots(&frames, &cfg.shots)?;
            write_json(&layout.shots(&v.id), &shots)?;
            Ok((v.id.clone(), shots))
        })
        .collect::<CliResult<BTreeMap<_, _>>>()?;
    layout.save_manifest(&manifest)?;
    Ok(detected)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoTracks {
    pub video: VideoId,
    pub speaker: SpeakerId,
    pub segments: Vec<TrackSegment>,
    pub cost: CostReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub videos: usize,
    pub tracked: CostReport,
    pub baseline: CostReport,
    pub cost_ratio: f64,
    /// Frame agreement with detect-every-frame, pooled over videos.
    pub frame_agreement: f64,
}

/// `track`: detect-then-track over every video, with the detect-every-frame
/// baseline for the cost report.
pub fn track(layout: &Layout, cfg: &PipelineConfig) -> CliResult<TrackingSummary> {
    let manifest = layout.load_manifest()?;
    let templates = load_templates(layout, "track")?;
    if manifest.videos.is_empty() {
        return Err(CliError::StageOrder { stage: "track", needs: "videos".into(), run: "shots" });
    }
    for v in &manifest.videos {
        need(&layout.shots(&v.id), "track", &format!("shots of {}", v.id), "shots")?;
    }
    let results = manifest
        .videos
        .par_iter()
        .map(|v| -> CliResult<(CostReport, CostReport, u64, u64)> {
            let template = templates.get(&v.speaker).ok_or_else(|| CliError::StageOrder {
                stage: "track",
                needs: format!("a template for {}", v.speaker),
                run: "template",
            })?;
            let path = layout.path(&v.frames);
            let frames = formats::read_frames(&path).map_err(|e| CliError::format(&path, e))?;
            let shots: Vec<Shot> = read_json(&layout.shots(&v.id))?;
            let (segments, cost) = run_tracker(&v.id, &frames, &shots, template, &cfg.tracker)?;
            let (baseline_present, baseline) = detect_every_frame(&frames, template, &cfg.tracker);
            let tracked_present = covered_frames(&frames, &segments);
            let (mut inter, mut union) = (0u64, 0u64);
            for (&a, &b) in tracked_present.iter().zip(&baseline_present) {
                inter += u64::from(a && b);
                union += u64::from(a || b);
            }
            let tracks = VideoTracks { video: v.id.clone(), speaker: v.speaker.clone(), segments, cost };
            write_json(&layout.tracks(&v.id), &tracks)?;
            Ok((tracks.cost, baseline, inter, union))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut tracked = CostReport::default();
    let mut baseline = CostReport::default();
    let (mut inter, mut union) = (0u64, 0u64);
    for (t, b, i, u) in &results {
        tracked = tracked.merge(t);
        baseline = baseline.merge(b);
        inter += i;
        union += u;
    }
    let summary = TrackingSummary {
        videos: results.len(),
        cost_ratio: if tracked.cost > 0.0 { baseline.cost / tracked.cost } else { 1.0 },
        frame_agreement: if union > 0 { inter as f64 / union as f64 } else { 1.0 },
        tracked,
        baseline,
    };
    write_json(&layout.report("tracking.json"), &summary)?;
    Ok(summary)
}

/// `segments`: speech segments from tracks and sync confidences. Replaces the
/// manifest's segment list.
pub fn segments(layout: &Layout, cfg: &PipelineConfig) -> CliResult<Vec<SegmentRecord>> {
    let mut manifest = layout.load_manifest()?;
    if manifest.videos.is_empty() {
        return Err(CliError::StageOrder { stage: "segments", needs: "videos".into(), run: "shots" });
    }
    for v in &manifest.videos {
        need(&layout.tracks(&v.id), "segments", &format!("tracks of {}", v.id), "track")?;
    }
    let per_video = manifest
        .videos
        .par_iter()
        .map(|v| -> CliResult<Vec<SegmentRecord>> {
            let tracks: VideoTracks = read_json(&layout.tracks(&v.id))?;
            let frames_path = layout.path(&v.frames);
            let frames = formats::read_frames(&frames_path).map_err(|e| CliError::format(&frames_path, e))?;
            let sync_path = layout.path(&v.sync);
            let trace = formats::read_sync(&sync_path, v.id.clone()).map_err(|e| CliError::format(&sync_path, e))?;
            let clock = FrameClock::from_stream(&frames)?;
            Ok(extract_segments(&v.speaker, &tracks.segments, &trace, &clock, &cfg.speaking, 0)?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    manifest.segments = per_video.into_iter().flatten().collect();
    manifest.validate().map_err(|e| CliError::schema(layout.manifest(), e))?;
    layout.save_manifest(&manifest)?;
    Ok(manifest.segments)
}

/// Embeddings of every manifest segment, in manifest order.
pub fn load_corpus(layout: &Layout, manifest: &CorpusManifest, stage: &'static str) -> CliResult<LabeledEmbeddingSet> {
    if manifest.segments.is_empty() {
        return Err(CliError::StageOrder { stage, needs: "segments".into(), run: "segments" });
    }
    if manifest.embedding_files.is_empty() {
        return Err(CliError::StageOrder { stage, needs: "segment embeddings".into(), run: "synth --phase embed" });
    }
    let mut by_id: BTreeMap<String, Vec<f32>> = BTreeMap::new();
    let mut dim = None;
    for rel in &manifest.embedding_files {
        let path = layout.path(rel);
        for e in formats::read_embeddings(&path).map_err(|e| CliError::format(&path, e))? {
            if *dim.get_or_insert(e.dim()) != e.dim() {
                return Err(CliError::format(&path, formats::FormatError::DimMismatch { expected: dim.unwrap_or(0), got: e.dim() }));
            }
            by_id.insert(e.id, e.values);
        }
    }
    let items = manifest
        .segments
        .iter()
        .map(|seg| {
            let utt = seg.utterance_id();
            let v = by_id.get(&utt.to_string()).ok_or_else(|| CliError::MissingInput {
                path: layout.path(&manifest.embedding_files[0]),
                what: format!("embedding for {utt}"),
            })?;
            Ok(LabeledVector { utt, vector: v.iter().map(|&x| f64::from(x)).collect() })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(LabeledEmbeddingSet::new(dim.unwrap_or(0), items)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSummary {
    pub train_speakers: usize,
    pub train_utterances: usize,
    pub lda_dim: usize,
    pub log_likelihood: Vec<f64>,
}

fn eval_params(cfg: &PipelineConfig) -> EvalParams {
    EvalParams { backend: cfg.backend, dcf: cfg.dcf, split_seed: cfg.seed }
}

/// `backend`: speaker split, then LDA + PLDA on the training side.
pub fn backend(layout: &Layout, cfg: &PipelineConfig) -> CliResult<BackendSummary> {
    let manifest = layout.load_manifest()?;
    let corpus = load_corpus(layout, &manifest, "backend")?;
    let split = split_speakers(&corpus.speakers(), cfg.seed)?;
    let train = corpus.filter(|it| split.is_train(it.speaker()));
    let (model, log_likelihood) = Backend::train(&train, &cfg.backend)?;
    let path = layout.backend();
    crate::layout::ensure_dir(path.parent().expect("work dir"))?;
    formats::write_backend(&path, &model).map_err(|e| CliError::format(&path, e))?;
    write_json(&layout.split(), &split)?;
    let summary = BackendSummary {
        train_speakers: split.train.len(),
        train_utterances: train.len(),
        lda_dim: model.lda.output_dim(),
        log_likelihood,
    };
    write_json(&layout.report("backend.json"), &summary)?;
    Ok(summary)
}

fn load_backend(layout: &Layout, stage: &'static str) -> CliResult<(Backend, SpeakerSplit)> {
    need(&layout.backend(), stage, "a trained backend", "backend")?;
    need(&layout.split(), stage, "the speaker split", "backend")?;
    let path = layout.backend();
    let model = formats::read_backend(&path).map_err(|e| CliError::format(&path, e))?;
    Ok((model, read_json(&layout.split())?))
}

/// Per-speaker distance matrices, computed in parallel.
fn speaker_distances(model: &Backend, corpus: &LabeledEmbeddingSet) -> CliResult<SpeakerDistances> {
    let groups: Vec<(SpeakerId, Vec<usize>)> =
        corpus.by_speaker().into_iter().map(|(s, idx)| (s.clone(), idx)).collect();
    let items = corpus.items();
    let speakers = groups
        .into_par_iter()
        .map(|(spk, idx)| {
            let utts: Vec<UtteranceId> = idx.iter().map(|&i| items[i].utt.clone()).collect();
            let d = if idx.len() >= 2 {
                let xs = idx.iter().map(|&i| model.preprocess(&items[i].vector)).collect::<Result<Vec<_>, _>>()?;
                Some(plda_distance_matrix(&model.plda, &xs)?)
            } else {
                None
            };
            Ok((spk, utts, d))
        })
        .collect::<Result<Vec<_>, voxcurate_core::Error>>()?;
    Ok(SpeakerDistances { speakers })
}

fn absolute_eps(cfg: &PipelineConfig, distances: &SpeakerDistances, eps: f64) -> f64 {
    if cfg.cleaning.relative {
        eps * distances.max_distance()
    } else {
        eps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningSummary {
    /// As configured; a fraction of `max_distance` when `relative`.
    pub eps: f64,
    pub relative: bool,
    pub eps_used: f64,
    pub max_distance: f64,
    pub min_pts: usize,
    pub mean_vsr: f64,
    pub kept: usize,
    pub total: usize,
    pub reports: Vec<CleaningReport>,
}

/// `clean`: keeps each speaker's largest PLDA cluster. Marks segments kept or
/// dropped in the manifest and writes the fine-tune list.
pub fn clean(layout: &Layout, cfg: &PipelineConfig) -> CliResult<CleaningSummary> {
    let mut manifest = layout.load_manifest()?;
    let (model, _) = load_backend(layout, "clean")?;
    let corpus = load_corpus(layout, &manifest, "clean")?;
    let distances = speaker_distances(&model, &corpus)?;
    let eps_used = absolute_eps(cfg, &distances, cfg.cleaning.eps);
    let reports = distances.clean(eps_used, cfg.cleaning.min_pts)?;
    let kept: BTreeSet<&UtteranceId> = reports.iter().flat_map(|r| &r.kept).collect();
    for seg in &mut manifest.segments {
        seg.source = if kept.contains(&seg.utterance_id()) {
            SegmentSource::DiarizationKept
        } else {
            SegmentSource::DiarizationDropped
        };
    }
    let mut list = String::new();
    for r in &reports {
        for u in &r.kept {
            list.push_str(&u.to_string());
            list.push('\n');
        }
    }
    write_bytes(&layout.finetune(), list.as_bytes())?;
    let summary = CleaningSummary {
        eps: cfg.cleaning.eps,
        relative: cfg.cleaning.relative,
        eps_used,
        max_distance: distances.max_distance(),
        min_pts: cfg.cleaning.min_pts,
        mean_vsr: mean_vsr(&reports),
        kept: kept.len(),
        total: corpus.len(),
        reports,
    };
    write_json(&layout.cleaning(), &summary)?;
    layout.save_manifest(&manifest)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSide {
    pub utterances: usize,
    pub report: VerificationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub before: EvalSide,
    /// Present once `clean` has run: backend retrained on the kept training
    /// segments, scored on the kept test segments.
    pub after: Option<EvalSide>,
}

fn write_trials(layout: &Layout, name: &str, trials: &[Trial]) -> CliResult<()> {
    let mut buf = Vec::new();
    formats::write_trials(&mut buf, trials).map_err(|e| CliError::io(layout.report(name), e))?;
    write_bytes(&layout.report(name), &buf)
}

/// `eval`: verification error before and, if cleaned, after cleaning.
pub fn eval(layout: &Layout, cfg: &PipelineConfig) -> CliResult<EvalSummary> {
    let manifest = layout.load_manifest()?;
    let (model, split) = load_backend(layout, "eval")?;
    let corpus = load_corpus(layout, &manifest, "eval")?;
    let params = eval_params(cfg);
    let before = evaluate_trained(model, &corpus, &split, &params)?;
    write_trials(layout, "trials_before.txt", &before.trials)?;
    let before = EvalSide { utterances: corpus.len(), report: before.report };
    let after = if manifest.segments.iter().any(|s| s.source != SegmentSource::Tracked) {
        let kept: BTreeSet<UtteranceId> = manifest
            .segments
            .iter()
            .filter(|s| s.source == SegmentSource::DiarizationKept)
            .map(SegmentRecord::utterance_id)
            .collect();
        let cleaned = corpus.filter(|it| kept.contains(&it.utt));
        let ev = evaluate_split(&cleaned, &split, &params)?;
        write_trials(layout, "trials_after.txt", &ev.trials)?;
        Some(EvalSide { utterances: cleaned.len(), report: ev.report })
    } else {
        None
    };
    let summary = EvalSummary { before, after };
    write_json(&layout.report("eval.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepLine {
    pub eps: f64,
    pub eps_used: f64,
    pub mean_vsr: f64,
    pub kept: usize,
    pub total: usize,
    pub report: VerificationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub relative: bool,
    pub max_distance: f64,
    pub min_pts: usize,
    pub before: VerificationReport,
    pub rows: Vec<SweepLine>,
}

/// `sweep`: cleaning and re-evaluation at every eps of the grid.
pub fn sweep(layout: &Layout, cfg: &PipelineConfig) -> CliResult<SweepSummary> {
    let manifest = layout.load_manifest()?;
    let (model, split) = load_backend(layout, "sweep")?;
    let corpus = load_corpus(layout, &manifest, "sweep")?;
    let params = eval_params(cfg);
    let distances = speaker_distances(&model, &corpus)?;
    let before = evaluate_trained(model, &corpus, &split, &params)?.report;
    let rows = cfg
        .cleaning
        .grid
        .par_iter()
        .map(|&eps| -> CliResult<SweepLine> {
            let eps_used = absolute_eps(cfg, &distances, eps);
            let reports = distances.clean(eps_used, cfg.cleaning.min_pts)?;
            let cleaned = apply_cleaning(&corpus, &reports);
            let report = evaluate_split(&cleaned, &split, &params)?.report;
            Ok(SweepLine { eps, eps_used, mean_vsr: mean_vsr(&reports), kept: cleaned.len(), total: corpus.len(), report })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let summary = SweepSummary {
        relative: cfg.cleaning.relative,
        max_distance: distances.max_distance(),
        min_pts: cfg.cleaning.min_pts,
        before,
        rows,
    };
    write_json(&layout.report("sweep.json"), &summary)?;
    Ok(summary)
}
