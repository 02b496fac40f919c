//! `synth`: writes a synthetic corpus root that the other stages can run on
//! offline, and later attaches x-vectors to the segments they found.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use voxcurate_core::model::{CorpusManifest, Embedding, SpeakerId, SpeakerInfo, VideoId};
use voxcurate_core::synth::{
    gen_face_photos, gen_frame_stream, speaker_id, video_id, CorpusTruth, FrameRange, SpeakerWorld, StreamScript,
    StreamTruth, WorldSpec,
};

use crate::config::{PipelineConfig, SynthConfig};
use crate::error::{CliError, CliResult};
use crate::formats;
use crate::layout::{read_json, write_json, Layout};
use crate::provider::{image_id, query, Candidate, MediaKind, SearchIndex};

/// Defaults the synthetic corpus is tuned for: identity switches are left
/// uncorrected so they contaminate the segments, and eps is relative.
pub fn synthetic_defaults() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.tracker.verify_interval = None;
    cfg.cleaning.relative = true;
    cfg.cleaning.eps = 0.1;
    cfg.cleaning.grid = vec![0.02, 0.05, 0.1, 0.2, 0.5, 1.0];
    cfg
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derive(seed: u64, tag: u64, k: u64) -> u64 {
    mix(mix(seed ^ mix(tag)) ^ k)
}

const TAG_FACE: u64 = 1;
const TAG_PHOTOS: u64 = 2;
const TAG_STREAM: u64 = 3;
const TAG_SWITCH: u64 = 4;
const TAG_SOURCES: u64 = 5;
const TAG_VOICE: u64 = 6;

pub fn voice_world(cfg: &PipelineConfig) -> CliResult<SpeakerWorld> {
    let s = &cfg.synth;
    Ok(SpeakerWorld::new(WorldSpec {
        n_speakers: s.n_speakers,
        dim: s.voice_dim,
        between: s.between,
        within: s.within,
        n_distractors: s.n_speakers.max(s.sources_per_speaker),
        videos_per_speaker: s.videos_per_speaker,
        seed: cfg.seed,
    })?)
}

fn speaker_face(seed: u64, k: usize, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, TAG_FACE, k as u64));
    let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Per video: shots of `turns_per_shot` speaking turns separated by pauses.
/// A shot with `f` switched turns shows someone else from the pause before
/// its last `f` turns.
pub fn video_script(s: &SynthConfig, video: VideoId, face: Vec<f64>, seed: u64) -> StreamScript {
    let shot = s.shot_frames();
    let n = s.shots_per_video * shot;
    let mut script = StreamScript::new(video, n, s.bins, s.face_dim);
    script.frame_ms = s.frame_ms;
    script.seed = seed;
    script.face = Some(face);
    script.cuts = (1..s.shots_per_video).map(|k| k * shot).collect();
    let half = s.gap_frames / 2;
    let turn_start = |s0: u32, t: u32| s0 + s.gap_frames + t * (s.turn_frames + s.gap_frames);
    let mut speaking = Vec::new();
    for k in 0..s.shots_per_video {
        let s0 = k * shot;
        script.presence.push((s0 + half, s0 + shot - half - 1));
        speaking.extend((0..s.turns_per_shot).map(|t| (turn_start(s0, t), turn_start(s0, t) + s.turn_frames - 1)));
    }
    script.speaking = Some(speaking);

    let total = s.shots_per_video * s.turns_per_shot;
    let mut foreign = (s.switch_rate * f64::from(total)).round() as u32;
    let mut per_shot = vec![0u32; s.shots_per_video as usize];
    let mut order: Vec<usize> = (0..per_shot.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(seed, TAG_SWITCH, 0)));
    // One foreign turn at a time, never a whole shot, so the tracker always
    // acquires the real POI first.
    while foreign > 0 && per_shot.iter().any(|&f| f + 1 < s.turns_per_shot) {
        for &i in &order {
            if foreign > 0 && per_shot[i] + 1 < s.turns_per_shot {
                per_shot[i] += 1;
                foreign -= 1;
            }
        }
    }
    script.switches = per_shot
        .iter()
        .enumerate()
        .filter(|(_, &f)| f > 0)
        .map(|(k, &f)| turn_start(k as u32 * shot, s.turns_per_shot - f) - half)
        .collect();
    script.bystander = true;
    script
}

fn speaker_name(k: usize) -> String {
    format!("Speaker {k:04}")
}

/// Media phase: photos, videos, search index, manifest and config.
pub fn synth_media(layout: &Layout, cfg: &PipelineConfig) -> CliResult<CorpusManifest> {
    let s = &cfg.synth;
    let speakers: Vec<SpeakerInfo> = (0..s.n_speakers)
        .map(|k| SpeakerInfo {
            id: speaker_id(k),
            name: speaker_name(k),
            nationality: s.nationalities[k % s.nationalities.len()].clone(),
        })
        .collect();

    let weak_from = s.n_speakers - s.weak_speakers;
    speakers.par_iter().enumerate().try_for_each(|(k, info)| -> CliResult<()> {
        let face = speaker_face(cfg.seed, k, s.face_dim);
        let good = if k >= weak_from { cfg.template.min_support.saturating_sub(1) } else { s.photos - s.photo_outliers.min(s.photos) };
        let photos = gen_face_photos(&face, good, s.photos - good.min(s.photos), derive(cfg.seed, TAG_PHOTOS, k as u64))?;
        let path = layout.path(Layout::photos_rel(&info.id));
        crate::layout::ensure_dir(path.parent().expect("photos dir"))?;
        formats::write_embeddings(&path, &photos).map_err(|e| CliError::format(&path, e))?;
        (0..s.videos_per_speaker).into_par_iter().try_for_each(|v| {
            let vid = video_id(&info.id, v);
            let seed = derive(cfg.seed, TAG_STREAM, (k * s.videos_per_speaker + v) as u64);
            let g = gen_frame_stream(&video_script(s, vid.clone(), face.clone(), seed))?;
            let frames = layout.path(Layout::frames_rel(&vid));
            crate::layout::ensure_dir(frames.parent().expect("videos dir"))?;
            formats::write_frames(&frames, &g.frames).map_err(|e| CliError::format(&frames, e))?;
            let sync = layout.path(Layout::sync_rel(&vid));
            formats::write_sync(&sync, &g.sync).map_err(|e| CliError::format(&sync, e))?;
            write_json(&layout.video_truth(&vid), &g.truth)
        })
    })?;

    let mut index = SearchIndex::new();
    for (k, info) in speakers.iter().enumerate() {
        let suffix = cfg.provider.suffix(&info.nationality);
        let photos = (0..s.photos)
            .map(|i| Candidate { id: image_id(&info.id, &format!("photo{i:03}")), kind: MediaKind::Image })
            .collect();
        index.insert(query(&info.name, &suffix.photo), photos);
        let videos = (0..s.videos_per_speaker)
            .map(|v| Candidate { id: video_id(&speaker_id(k), v).to_string(), kind: MediaKind::Video })
            .collect();
        index.insert(query(&info.name, &suffix.video), videos);
    }
    write_json(&layout.provider_index(), &index)?;

    let manifest = CorpusManifest { speakers, ..CorpusManifest::default() };
    layout.save_manifest(&manifest)?;
    crate::layout::write_bytes(&layout.config(), cfg.to_json().as_bytes())?;
    Ok(manifest)
}

/// Voice attached to each synthetic segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedSummary {
    pub utterances: usize,
    pub foreign: usize,
}

fn overlap(ranges: &[FrameRange], lo: u32, hi: u32) -> u64 {
    ranges.iter().map(|&(a, b)| u64::from(hi.min(b + 1).saturating_sub(lo.max(a)))).sum()
}

/// Embedding phase: one x-vector per manifest segment. A segment whose
/// frames mostly show the switched-in face gets that person's voice.
pub fn synth_embed(layout: &Layout, cfg: &PipelineConfig) -> CliResult<EmbedSummary> {
    let mut manifest = layout.load_manifest()?;
    if manifest.segments.is_empty() {
        return Err(CliError::StageOrder { stage: "synth --phase embed", needs: "segments".into(), run: "segments" });
    }
    let world = voice_world(cfg)?;
    let spk_index: BTreeMap<&SpeakerId, usize> = world.speakers.iter().enumerate().map(|(k, s)| (s, k)).collect();
    let mut videos_of: BTreeMap<&SpeakerId, Vec<&VideoId>> = BTreeMap::new();
    for v in &manifest.videos {
        videos_of.entry(&v.speaker).or_default().push(&v.id);
    }
    let mut truths: BTreeMap<VideoId, StreamTruth> = BTreeMap::new();
    for v in &manifest.videos {
        truths.insert(v.id.clone(), read_json(&layout.video_truth(&v.id))?);
    }
    // Each speaker is contaminated by a few fixed outsiders, one per video.
    let sources: Vec<Vec<usize>> = (0..world.speakers.len())
        .map(|k| {
            let mut pool: Vec<usize> = (0..world.distractors.len()).collect();
            pool.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(cfg.seed, TAG_SOURCES, k as u64)));
            pool.truncate(cfg.synth.sources_per_speaker);
            pool
        })
        .collect();
    let frame_ms = u64::from(cfg.synth.frame_ms);
    let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, TAG_VOICE, 0));
    let mut out = Vec::with_capacity(manifest.segments.len());
    let mut truth = CorpusTruth::default();
    for seg in &manifest.segments {
        let utt = seg.utterance_id();
        let unknown = || CliError::schema(layout.manifest(), format!("segment {utt} is not from the synthetic world"));
        let &k = spk_index.get(&seg.speaker).ok_or_else(unknown)?;
        let st = truths.get(&seg.video).ok_or_else(unknown)?;
        let lo = (seg.start_ms / frame_ms) as u32;
        let hi = seg.end_ms.div_ceil(frame_ms) as u32;
        let mean = if overlap(&st.foreign, lo, hi) > overlap(&st.poi, lo, hi) {
            let v = videos_of[&seg.speaker].iter().position(|&v| *v == seg.video).unwrap_or(0);
            let src = sources[k][v % sources[k].len()];
            truth.foreign.insert(utt.clone(), world.distractors[src].to_string());
            &world.distractor_means[src]
        } else {
            &world.means[k]
        };
        let x = world.sample(mean, &mut rng);
        out.push(Embedding::new(utt.to_string(), x.into_iter().map(|v| v as f32).collect())?);
    }
    let path = layout.path(Layout::EMBEDDINGS_REL);
    crate::layout::ensure_dir(path.parent().expect("embeddings dir"))?;
    formats::write_embeddings(&path, &out).map_err(|e| CliError::format(&path, e))?;
    write_json(&layout.embedding_truth(), &truth)?;
    if !manifest.embedding_files.iter().any(|f| f == Layout::EMBEDDINGS_REL) {
        manifest.embedding_files.push(Layout::EMBEDDINGS_REL.to_owned());
    }
    layout.save_manifest(&manifest)?;
    Ok(EmbedSummary { utterances: out.len(), foreign: truth.foreign.len() })
}
