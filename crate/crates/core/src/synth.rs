//! Generative oracles: Gaussian speaker worlds, contamination injection and
//! scripted frame streams with known ground truth.
//!
//! Everything is driven by explicit seeds through ChaCha8, so a generator
//! called twice with the same arguments returns bit-identical output.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::backend::{LabeledEmbeddingSet, LabeledVector};
use crate::linalg::{self, Matrix};
use crate::model::{Embedding, SpeakerId, UtteranceId, VideoId};
use crate::shots::FrameFeature;
use crate::speaking::SyncTrace;
use crate::tracking::{BBox, FaceObservation};
use crate::{Error, Result};

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = linalg::norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

/// Haar-ish random orthogonal matrix by Gram-Schmidt on Gaussian columns.
fn random_rotation(rng: &mut ChaCha8Rng, d: usize) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v = gaussian(rng, d);
        for _ in 0..2 {
            for c in &cols {
                let p = linalg::dot(&v, c);
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = linalg::norm(&v);
        if n > 1e-8 {
            cols.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    Matrix::from_rows(&cols).transpose()
}

/// Eigenvalues `scale * decay^k`, k = 0..dim.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spectrum {
    pub scale: f64,
    pub decay: f64,
}

impl Spectrum {
    pub fn isotropic(scale: f64) -> Self {
        Self { scale, decay: 1.0 }
    }

    pub fn values(&self, dim: usize) -> Vec<f64> {
        (0..dim).map(|k| self.scale * libm::pow(self.decay, k as f64)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub n_speakers: usize,
    pub dim: usize,
    pub between: Spectrum,
    pub within: Spectrum,
    /// Identities outside the corpus, used as contamination sources.
    pub n_distractors: usize,
    pub videos_per_speaker: usize,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            n_speakers: 50,
            dim: 32,
            between: Spectrum { scale: 4.0, decay: 0.9 },
            within: Spectrum::isotropic(0.5),
            n_distractors: 50,
            videos_per_speaker: 4,
            seed: 0,
        }
    }
}

/// Gaussian two-covariance world: speaker means `m ~ N(0, B*)` and
/// utterances `x = m + N(0, W*)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerWorld {
    pub spec: WorldSpec,
    pub between: Matrix,
    pub within: Matrix,
    /// `W*^{1/2}`, used to draw within-speaker noise.
    within_factor: Matrix,
    pub speakers: Vec<SpeakerId>,
    pub means: Vec<Vec<f64>>,
    pub distractors: Vec<SpeakerId>,
    pub distractor_means: Vec<Vec<f64>>,
}

fn covariance(rng: &mut ChaCha8Rng, spectrum: &Spectrum, d: usize) -> Result<(Matrix, Matrix)> {
    let values = spectrum.values(d);
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidParameter(format!("spectrum {spectrum:?} is not PSD")));
    }
    let q = random_rotation(rng, d);
    let sqrt_diag = Matrix::from_diagonal(&values.iter().map(|v| libm::sqrt(*v)).collect::<Vec<_>>());
    let factor = q.matmul(&sqrt_diag);
    let cov = factor.matmul(&factor.transpose());
    Ok((cov, factor))
}

pub fn speaker_id(k: usize) -> SpeakerId {
    SpeakerId::new(format!("spk{k:04}")).expect("valid id")
}

pub fn video_id(speaker: &SpeakerId, k: usize) -> VideoId {
    VideoId::new(format!("{speaker}_v{k:02}")).expect("valid id")
}

impl SpeakerWorld {
    pub fn new(spec: WorldSpec) -> Result<Self> {
        if spec.dim == 0 || spec.videos_per_speaker == 0 {
            return Err(Error::InvalidParameter("world needs dim > 0 and videos_per_speaker > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (between, between_factor) = covariance(&mut rng, &spec.between, spec.dim)?;
        let (within, within_factor) = covariance(&mut rng, &spec.within, spec.dim)?;
        let draw_mean = |rng: &mut ChaCha8Rng| between_factor.mul_vec(&gaussian(rng, spec.dim));
        let means = (0..spec.n_speakers).map(|_| draw_mean(&mut rng)).collect();
        let distractor_means = (0..spec.n_distractors).map(|_| draw_mean(&mut rng)).collect();
        Ok(Self {
            spec,
            between,
            within,
            within_factor,
            speakers: (0..spec.n_speakers).map(speaker_id).collect(),
            means,
            distractors: (0..spec.n_distractors)
                .map(|k| SpeakerId::new(format!("dst{k:04}")).expect("valid id"))
                .collect(),
            distractor_means,
        })
    }

    /// One utterance of an identity with the given mean.
    pub fn sample(&self, mean: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let noise = self.within_factor.mul_vec(&gaussian(rng, self.spec.dim));
        mean.iter().zip(noise).map(|(m, n)| m + n).collect()
    }
}

/// True source identity of every utterance whose claimed speaker is wrong.
/// Utterances absent from `foreign` are genuine.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusTruth {
    pub foreign: BTreeMap<UtteranceId, String>,
}

impl CorpusTruth {
    pub fn is_genuine(&self, utt: &UtteranceId) -> bool {
        !self.foreign.contains_key(utt)
    }
}

/// `utts_per_speaker` utterances per speaker, spread round-robin over the
/// speaker's videos.
pub fn gen_embeddings(world: &SpeakerWorld, utts_per_speaker: usize, seed: u64) -> Result<LabeledEmbeddingSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(world.speakers.len() * utts_per_speaker);
    for (spk, mean) in world.speakers.iter().zip(&world.means) {
        for i in 0..utts_per_speaker {
            let video = video_id(spk, i % world.spec.videos_per_speaker);
            items.push(LabeledVector {
                utt: UtteranceId::new(spk.clone(), video, i as u32),
                vector: world.sample(mean, &mut rng),
            });
        }
    }
    LabeledEmbeddingSet::new(world.spec.dim, items)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub victim: SpeakerId,
    pub source: SpeakerId,
    pub vector: Vec<f64>,
}

/// Foreign utterances to relabel as victims. Each speaker with `n` genuine
/// utterances receives `round(n c / (1 - c))`, so the foreign share of the
/// contaminated speaker is `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationPlan {
    pub rate: f64,
    pub injections: Vec<Injection>,
}

impl ContaminationPlan {
    /// Draws foreign utterances from `sources_per_victim` distractors per
    /// victim, split as evenly as possible.
    pub fn draw(
        world: &SpeakerWorld,
        corpus: &LabeledEmbeddingSet,
        rate: f64,
        sources_per_victim: usize,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidParameter(format!("contamination rate {rate} outside [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut injections = Vec::new();
        for (victim, idx) in corpus.by_speaker() {
            let k = libm::round(idx.len() as f64 * rate / (1.0 - rate)) as usize;
            if k == 0 {
                continue;
            }
            if world.distractors.is_empty() || sources_per_victim == 0 {
                return Err(Error::InsufficientData(format!(
                    "{k} foreign utterances requested for {victim} but the distractor pool is empty"
                )));
            }
            let sources: Vec<usize> =
                (0..sources_per_victim).map(|_| rng.random_range(0..world.distractors.len())).collect();
            for j in 0..k {
                let s = sources[j % sources.len()];
                injections.push(Injection {
                    victim: victim.clone(),
                    source: world.distractors[s].clone(),
                    vector: world.sample(&world.distractor_means[s], &mut rng),
                });
            }
        }
        Ok(Self { rate, injections })
    }
}

/// Appends the plan's utterances under their victims' labels. New ids reuse
/// the victim's videos and continue numbering after its highest index.
pub fn inject_contamination(
    corpus: &LabeledEmbeddingSet,
    plan: &ContaminationPlan,
) -> Result<(LabeledEmbeddingSet, CorpusTruth)> {
    let mut next: BTreeMap<SpeakerId, (u32, Vec<VideoId>)> = BTreeMap::new();
    for it in corpus.items() {
        let e = next.entry(it.utt.speaker.clone()).or_insert((0, Vec::new()));
        e.0 = e.0.max(it.utt.index + 1);
        if !e.1.contains(&it.utt.video) {
            e.1.push(it.utt.video.clone());
        }
    }
    let mut items = corpus.items().to_vec();
    let mut truth = CorpusTruth::default();
    for inj in &plan.injections {
        let Some((idx, videos)) = next.get_mut(&inj.victim) else {
            return Err(Error::InvalidParameter(format!("victim {} is not in the corpus", inj.victim)));
        };
        let video = videos[*idx as usize % videos.len()].clone();
        let utt = UtteranceId::new(inj.victim.clone(), video, *idx);
        *idx += 1;
        truth.foreign.insert(utt.clone(), String::from(inj.source.as_str()));
        items.push(LabeledVector { utt, vector: inj.vector.clone() });
    }
    Ok((LabeledEmbeddingSet::new(corpus.dim(), items)?, truth))
}

/// Fraction of `utts` that are genuine. An empty set counts as pure.
pub fn purity<'a>(utts: impl IntoIterator<Item = &'a UtteranceId>, truth: &CorpusTruth) -> f64 {
    let (mut good, mut total) = (0usize, 0usize);
    for u in utts {
        total += 1;
        good += usize::from(truth.is_genuine(u));
    }
    if total == 0 {
        1.0
    } else {
        good as f64 / total as f64
    }
}

/// Face photos of one identity as a search engine might return them: noisy
/// copies of `face` plus unrelated outliers, all unit length.
pub fn gen_face_photos(face: &[f64], n_good: usize, n_outliers: usize, seed: u64) -> Result<Vec<Embedding>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = face.len();
    let face = unit(face.to_vec());
    let sigma = 0.05 / libm::sqrt(d as f64);
    let mut out = Vec::with_capacity(n_good + n_outliers);
    for i in 0..(n_good + n_outliers) {
        let v = if i < n_good {
            unit(face.iter().zip(gaussian(&mut rng, d)).map(|(f, z)| f + sigma * z).collect())
        } else {
            unit(gaussian(&mut rng, d))
        };
        out.push(Embedding::new(format!("photo{i:03}"), v.into_iter().map(|x| x as f32).collect())?);
    }
    Ok(out)
}

/// Inclusive frame range.
pub type FrameRange = (u32, u32);

/// Shot cuts, POI presence and identity switches for one scripted video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamScript {
    pub video: VideoId,
    pub n_frames: u32,
    pub frame_ms: u32,
    pub bins: usize,
    pub emb_dim: usize,
    /// Frames that start a new shot, strictly increasing, in `1..n_frames`.
    pub cuts: Vec<u32>,
    /// Disjoint, ordered ranges where a tracked face is on screen.
    pub presence: Vec<FrameRange>,
    /// Share of each presence range, taken from its end, during which the
    /// tracked face belongs to someone else (same box, same appearance).
    pub switch_rate: f64,
    /// Explicit switch frames. A presence range containing one shows the
    /// foreign face from that frame to its end, overriding `switch_rate`.
    #[serde(default)]
    pub switches: Vec<u32>,
    /// Ranges where the visible face is talking. `None` means whenever present.
    pub speaking: Option<Vec<FrameRange>>,
    /// Adds an unrelated face elsewhere in every frame.
    pub bystander: bool,
    /// Upper bound on the L1 distance between consecutive frames of a shot.
    pub noise_l1: f64,
    pub seed: u64,
    /// Face of the POI. Drawn from `seed` when absent, so videos of one
    /// speaker share a face only if it is given.
    #[serde(default)]
    pub face: Option<Vec<f64>>,
}

impl StreamScript {
    /// A 25 fps script with no cuts, no presence and no switches.
    pub fn new(video: VideoId, n_frames: u32, bins: usize, emb_dim: usize) -> Self {
        Self {
            video,
            n_frames,
            frame_ms: 40,
            bins,
            emb_dim,
            cuts: Vec::new(),
            presence: Vec::new(),
            switch_rate: 0.0,
            switches: Vec::new(),
            speaking: None,
            bystander: false,
            noise_l1: 0.05,
            seed: 0,
            face: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_frames == 0 || self.frame_ms == 0 {
            return bad("script needs frames and a positive frame duration".into());
        }
        if self.bins < 2 || !self.bins.is_multiple_of(2) || self.emb_dim < 2 {
            return bad(format!("bins {} must be even and >= 2, emb_dim {} >= 2", self.bins, self.emb_dim));
        }
        if self.cuts.windows(2).any(|w| w[1] <= w[0])
            || self.cuts.first().is_some_and(|&c| c == 0)
            || self.cuts.last().is_some_and(|&c| c >= self.n_frames)
        {
            return bad(format!("cuts {:?} overlap or fall outside 1..{}", self.cuts, self.n_frames));
        }
        let ranges_ok = |r: &[FrameRange]| {
            r.iter().all(|&(a, b)| a <= b && b < self.n_frames) && r.windows(2).all(|w| w[1].0 > w[0].1)
        };
        if !ranges_ok(&self.presence) || !self.speaking.as_deref().is_none_or(ranges_ok) {
            return bad("presence and speaking ranges must be ordered, disjoint and inside the stream".into());
        }
        if self.switches.iter().any(|&s| !self.presence.iter().any(|&(a, b)| a <= s && s <= b)) {
            return bad(format!("switches {:?} must fall inside presence ranges", self.switches));
        }
        if self.face.as_ref().is_some_and(|f| f.len() != self.emb_dim || !(linalg::norm(f) > 0.0)) {
            return bad(format!("face must be a non-zero vector of length {}", self.emb_dim));
        }
        if !(0.0..1.0).contains(&self.switch_rate) || !(0.0..=2.0).contains(&self.noise_l1) {
            return bad(format!("switch_rate {} / noise_l1 {}", self.switch_rate, self.noise_l1));
        }
        Ok(())
    }
}

/// Ground truth for a generated stream, written next to it as a sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamTruth {
    pub video: VideoId,
    pub cuts: Vec<u32>,
    /// Ranges where the POI itself is on screen.
    pub poi: Vec<FrameRange>,
    /// Ranges where a switched-in foreign face is tracked.
    pub foreign: Vec<FrameRange>,
    pub speaking: Vec<FrameRange>,
    pub poi_face: Vec<f64>,
}

impl StreamTruth {
    pub fn poi_frames(&self, n: usize) -> Vec<bool> {
        mask(&self.poi, n)
    }

    pub fn foreign_frames(&self, n: usize) -> Vec<bool> {
        mask(&self.foreign, n)
    }
}

pub fn mask(ranges: &[FrameRange], n: usize) -> Vec<bool> {
    let mut m = vec![false; n];
    for &(a, b) in ranges {
        for x in m.iter_mut().take((b as usize + 1).min(n)).skip(a as usize) {
            *x = true;
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedStream {
    pub frames: Vec<FrameFeature>,
    pub sync: SyncTrace,
    pub truth: StreamTruth,
}

/// Histogram on one half of the bins, so consecutive shots (alternating
/// halves) are at L1 distance 2.
fn shot_histogram(rng: &mut ChaCha8Rng, bins: usize, half: usize) -> Vec<f64> {
    let h = bins / 2;
    let mut v = vec![0.0; bins];
    for x in &mut v[half * h..(half + 1) * h] {
        *x = 0.5 + rng.random::<f64>();
    }
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn normalized_f32(v: &[f64]) -> Vec<f32> {
    let f: Vec<f32> = v.iter().map(|&x| x as f32).collect();
    let s: f32 = f.iter().sum();
    f.into_iter().map(|x| x / s).collect()
}

fn face_embedding(rng: &mut ChaCha8Rng, center: &[f64], sigma: f64) -> Vec<f32> {
    let v = unit(center.iter().zip(gaussian(rng, center.len())).map(|(c, z)| c + sigma * z).collect());
    v.into_iter().map(|x| x as f32).collect()
}

/// A unit vector orthogonal to `u`.
fn orthogonal_unit(rng: &mut ChaCha8Rng, u: &[f64]) -> Vec<f64> {
    let mut v = gaussian(rng, u.len());
    let p = linalg::dot(&v, u);
    v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
    unit(v)
}

/// Renders a script into frames, a sync trace and the ground truth.
///
/// POI faces have cosine similarity about 0.99 to the returned `poi_face`,
/// foreign and bystander faces are orthogonal to it up to small noise.
pub fn gen_frame_stream(script: &StreamScript) -> Result<GeneratedStream> {
    script.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
    let n = script.n_frames as usize;
    let poi_face = match &script.face {
        Some(f) => unit(f.clone()),
        None => unit(gaussian(&mut rng, script.emb_dim)),
    };
    let foreign_face = orthogonal_unit(&mut rng, &poi_face);
    let bystander_face = orthogonal_unit(&mut rng, &poi_face);
    let sigma = 0.1 / libm::sqrt(script.emb_dim as f64);

    let mut poi = Vec::new();
    let mut foreign = Vec::new();
    for &(a, b) in &script.presence {
        let len = b - a + 1;
        let switched = match script.switches.iter().find(|&&s| a <= s && s <= b) {
            Some(&s) => b - s + 1,
            None => libm::round(f64::from(len) * script.switch_rate) as u32,
        };
        if switched < len {
            poi.push((a, b - switched));
        }
        if switched > 0 {
            foreign.push((b - switched + 1, b));
        }
    }
    let poi_mask = mask(&poi, n);
    let foreign_mask = mask(&foreign, n);
    let speaking = script.speaking.clone().unwrap_or_else(|| script.presence.clone());
    let speaking_mask = mask(&speaking, n);

    let patch_base = shot_histogram(&mut rng, script.bins, 0);
    let bystander_base = shot_histogram(&mut rng, script.bins, 1);
    // Small appearance changes from frame to frame, far below the drift limit.
    let patch = |rng: &mut ChaCha8Rng, base: &[f64], half: usize| {
        let jitter = shot_histogram(rng, script.bins, half);
        normalized_f32(&base.iter().zip(&jitter).map(|(b, j)| 0.98 * b + 0.02 * j).collect::<Vec<_>>())
    };
    let face_box = BBox { x: 100, y: 80, w: 120, h: 120 };
    let bystander_box = BBox { x: 400, y: 80, w: 100, h: 100 };

    let mut frames = Vec::with_capacity(n);
    let mut confidence = Vec::with_capacity(n);
    let mut cuts = script.cuts.iter().peekable();
    let mut shot = 0usize;
    let mut base = shot_histogram(&mut rng, script.bins, 0);
    let a = script.noise_l1 / 2.0;
    for i in 0..n {
        if cuts.next_if(|&&c| c as usize == i).is_some() {
            shot += 1;
            base = shot_histogram(&mut rng, script.bins, shot % 2);
        }
        // Mixing a fraction a of a random same-support histogram keeps
        // consecutive frames within L1 distance 2a of each other.
        let jitter = shot_histogram(&mut rng, script.bins, shot % 2);
        let hist: Vec<f64> = base.iter().zip(&jitter).map(|(b, j)| (1.0 - a) * b + a * j).collect();

        let mut faces = Vec::new();
        let visible = poi_mask[i] || foreign_mask[i];
        if visible {
            let center = if poi_mask[i] { &poi_face } else { &foreign_face };
            faces.push(FaceObservation {
                bbox: face_box,
                embedding: face_embedding(&mut rng, center, sigma),
                patch_hist: patch(&mut rng, &patch_base, 0),
            });
        }
        if script.bystander {
            faces.push(FaceObservation {
                bbox: bystander_box,
                embedding: face_embedding(&mut rng, &bystander_face, sigma),
                patch_hist: patch(&mut rng, &bystander_base, 1),
            });
        }
        let talking = visible && speaking_mask[i];
        let c = if talking { 0.8 } else { 0.1 } + 0.05 * (rng.random::<f64>() - 0.5);
        confidence.push(c as f32);
        frames.push(FrameFeature {
            index: i as u32,
            t_ms: i as u32 * script.frame_ms,
            hsv_hist: normalized_f32(&hist),
            detections: Some(faces),
        });
    }
    Ok(GeneratedStream {
        frames,
        sync: SyncTrace::new(script.video.clone(), confidence)?,
        truth: StreamTruth { video: script.video.clone(), cuts: script.cuts.clone(), poi, foreign, speaking, poi_face },
    })
}
