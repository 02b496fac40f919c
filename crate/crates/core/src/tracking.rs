//! Detect-once-then-track scheduling for a single person of interest.
//!
//! While idle the scheduler pays for face detection on every frame and
//! compares each face to the template. Once a face verifies, it follows that
//! face with a cheap histogram tracker until a shot cut, histogram drift or a
//! failed periodic re-verification ends the track. A [`CostModel`] prices
//! each operation so the policy can be compared against detecting on every
//! frame.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::clustering::TemplateFace;
use crate::linalg;
use crate::model::VideoId;
use crate::shots::{FrameFeature, Shot};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        if x1 <= x0 || y1 <= y0 {
            return 0.0;
        }
        let inter = u64::from(x1 - x0) * u64::from(y1 - y0);
        let union = self.area() + other.area() - inter;
        inter as f64 / union as f64
    }
}

/// A detected face: where it is, who it looks like and what it looks like.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceObservation {
    pub bbox: BBox,
    pub embedding: Vec<f32>,
    pub patch_hist: Vec<f32>,
}

/// Bhattacharyya distance between two histograms, in `[0, 1]`.
pub fn bhattacharyya(a: &[f32], b: &[f32]) -> f64 {
    let sa: f64 = a.iter().map(|&v| f64::from(v)).sum();
    let sb: f64 = b.iter().map(|&v| f64::from(v)).sum();
    if sa <= 0.0 || sb <= 0.0 {
        return 1.0;
    }
    let bc: f64 = a.iter().zip(b).map(|(&x, &y)| libm::sqrt(f64::from(x) * f64::from(y))).sum();
    libm::sqrt((1.0 - bc / libm::sqrt(sa * sb)).max(0.0))
}

fn cosine_f32(a: &[f32], b: &[f64]) -> f64 {
    let a: Vec<f64> = a.iter().map(|&v| f64::from(v)).collect();
    linalg::cosine(&a, b)
}

/// Abstract cost units per operation on one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    pub c_detect: f64,
    pub c_track: f64,
    pub c_verify: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { c_detect: 8.0, c_track: 1.0, c_verify: 2.0 }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c_detect", self.c_detect), ("c_track", self.c_track), ("c_verify", self.c_verify)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Whether tracking is cheaper than detecting at all.
    pub fn tracking_pays_off(&self) -> bool {
        self.c_detect > self.c_track
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// Minimum cosine similarity to the template for a face to count as the POI.
    pub theta_verify: f64,
    /// Maximum Bhattacharyya distance between the tracked patch and the
    /// histogram captured at acquisition.
    pub drift: f64,
    /// Re-verify the tracked face every this many tracked frames; `None`
    /// disables re-verification.
    pub verify_interval: Option<u32>,
    pub cost: CostModel,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self { theta_verify: 0.6, drift: 0.35, verify_interval: Some(25), cost: CostModel::default() }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        self.cost.validate()?;
        if !(-1.0..=1.0).contains(&self.theta_verify) {
            return Err(Error::InvalidParameter(format!("theta_verify {}", self.theta_verify)));
        }
        if !self.drift.is_finite() || self.drift < 0.0 {
            return Err(Error::InvalidParameter(format!("drift {}", self.drift)));
        }
        if self.verify_interval == Some(0) {
            return Err(Error::InvalidParameter("verify_interval must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrackStatus {
    Idle,
    Tracking {
        ref_hist: Vec<f32>,
        last_bbox: BBox,
        frames_since_verify: u32,
        /// Stream position where the track started.
        start: usize,
        similarities: Vec<f64>,
    },
}

/// Frames over which the POI was followed. Frame numbers are inclusive and
/// `end_ms` is the end of the last frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSegment {
    pub video: VideoId,
    pub start_frame: u32,
    pub end_frame: u32,
    pub start_ms: u32,
    pub end_ms: u32,
    pub mean_similarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostReport {
    pub frames: u64,
    pub detections: u64,
    pub track_steps: u64,
    pub verifications: u64,
    pub cost: f64,
}

impl CostReport {
    pub fn merge(&self, other: &CostReport) -> CostReport {
        CostReport {
            frames: self.frames + other.frames,
            detections: self.detections + other.detections,
            track_steps: self.track_steps + other.track_steps,
            verifications: self.verifications + other.verifications,
            cost: self.cost + other.cost,
        }
    }
}

/// End of the frame at `pos`, i.e. the start of the next one.
pub(crate) fn frame_end_ms(stream: &[FrameFeature], pos: usize) -> u32 {
    if let Some(next) = stream.get(pos + 1) {
        next.t_ms
    } else if pos > 0 {
        stream[pos].t_ms + (stream[pos].t_ms - stream[pos - 1].t_ms).max(1)
    } else {
        stream[pos].t_ms + 1
    }
}

fn check_inputs(stream: &[FrameFeature], shots: &[Shot], template: &TemplateFace) -> Result<Vec<bool>> {
    let dim = template.vector.dim();
    let mut cut_before = vec![false; stream.len()];
    if stream.is_empty() {
        return if shots.is_empty() { Ok(cut_before) } else { Err(Error::Misaligned("shots for an empty stream".into())) };
    }
    for w in stream.windows(2) {
        if w[1].index <= w[0].index {
            return Err(Error::Misaligned(format!("frame index {} does not follow {}", w[1].index, w[0].index)));
        }
    }
    let first = stream[0].index;
    let last = stream[stream.len() - 1].index;
    let tiled = !shots.is_empty()
        && shots[0].start_frame == first
        && shots[shots.len() - 1].end_frame == last
        && shots.windows(2).all(|w| w[0].end_frame < w[1].start_frame)
        && shots.iter().all(|s| s.start_frame <= s.end_frame);
    if !tiled {
        return Err(Error::Misaligned("shots do not tile the stream".into()));
    }
    let mut next_shot = 1;
    for (pos, frame) in stream.iter().enumerate() {
        if let Some(next) = shots.get(next_shot) {
            if frame.index == next.start_frame {
                if stream[pos - 1].index != shots[next_shot - 1].end_frame {
                    return Err(Error::Misaligned(format!("gap before shot starting at {}", next.start_frame)));
                }
                cut_before[pos] = true;
                next_shot += 1;
            } else if frame.index > next.start_frame {
                return Err(Error::Misaligned(format!("shot start {} is not a frame", next.start_frame)));
            }
        }
        for face in frame.faces() {
            if face.embedding.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: face.embedding.len() });
            }
            if face.bbox.w == 0 || face.bbox.h == 0 {
                return Err(Error::InvalidParameter(format!("empty face box in frame {}", frame.index)));
            }
        }
    }
    if next_shot != shots.len() {
        return Err(Error::Misaligned("shots do not tile the stream".into()));
    }
    Ok(cut_before)
}

struct Scheduler<'a> {
    video: &'a VideoId,
    stream: &'a [FrameFeature],
    template: Vec<f64>,
    cfg: &'a TrackerConfig,
    status: TrackStatus,
    segments: Vec<TrackSegment>,
    cost: CostReport,
}

impl Scheduler<'_> {
    fn close(&mut self, end: usize) {
        let status = core::mem::replace(&mut self.status, TrackStatus::Idle);
        if let TrackStatus::Tracking { start, similarities, .. } = status {
            let mean = similarities.iter().sum::<f64>() / similarities.len() as f64;
            self.segments.push(TrackSegment {
                video: self.video.clone(),
                start_frame: self.stream[start].index,
                end_frame: self.stream[end].index,
                start_ms: self.stream[start].t_ms,
                end_ms: frame_end_ms(self.stream, end),
                mean_similarity: mean,
            });
        }
    }

    /// Advances an active track by one frame. Returns false when the track ended.
    fn track(&mut self, pos: usize) -> bool {
        let frame = &self.stream[pos];
        self.cost.track_steps += 1;
        self.cost.cost += self.cfg.cost.c_track;
        let TrackStatus::Tracking { ref_hist, last_bbox, frames_since_verify, similarities, .. } = &mut self.status
        else {
            return false;
        };
        let mut best: Option<(&FaceObservation, f64)> = None;
        for face in frame.faces() {
            let iou = face.bbox.iou(last_bbox);
            if iou > 0.0 && best.is_none_or(|(_, b)| iou > b) {
                best = Some((face, iou));
            }
        }
        let Some((face, _)) = best else {
            return false;
        };
        if bhattacharyya(&face.patch_hist, ref_hist) > self.cfg.drift {
            return false;
        }
        *last_bbox = face.bbox;
        *frames_since_verify += 1;
        if let Some(interval) = self.cfg.verify_interval {
            if *frames_since_verify >= interval {
                self.cost.verifications += 1;
                self.cost.cost += self.cfg.cost.c_verify;
                let sim = cosine_f32(&face.embedding, &self.template);
                if sim < self.cfg.theta_verify {
                    return false;
                }
                similarities.push(sim);
                *frames_since_verify = 0;
            }
        }
        true
    }

    fn detect(&mut self, pos: usize) {
        let frame = &self.stream[pos];
        self.cost.detections += 1;
        self.cost.cost += self.cfg.cost.c_detect;
        if let Some((face, sim)) = best_match(frame, &self.template, self.cfg.theta_verify) {
            self.status = TrackStatus::Tracking {
                ref_hist: face.patch_hist.clone(),
                last_bbox: face.bbox,
                frames_since_verify: 0,
                start: pos,
                similarities: vec![sim],
            };
        }
    }
}

/// The face most similar to the template, if it clears `theta`.
fn best_match<'f>(frame: &'f FrameFeature, template: &[f64], theta: f64) -> Option<(&'f FaceObservation, f64)> {
    let mut best: Option<(&FaceObservation, f64)> = None;
    for face in frame.faces() {
        let sim = cosine_f32(&face.embedding, template);
        if sim >= theta && best.is_none_or(|(_, b)| sim > b) {
            best = Some((face, sim));
        }
    }
    best
}

/// Runs the detect-then-track state machine over one video.
pub fn run_tracker(
    video: &VideoId,
    stream: &[FrameFeature],
    shots: &[Shot],
    template: &TemplateFace,
    cfg: &TrackerConfig,
) -> Result<(Vec<TrackSegment>, CostReport)> {
    cfg.validate()?;
    let cut_before = check_inputs(stream, shots, template)?;
    let mut s = Scheduler {
        video,
        stream,
        template: template.vector.to_f64(),
        cfg,
        status: TrackStatus::Idle,
        segments: Vec::new(),
        cost: CostReport::default(),
    };
    for pos in 0..stream.len() {
        s.cost.frames += 1;
        if cut_before[pos] {
            s.close(pos - 1);
        }
        if matches!(s.status, TrackStatus::Tracking { .. }) {
            if s.track(pos) {
                continue;
            }
            s.close(pos - 1);
        }
        s.detect(pos);
    }
    if !stream.is_empty() {
        s.close(stream.len() - 1);
    }
    Ok((s.segments, s.cost))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub tracked: CostReport,
    pub baseline: CostReport,
    /// Baseline cost divided by tracked cost.
    pub cost_ratio: f64,
    /// Intersection over union of the POI-present frame sets.
    pub frame_agreement: f64,
    pub tracked_frames: u64,
    pub baseline_frames: u64,
}

/// Frames the detect-every-frame policy marks as showing the POI.
pub fn detect_every_frame(
    stream: &[FrameFeature],
    template: &TemplateFace,
    cfg: &TrackerConfig,
) -> (Vec<bool>, CostReport) {
    let t = template.vector.to_f64();
    let present: Vec<bool> = stream.iter().map(|f| best_match(f, &t, cfg.theta_verify).is_some()).collect();
    let n = stream.len() as u64;
    let cost = CostReport { frames: n, detections: n, track_steps: 0, verifications: 0, cost: n as f64 * cfg.cost.c_detect };
    (present, cost)
}

/// Marks the frames covered by track segments.
pub fn covered_frames(stream: &[FrameFeature], segments: &[TrackSegment]) -> Vec<bool> {
    let mut covered = vec![false; stream.len()];
    for seg in segments {
        let lo = stream.partition_point(|f| f.index < seg.start_frame);
        let hi = stream.partition_point(|f| f.index <= seg.end_frame);
        covered[lo..hi].iter_mut().for_each(|c| *c = true);
    }
    covered
}

/// Runs the tracker and the detect-every-frame baseline on the same input.
pub fn compare_policies(
    video: &VideoId,
    stream: &[FrameFeature],
    shots: &[Shot],
    template: &TemplateFace,
    cfg: &TrackerConfig,
) -> Result<SpeedupReport> {
    let (segments, tracked) = run_tracker(video, stream, shots, template, cfg)?;
    let (baseline_present, baseline) = detect_every_frame(stream, template, cfg);
    let tracked_present = covered_frames(stream, &segments);
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&a, &b) in tracked_present.iter().zip(&baseline_present) {
        inter += u64::from(a && b);
        union += u64::from(a || b);
    }
    let frame_agreement = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    let cost_ratio = if tracked.cost > 0.0 { baseline.cost / tracked.cost } else { 1.0 };
    Ok(SpeedupReport {
        tracked,
        baseline,
        cost_ratio,
        frame_agreement,
        tracked_frames: tracked_present.iter().filter(|&&p| p).count() as u64,
        baseline_frames: baseline_present.iter().filter(|&&p| p).count() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Embedding, SpeakerId};
    use crate::shots::{detect_shots, ShotParams};

    fn template() -> TemplateFace {
        TemplateFace {
            speaker: SpeakerId::new("poi").unwrap(),
            vector: Embedding::new("poi", vec![1.0, 0.0, 0.0]).unwrap(),
            support: 10,
        }
    }

    fn poi_face() -> FaceObservation {
        FaceObservation {
            bbox: BBox { x: 10, y: 10, w: 20, h: 20 },
            embedding: vec![0.95, 0.1, 0.0],
            patch_hist: vec![0.5, 0.5],
        }
    }

    fn stream(n: u32, present: impl Fn(u32) -> bool, cuts: &[u32]) -> Vec<FrameFeature> {
        (0..n)
            .map(|i| {
                let shot = cuts.iter().filter(|&&c| c <= i).count();
                let hist = if shot % 2 == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
                FrameFeature {
                    index: i,
                    t_ms: i * 40,
                    hsv_hist: hist,
                    detections: present(i).then(|| vec![poi_face()]),
                }
            })
            .collect()
    }

    fn vid() -> VideoId {
        VideoId::new("v").unwrap()
    }

    #[test]
    fn bhattacharyya_bounds() {
        assert_eq!(bhattacharyya(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
        assert!((bhattacharyya(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iou_basics() {
        let a = BBox { x: 0, y: 0, w: 10, h: 10 };
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&BBox { x: 10, y: 0, w: 10, h: 10 }), 0.0);
        assert!((a.iou(&BBox { x: 5, y: 0, w: 10, h: 10 }) - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn single_presence_gives_one_segment() {
        let s = stream(201, |i| i >= 10, &[]);
        let shots = detect_shots(&s, &ShotParams::default()).unwrap();
        let cfg = TrackerConfig::default();
        let (segs, cost) = run_tracker(&vid(), &s, &shots, &template(), &cfg).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!((segs[0].start_frame, segs[0].end_frame), (10, 200));
        // Frames 0..=10 are detected, the remaining 190 are tracked.
        assert_eq!(cost.detections, 11);
        assert_eq!(cost.track_steps, 190);
        assert_eq!(cost.verifications, 190 / 25);
        assert!(cost.detections <= 10 + cost.verifications + 1);
        assert_eq!(cost.cost, 11.0 * 8.0 + 190.0 + 7.0 * 2.0);
    }

    #[test]
    fn absent_poi_costs_one_detection_per_frame() {
        let s = stream(50, |_| false, &[]);
        let shots = detect_shots(&s, &ShotParams::default()).unwrap();
        let (segs, cost) = run_tracker(&vid(), &s, &shots, &template(), &TrackerConfig::default()).unwrap();
        assert!(segs.is_empty());
        assert_eq!(cost.cost, 50.0 * 8.0);
    }

    #[test]
    fn shot_cut_ends_track() {
        let s = stream(200, |_| true, &[100]);
        let shots = detect_shots(&s, &ShotParams::default()).unwrap();
        assert_eq!(shots.len(), 2);
        let (segs, cost) = run_tracker(&vid(), &s, &shots, &template(), &TrackerConfig::default()).unwrap();
        let bounds: Vec<_> = segs.iter().map(|t| (t.start_frame, t.end_frame)).collect();
        assert_eq!(bounds, vec![(0, 99), (100, 199)]);
        assert_eq!(cost.detections, 2);
    }

    #[test]
    fn track_ends_when_face_leaves() {
        let s = stream(60, |i| (10..30).contains(&i), &[]);
        let shots = detect_shots(&s, &ShotParams::default()).unwrap();
        let cfg = TrackerConfig { verify_interval: None, ..TrackerConfig::default() };
        let (segs, cost) = run_tracker(&vid(), &s, &shots, &template(), &cfg).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!((segs[0].start_frame, segs[0].end_frame), (10, 29));
        assert_eq!(segs[0].end_ms, 30 * 40);
        // Frame 30: the track step fails, then detection runs on the same frame.
        assert_eq!(cost.track_steps, 20);
        assert_eq!(cost.detections, 60 - 19);
    }

    #[test]
    fn failed_reverification_ends_track() {
        let mut s = stream(100, |_| true, &[]);
        for f in s.iter_mut().skip(40) {
            if let Some(d) = f.detections.as_mut() {
                d[0].embedding = vec![0.0, 1.0, 0.0];
            }
        }
        let shots = detect_shots(&s, &ShotParams::default()).unwrap();
        let cfg = TrackerConfig { verify_interval: Some(10), ..TrackerConfig::default() };
        let (segs, _) = run_tracker(&vid(), &s, &shots, &template(), &cfg).unwrap();
        // Verifications at frames 10, 20, 30 pass; frame 40 fails.
        assert_eq!(segs.len(), 1);
        assert_eq!((segs[0].start_frame, segs[0].end_frame), (0, 39));
    }

    #[test]
    fn equal_costs_give_no_speedup() {
        let s = stream(300, |i| i % 50 < 40, &[]);
        let shots = detect_shots(&s, &ShotParams::default()).unwrap();
        let mut cfg = TrackerConfig::default();
        cfg.cost = CostModel { c_detect: 1.0, c_track: 1.0, c_verify: 1.0 };
        let r = compare_policies(&vid(), &s, &shots, &template(), &cfg).unwrap();
        assert!(r.cost_ratio <= 1.0 + 1e-12, "{r:?}");
        assert_eq!(r.frame_agreement, 1.0);
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let mut s = stream(20, |_| true, &[]);
        s[3].detections.as_mut().unwrap()[0].embedding = vec![1.0, 0.0];
        let shots = detect_shots(&s, &ShotParams::default()).unwrap();
        let err = run_tracker(&vid(), &s, &shots, &template(), &TrackerConfig::default()).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 3, got: 2 });
    }

    #[test]
    fn rejects_shots_that_do_not_tile() {
        let s = stream(20, |_| true, &[]);
        let shots = [Shot { start_frame: 0, end_frame: 10, start_ms: 0, end_ms: 440 }];
        assert!(run_tracker(&vid(), &s, &shots, &template(), &TrackerConfig::default()).is_err());
    }
}
