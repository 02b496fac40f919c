//! Speech segments from per-frame audio-visual sync confidence inside POI
//! tracks.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{SegmentRecord, SegmentSource, SpeakerId, VideoId};
use crate::shots::FrameFeature;
use crate::tracking::TrackSegment;
use crate::{Error, Result};

/// Per-frame confidence that the visible face is the one talking.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncTrace {
    pub video: VideoId,
    pub confidence: Vec<f32>,
}

impl SyncTrace {
    pub fn new(video: VideoId, confidence: Vec<f32>) -> Result<Self> {
        if confidence.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("sync trace"));
        }
        Ok(Self { video, confidence })
    }
}

/// Frame numbers and start times of a stream, without the features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameClock {
    indices: Vec<u32>,
    times_ms: Vec<u32>,
}

impl FrameClock {
    pub fn new(indices: Vec<u32>, times_ms: Vec<u32>) -> Result<Self> {
        if indices.len() != times_ms.len() {
            return Err(Error::Misaligned("frame indices and times differ in length".into()));
        }
        if indices.windows(2).any(|w| w[1] <= w[0]) || times_ms.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Misaligned("frame clock is not increasing".into()));
        }
        Ok(Self { indices, times_ms })
    }

    pub fn from_stream(stream: &[FrameFeature]) -> Result<Self> {
        Self::new(stream.iter().map(|f| f.index).collect(), stream.iter().map(|f| f.t_ms).collect())
    }

    /// Evenly spaced frames `0..n`.
    pub fn uniform(n: u32, frame_ms: u32) -> Self {
        Self { indices: (0..n).collect(), times_ms: (0..n).map(|i| i * frame_ms).collect() }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn position(&self, frame: u32) -> Option<usize> {
        self.indices.binary_search(&frame).ok()
    }

    pub fn start_ms(&self, pos: usize) -> u64 {
        u64::from(self.times_ms[pos])
    }

    pub fn end_ms(&self, pos: usize) -> u64 {
        if let Some(&next) = self.times_ms.get(pos + 1) {
            u64::from(next)
        } else if pos > 0 {
            u64::from(self.times_ms[pos]) + u64::from((self.times_ms[pos] - self.times_ms[pos - 1]).max(1))
        } else {
            u64::from(self.times_ms[pos]) + 1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeakingParams {
    /// Frames with confidence at or above this count as speech.
    pub tau_sync: f64,
    /// Runs closer than this are merged.
    pub max_gap_ms: u64,
    pub min_len_ms: u64,
    pub max_len_ms: u64,
}

impl Default for SpeakingParams {
    fn default() -> Self {
        Self { tau_sync: 0.5, max_gap_ms: 500, min_len_ms: 4_000, max_len_ms: 20_000 }
    }
}

impl SpeakingParams {
    pub fn validate(&self) -> Result<()> {
        if !self.tau_sync.is_finite() {
            return Err(Error::NonFinite("tau_sync"));
        }
        if self.min_len_ms == 0 || self.min_len_ms > self.max_len_ms {
            return Err(Error::InvalidParameter(format!(
                "need 0 < min_len_ms <= max_len_ms, got {} and {}",
                self.min_len_ms, self.max_len_ms
            )));
        }
        Ok(())
    }
}

/// Splits a `[start, end)` span longer than `max_len` into the fewest equal
/// chunks of at most `max_len`, dropping any chunk shorter than `min_len`.
fn split_span(start: u64, end: u64, min_len: u64, max_len: u64, out: &mut Vec<(u64, u64)>) {
    let dur = end - start;
    if dur < min_len {
        return;
    }
    let chunks = dur.div_ceil(max_len);
    for i in 0..chunks {
        let a = start + dur * i / chunks;
        let b = start + dur * (i + 1) / chunks;
        if b - a >= min_len {
            out.push((a, b));
        }
    }
}

/// Turns POI tracks plus a sync trace into speech segments. Segments are
/// numbered from `first_index` in time order.
pub fn extract_segments(
    speaker: &SpeakerId,
    tracks: &[TrackSegment],
    trace: &SyncTrace,
    clock: &FrameClock,
    params: &SpeakingParams,
    first_index: u32,
) -> Result<Vec<SegmentRecord>> {
    params.validate()?;
    if trace.confidence.len() != clock.len() {
        return Err(Error::Misaligned(format!(
            "sync trace has {} frames, stream has {}",
            trace.confidence.len(),
            clock.len()
        )));
    }
    let mut ordered: Vec<&TrackSegment> = tracks.iter().collect();
    ordered.sort_by_key(|t| (t.start_frame, t.end_frame));
    let mut spans = Vec::new();
    for track in ordered {
        if track.video != trace.video {
            return Err(Error::Misaligned(format!("track from {} with trace of {}", track.video, trace.video)));
        }
        let (Some(p0), Some(p1)) = (clock.position(track.start_frame), clock.position(track.end_frame)) else {
            return Err(Error::Misaligned(format!(
                "track frames {}..={} are outside the stream",
                track.start_frame, track.end_frame
            )));
        };
        if p1 < p0 {
            return Err(Error::Misaligned("track ends before it starts".into()));
        }
        // Speech runs in stream positions, merged across short gaps.
        let mut merged: Vec<(u64, u64)> = Vec::new();
        let mut pos = p0;
        while pos <= p1 {
            if f64::from(trace.confidence[pos]) < params.tau_sync {
                pos += 1;
                continue;
            }
            let run_start = pos;
            while pos <= p1 && f64::from(trace.confidence[pos]) >= params.tau_sync {
                pos += 1;
            }
            let (s, e) = (clock.start_ms(run_start), clock.end_ms(pos - 1));
            match merged.last_mut() {
                Some(last) if s - last.1 < params.max_gap_ms => last.1 = e,
                _ => merged.push((s, e)),
            }
        }
        for (s, e) in merged {
            split_span(s, e, params.min_len_ms, params.max_len_ms, &mut spans);
        }
    }
    spans
        .into_iter()
        .enumerate()
        .map(|(i, (s, e))| {
            SegmentRecord::new(
                trace.video.clone(),
                speaker.clone(),
                first_index + i as u32,
                s,
                e,
                SegmentSource::Tracked,
            )
        })
        .collect()
}
