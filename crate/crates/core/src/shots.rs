//! Shot-boundary detection from per-frame colour histograms.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::tracking::FaceObservation;
use crate::{Error, Result};

/// Hue x saturation x value bin layout of frame histograms.
pub const HSV_LAYOUT: (usize, usize, usize) = (16, 16, 8);
pub const HSV_BINS: usize = HSV_LAYOUT.0 * HSV_LAYOUT.1 * HSV_LAYOUT.2;

/// Allowed deviation of a histogram's total mass from 1.
pub const HIST_SUM_TOLERANCE: f64 = 1e-6;

/// One decoded video frame, reduced to the features the pipeline needs.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeature {
    pub index: u32,
    pub t_ms: u32,
    pub hsv_hist: Vec<f32>,
    /// Faces visible in the frame. Only consulted when the scheduler pays
    /// for detection or tracking.
    pub detections: Option<Vec<FaceObservation>>,
}

impl FrameFeature {
    pub fn faces(&self) -> &[FaceObservation] {
        self.detections.as_deref().unwrap_or(&[])
    }
}

/// Checks that a histogram is non-negative and sums to one.
pub fn validate_histogram(hist: &[f32]) -> Result<()> {
    let mut sum = 0.0f64;
    for &v in hist {
        if !v.is_finite() {
            return Err(Error::NonFinite("histogram"));
        }
        if v < 0.0 {
            return Err(Error::InvalidParameter("negative histogram entry".into()));
        }
        sum += f64::from(v);
    }
    if (sum - 1.0).abs() > HIST_SUM_TOLERANCE {
        return Err(Error::InvalidParameter(format!("histogram sums to {sum}, not 1")));
    }
    Ok(())
}

pub fn l1_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (f64::from(x) - f64::from(y)).abs()).sum()
}

/// A run of frames between camera cuts. Frame numbers are inclusive,
/// `end_ms` is the end of the last frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub start_frame: u32,
    pub end_frame: u32,
    pub start_ms: u32,
    pub end_ms: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShotParams {
    /// L1 histogram distance above which a cut is declared.
    pub threshold: f64,
    /// Minimum number of frames in a shot before another cut may start.
    pub min_shot_len: u32,
}

impl Default for ShotParams {
    fn default() -> Self {
        Self { threshold: 0.4, min_shot_len: 12 }
    }
}

impl ShotParams {
    pub fn validate(&self) -> Result<()> {
        if !self.threshold.is_finite() || self.threshold < 0.0 {
            return Err(Error::InvalidParameter(format!("shot threshold {}", self.threshold)));
        }
        if self.min_shot_len == 0 {
            return Err(Error::InvalidParameter("min_shot_len must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Open {
    start_frame: u32,
    start_ms: u32,
    len: u32,
    last_frame: u32,
    last_ms: u32,
    last_period: u32,
}

/// Single-pass detector holding only the previous histogram.
#[derive(Debug, Clone)]
pub struct ShotDetector {
    params: ShotParams,
    prev_hist: Vec<f32>,
    open: Option<Open>,
}

impl ShotDetector {
    pub fn new(params: ShotParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, prev_hist: Vec::new(), open: None })
    }

    /// Feeds the next frame. Returns the shot that the frame closed, if any.
    pub fn push(&mut self, frame: &FrameFeature) -> Result<Option<Shot>> {
        validate_histogram(&frame.hsv_hist)?;
        let Some(open) = self.open.as_mut() else {
            self.prev_hist = frame.hsv_hist.clone();
            self.open = Some(Open {
                start_frame: frame.index,
                start_ms: frame.t_ms,
                len: 1,
                last_frame: frame.index,
                last_ms: frame.t_ms,
                last_period: 1,
            });
            return Ok(None);
        };
        if frame.index <= open.last_frame {
            return Err(Error::Misaligned(format!(
                "frame index {} does not follow {}",
                frame.index, open.last_frame
            )));
        }
        if frame.t_ms < open.last_ms {
            return Err(Error::Misaligned(format!("timestamp goes backwards at frame {}", frame.index)));
        }
        if frame.hsv_hist.len() != self.prev_hist.len() {
            return Err(Error::DimensionMismatch { expected: self.prev_hist.len(), got: frame.hsv_hist.len() });
        }
        let jump = l1_distance(&frame.hsv_hist, &self.prev_hist);
        let mut closed = None;
        if jump > self.params.threshold && open.len >= self.params.min_shot_len {
            closed = Some(Shot {
                start_frame: open.start_frame,
                end_frame: open.last_frame,
                start_ms: open.start_ms,
                end_ms: frame.t_ms,
            });
            open.start_frame = frame.index;
            open.start_ms = frame.t_ms;
            open.len = 0;
        }
        open.len += 1;
        open.last_period = (frame.t_ms - open.last_ms).max(1);
        open.last_frame = frame.index;
        open.last_ms = frame.t_ms;
        self.prev_hist.clear();
        self.prev_hist.extend_from_slice(&frame.hsv_hist);
        Ok(closed)
    }

    /// Closes the final shot.
    pub fn finish(self) -> Option<Shot> {
        self.open.map(|o| Shot {
            start_frame: o.start_frame,
            end_frame: o.last_frame,
            start_ms: o.start_ms,
            end_ms: o.last_ms + o.last_period,
        })
    }
}

/// Splits a frame stream into shots. The shots tile the stream; only the
/// last one may be shorter than `min_shot_len`.
pub fn detect_shots(stream: &[FrameFeature], params: &ShotParams) -> Result<Vec<Shot>> {
    let mut detector = ShotDetector::new(*params)?;
    let mut shots = Vec::new();
    for frame in stream {
        if let Some(shot) = detector.push(frame)? {
            shots.push(shot);
        }
    }
    shots.extend(detector.finish());
    Ok(shots)
}
