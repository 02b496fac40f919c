//! Binary and text file formats. All integers and floats are little-endian.
//!
//! | format | layout |
//! |--------|--------|
//! | `EMB1` | magic, u32 dim, u32 count, then per record: u16 id length, UTF-8 id, dim x f32 |
//! | `FRF1` | magic, u32 bins, u32 embedding dim, then per frame: u32 index, u32 t_ms, bins x f32, u8 has-detections, and if set: u8 face count, per face 4 x u32 box (x, y, w, h), dim x f32 embedding, bins x f32 patch histogram |
//! | `SYN1` | magic, u32 count, count x f32 |
//! | `PLDA1` | magic, u32 input dim d, u32 reduced dim r, d x f64 LDA mean, r*d x f64 LDA projection (row-major), r x f64 LDA eigenvalues, r x f64 PLDA mean, r*r x f64 B, r*r x f64 W |
//!
//! Trial lists are text, one `enroll test target|nontarget` per line.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use thiserror::Error;
use voxcurate_core::backend::{Backend, LdaTransform, PldaModel};
use voxcurate_core::eval::{Trial, TrialLabel};
use voxcurate_core::linalg::Matrix;
use voxcurate_core::model::{Embedding, UtteranceId, VideoId};
use voxcurate_core::shots::{validate_histogram, FrameFeature};
use voxcurate_core::speaking::SyncTrace;
use voxcurate_core::tracking::{BBox, FaceObservation};

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
pub const FRF_MAGIC: &[u8; 4] = b"FRF1";
pub const SYN_MAGIC: &[u8; 4] = b"SYN1";
pub const PLDA_MAGIC: &[u8; 5] = b"PLDA1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("truncated file while reading {0}")]
    Truncated(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("{0} trailing bytes after the last record")]
    TrailingData(usize),
    #[error("invalid content: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type FormatResult<T> = Result<T, FormatError>;

/// Reads `what`, turning an early end of input into [`FormatError::Truncated`].
fn eof<T>(what: &'static str, r: io::Result<T>) -> FormatResult<T> {
    r.map_err(|e| if e.kind() == io::ErrorKind::UnexpectedEof { FormatError::Truncated(what) } else { e.into() })
}

fn check_magic(r: &mut &[u8], magic: &[u8]) -> FormatResult<()> {
    let n = magic.len().min(r.len());
    let found = &r[..n];
    if found != magic {
        return Err(FormatError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    *r = &r[n..];
    Ok(())
}

fn read_f32s(r: &mut &[u8], n: usize, what: &'static str) -> FormatResult<Vec<f32>> {
    let mut v = vec![0f32; n];
    eof(what, r.read_f32_into::<LE>(&mut v))?;
    Ok(v)
}

fn read_f64s(r: &mut &[u8], n: usize, what: &'static str) -> FormatResult<Vec<f64>> {
    let mut v = vec![0f64; n];
    eof(what, r.read_f64_into::<LE>(&mut v))?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(FormatError::NonFinite(what.into()));
    }
    Ok(v)
}

fn u32_len(n: usize, what: &str) -> FormatResult<u32> {
    u32::try_from(n).map_err(|_| FormatError::Invalid(format!("{what} {n} does not fit in u32")))
}

fn finish(r: &[u8]) -> FormatResult<()> {
    if r.is_empty() {
        Ok(())
    } else {
        Err(FormatError::TrailingData(r.len()))
    }
}

pub fn encode_embeddings(embeddings: &[Embedding]) -> FormatResult<Vec<u8>> {
    let dim = embeddings.first().map_or(0, Embedding::dim);
    let mut out = Vec::with_capacity(12 + embeddings.len() * (dim * 4 + 24));
    out.extend_from_slice(EMB_MAGIC);
    out.write_u32::<LE>(u32_len(dim, "dim")?)?;
    out.write_u32::<LE>(u32_len(embeddings.len(), "count")?)?;
    for e in embeddings {
        if e.dim() != dim {
            return Err(FormatError::DimMismatch { expected: dim, got: e.dim() });
        }
        let id = e.id.as_bytes();
        let len = u16::try_from(id.len()).map_err(|_| FormatError::Invalid(format!("id {} too long", e.id)))?;
        out.write_u16::<LE>(len)?;
        out.extend_from_slice(id);
        for &v in &e.values {
            out.write_f32::<LE>(v)?;
        }
    }
    Ok(out)
}

pub fn decode_embeddings(bytes: &[u8]) -> FormatResult<Vec<Embedding>> {
    let mut r = bytes;
    check_magic(&mut r, EMB_MAGIC)?;
    let dim = eof("EMB1 header", r.read_u32::<LE>())? as usize;
    let count = eof("EMB1 header", r.read_u32::<LE>())? as usize;
    let mut out = Vec::with_capacity(count.min(r.len() / (dim * 4 + 2).max(1)));
    for k in 0..count {
        let len = eof("EMB1 id length", r.read_u16::<LE>())? as usize;
        if r.len() < len {
            return Err(FormatError::Truncated("EMB1 id"));
        }
        let id = std::str::from_utf8(&r[..len])
            .map_err(|_| FormatError::Invalid(format!("record {k}: id is not UTF-8")))?
            .to_owned();
        r = &r[len..];
        let values = read_f32s(&mut r, dim, "EMB1 values")?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite(format!("EMB1 record {k} ({id})")));
        }
        out.push(Embedding::new(id, values).map_err(|e| FormatError::Invalid(e.to_string()))?);
    }
    finish(r)?;
    Ok(out)
}

pub fn write_embeddings(path: &Path, embeddings: &[Embedding]) -> FormatResult<()> {
    fs::write(path, encode_embeddings(embeddings)?)?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> FormatResult<Vec<Embedding>> {
    decode_embeddings(&fs::read(path)?)
}

/// Reads an embedding file and requires a given dimension.
pub fn read_embeddings_with_dim(path: &Path, dim: usize) -> FormatResult<Vec<Embedding>> {
    let bytes = fs::read(path)?;
    let mut r = &bytes[..];
    check_magic(&mut r, EMB_MAGIC)?;
    let header = eof("EMB1 header", r.read_u32::<LE>())? as usize;
    if header != dim {
        return Err(FormatError::DimMismatch { expected: dim, got: header });
    }
    decode_embeddings(&bytes)
}

pub fn encode_frames(frames: &[FrameFeature]) -> FormatResult<Vec<u8>> {
    let bins = frames.first().map_or(0, |f| f.hsv_hist.len());
    let dim = frames.iter().flat_map(|f| f.faces()).map(|f| f.embedding.len()).next().unwrap_or(0);
    let mut out = Vec::new();
    out.extend_from_slice(FRF_MAGIC);
    out.write_u32::<LE>(u32_len(bins, "bins")?)?;
    out.write_u32::<LE>(u32_len(dim, "embedding dim")?)?;
    for f in frames {
        if f.hsv_hist.len() != bins {
            return Err(FormatError::DimMismatch { expected: bins, got: f.hsv_hist.len() });
        }
        out.write_u32::<LE>(f.index)?;
        out.write_u32::<LE>(f.t_ms)?;
        f.hsv_hist.iter().try_for_each(|&v| out.write_f32::<LE>(v))?;
        match &f.detections {
            None => out.write_u8(0)?,
            Some(faces) => {
                out.write_u8(1)?;
                let n = u8::try_from(faces.len())
                    .map_err(|_| FormatError::Invalid(format!("frame {}: more than 255 faces", f.index)))?;
                out.write_u8(n)?;
                for face in faces {
                    if face.embedding.len() != dim {
                        return Err(FormatError::DimMismatch { expected: dim, got: face.embedding.len() });
                    }
                    if face.patch_hist.len() != bins {
                        return Err(FormatError::DimMismatch { expected: bins, got: face.patch_hist.len() });
                    }
                    for v in [face.bbox.x, face.bbox.y, face.bbox.w, face.bbox.h] {
                        out.write_u32::<LE>(v)?;
                    }
                    face.embedding.iter().try_for_each(|&v| out.write_f32::<LE>(v))?;
                    face.patch_hist.iter().try_for_each(|&v| out.write_f32::<LE>(v))?;
                }
            }
        }
    }
    Ok(out)
}

pub fn decode_frames(bytes: &[u8]) -> FormatResult<Vec<FrameFeature>> {
    let mut r = bytes;
    check_magic(&mut r, FRF_MAGIC)?;
    let bins = eof("FRF1 header", r.read_u32::<LE>())? as usize;
    let dim = eof("FRF1 header", r.read_u32::<LE>())? as usize;
    let mut frames = Vec::new();
    while !r.is_empty() {
        let index = eof("FRF1 frame", r.read_u32::<LE>())?;
        let t_ms = eof("FRF1 frame", r.read_u32::<LE>())?;
        let hsv_hist = read_f32s(&mut r, bins, "FRF1 histogram")?;
        validate_histogram(&hsv_hist).map_err(|e| FormatError::Invalid(format!("frame {index}: {e}")))?;
        let detections = match eof("FRF1 flag", r.read_u8())? {
            0 => None,
            1 => {
                let n = eof("FRF1 face count", r.read_u8())?;
                let mut faces = Vec::with_capacity(n as usize);
                for _ in 0..n {
                    let mut b = [0u32; 4];
                    eof("FRF1 face box", r.read_u32_into::<LE>(&mut b))?;
                    let embedding = read_f32s(&mut r, dim, "FRF1 face embedding")?;
                    let patch_hist = read_f32s(&mut r, bins, "FRF1 patch histogram")?;
                    if embedding.iter().chain(&patch_hist).any(|v| !v.is_finite()) {
                        return Err(FormatError::NonFinite(format!("FRF1 frame {index} face")));
                    }
                    faces.push(FaceObservation { bbox: BBox { x: b[0], y: b[1], w: b[2], h: b[3] }, embedding, patch_hist });
                }
                Some(faces)
            }
            other => return Err(FormatError::Invalid(format!("frame {index}: detection flag {other}"))),
        };
        frames.push(FrameFeature { index, t_ms, hsv_hist, detections });
    }
    Ok(frames)
}

pub fn write_frames(path: &Path, frames: &[FrameFeature]) -> FormatResult<()> {
    fs::write(path, encode_frames(frames)?)?;
    Ok(())
}

pub fn read_frames(path: &Path) -> FormatResult<Vec<FrameFeature>> {
    decode_frames(&fs::read(path)?)
}

pub fn write_sync(path: &Path, trace: &SyncTrace) -> FormatResult<()> {
    let mut out = Vec::with_capacity(8 + 4 * trace.confidence.len());
    out.extend_from_slice(SYN_MAGIC);
    out.write_u32::<LE>(u32_len(trace.confidence.len(), "count")?)?;
    trace.confidence.iter().try_for_each(|&v| out.write_f32::<LE>(v))?;
    fs::write(path, out)?;
    Ok(())
}

pub fn read_sync(path: &Path, video: VideoId) -> FormatResult<SyncTrace> {
    let bytes = fs::read(path)?;
    let mut r = &bytes[..];
    check_magic(&mut r, SYN_MAGIC)?;
    let count = eof("SYN1 header", r.read_u32::<LE>())? as usize;
    let confidence = read_f32s(&mut r, count, "SYN1 values")?;
    finish(r)?;
    SyncTrace::new(video, confidence).map_err(|_| FormatError::NonFinite("SYN1 values".into()))
}

fn write_f64s(out: &mut Vec<u8>, v: &[f64]) -> io::Result<()> {
    v.iter().try_for_each(|&x| out.write_f64::<LE>(x))
}

pub fn encode_backend(b: &Backend) -> FormatResult<Vec<u8>> {
    let (d, r) = (b.lda.input_dim(), b.lda.output_dim());
    let mut out = Vec::new();
    out.extend_from_slice(PLDA_MAGIC);
    out.write_u32::<LE>(u32_len(d, "input dim")?)?;
    out.write_u32::<LE>(u32_len(r, "reduced dim")?)?;
    write_f64s(&mut out, &b.lda.mean)?;
    write_f64s(&mut out, b.lda.projection.as_slice())?;
    write_f64s(&mut out, &b.lda.eigenvalues)?;
    write_f64s(&mut out, &b.plda.mu)?;
    write_f64s(&mut out, b.plda.between.as_slice())?;
    write_f64s(&mut out, b.plda.within.as_slice())?;
    Ok(out)
}

pub fn decode_backend(bytes: &[u8]) -> FormatResult<Backend> {
    let mut r = bytes;
    check_magic(&mut r, PLDA_MAGIC)?;
    let d = eof("PLDA1 header", r.read_u32::<LE>())? as usize;
    let k = eof("PLDA1 header", r.read_u32::<LE>())? as usize;
    let mean = read_f64s(&mut r, d, "LDA mean")?;
    let projection = Matrix::from_row_major(k, d, read_f64s(&mut r, k * d, "LDA projection")?);
    let eigenvalues = read_f64s(&mut r, k, "LDA eigenvalues")?;
    let mu = read_f64s(&mut r, k, "PLDA mean")?;
    let between = Matrix::from_row_major(k, k, read_f64s(&mut r, k * k, "PLDA between covariance")?);
    let within = Matrix::from_row_major(k, k, read_f64s(&mut r, k * k, "PLDA within covariance")?);
    finish(r)?;
    let plda = PldaModel::new(mu, between, within).map_err(|e| FormatError::Invalid(e.to_string()))?;
    Ok(Backend { lda: LdaTransform { mean, projection, eigenvalues }, plda })
}

pub fn write_backend(path: &Path, b: &Backend) -> FormatResult<()> {
    fs::write(path, encode_backend(b)?)?;
    Ok(())
}

pub fn read_backend(path: &Path) -> FormatResult<Backend> {
    decode_backend(&fs::read(path)?)
}

pub fn write_trials(mut w: impl Write, trials: &[Trial]) -> io::Result<()> {
    for t in trials {
        writeln!(w, "{} {} {}", t.enroll, t.test, t.label.as_str())?;
    }
    Ok(())
}

pub fn read_trials(mut r: impl Read) -> FormatResult<Vec<Trial>> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || FormatError::Invalid(format!("trial line {}: {line:?}", n + 1));
        let mut parts = line.split_whitespace();
        let (Some(a), Some(b), Some(l), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        let label = match l {
            "target" => TrialLabel::Target,
            "nontarget" => TrialLabel::Nontarget,
            _ => return Err(bad()),
        };
        let enroll: UtteranceId = a.parse().map_err(|_| bad())?;
        let test: UtteranceId = b.parse().map_err(|_| bad())?;
        out.push(Trial { enroll, test, label });
    }
    Ok(out)
}
