//! Per-speaker data cleaning: cluster a speaker's utterances with DBSCAN
//! over PLDA-derived distances and keep only the largest cluster.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, LabeledEmbeddingSet, PldaModel};
use crate::clustering::{dbscan, largest_cluster, DistanceMatrix};
use crate::eval::VerificationReport;
use crate::model::{SpeakerId, UtteranceId};
use crate::{Error, Result};

/// Distances `s_max - s(i, j)` where `s_max` is the speaker's highest pair
/// score, so the most similar pair sits at distance zero.
pub fn plda_distance_matrix(model: &PldaModel, xs: &[Vec<f64>]) -> Result<DistanceMatrix> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("distance matrix needs 2 vectors, got {n}")));
    }
    let us = xs.iter().map(|x| model.project(x)).collect::<Result<Vec<_>>>()?;
    let mut scores = alloc::vec![0.0; n * n];
    let mut s_max = f64::NEG_INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            let s = model.score_projected(&us[i], &us[j]);
            if !s.is_finite() {
                return Err(Error::NonFinite("PLDA score"));
            }
            scores[i * n + j] = s;
            s_max = s_max.max(s);
        }
    }
    DistanceMatrix::from_fn(n, |i, j| s_max - scores[i * n + j])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleaningOutcome {
    /// Largest cluster kept, the rest dropped.
    Clustered,
    /// Too few utterances to cluster; everything kept.
    PassThrough,
    /// DBSCAN marked every utterance as noise; everything kept.
    AllNoiseFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub speaker: SpeakerId,
    pub kept: Vec<UtteranceId>,
    pub dropped: Vec<UtteranceId>,
    /// Fraction of the speaker's utterances that were kept.
    pub vsr: f64,
    pub eps: f64,
    pub outcome: CleaningOutcome,
}

impl CleaningReport {
    fn new(speaker: SpeakerId, kept: Vec<UtteranceId>, dropped: Vec<UtteranceId>, eps: f64, outcome: CleaningOutcome) -> Self {
        let total = kept.len() + dropped.len();
        let vsr = if total == 0 { 1.0 } else { kept.len() as f64 / total as f64 };
        Self { speaker, kept, dropped, vsr, eps, outcome }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CleaningParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for CleaningParams {
    fn default() -> Self {
        Self { eps: 80.0, min_pts: 3 }
    }
}

/// Clusters one speaker from a precomputed distance matrix.
pub fn clean_with_distances(
    speaker: SpeakerId,
    utts: &[UtteranceId],
    d: Option<&DistanceMatrix>,
    eps: f64,
    min_pts: usize,
) -> Result<CleaningReport> {
    let pass = |outcome| Ok(CleaningReport::new(speaker.clone(), utts.to_vec(), Vec::new(), eps, outcome));
    let Some(d) = d else {
        return pass(CleaningOutcome::PassThrough);
    };
    if utts.len() < min_pts.max(2) {
        return pass(CleaningOutcome::PassThrough);
    }
    let assignment = dbscan(d, eps, min_pts)?;
    let Some(cluster) = largest_cluster(&assignment) else {
        return pass(CleaningOutcome::AllNoiseFallback);
    };
    let members: BTreeSet<usize> = cluster.members.into_iter().collect();
    let (mut kept, mut dropped) = (Vec::new(), Vec::new());
    for (i, u) in utts.iter().enumerate() {
        if members.contains(&i) {
            kept.push(u.clone());
        } else {
            dropped.push(u.clone());
        }
    }
    Ok(CleaningReport::new(speaker, kept, dropped, eps, CleaningOutcome::Clustered))
}

/// Cleans one speaker's utterances (raw embeddings, preprocessed by the
/// backend before scoring).
pub fn clean_speaker(
    backend: &Backend,
    speaker: SpeakerId,
    items: &[(UtteranceId, Vec<f64>)],
    params: &CleaningParams,
) -> Result<CleaningReport> {
    if !params.eps.is_finite() || params.eps < 0.0 || params.min_pts == 0 {
        return Err(Error::InvalidParameter(format!("eps {} / min_pts {}", params.eps, params.min_pts)));
    }
    let utts: Vec<UtteranceId> = items.iter().map(|(u, _)| u.clone()).collect();
    let d = speaker_distances(backend, items.iter().map(|(_, v)| v.as_slice()))?;
    clean_with_distances(speaker, &utts, d.as_ref(), params.eps, params.min_pts)
}

fn speaker_distances<'a>(
    backend: &Backend,
    vectors: impl Iterator<Item = &'a [f64]>,
) -> Result<Option<DistanceMatrix>> {
    let xs = vectors.map(|v| backend.preprocess(v)).collect::<Result<Vec<_>>>()?;
    if xs.len() < 2 {
        return Ok(None);
    }
    plda_distance_matrix(&backend.plda, &xs).map(Some)
}

/// Per-speaker distance matrices of a corpus, computed once and reused
/// across an eps grid.
#[derive(Debug, Clone)]
pub struct SpeakerDistances {
    pub speakers: Vec<(SpeakerId, Vec<UtteranceId>, Option<DistanceMatrix>)>,
}

impl SpeakerDistances {
    pub fn compute(backend: &Backend, corpus: &LabeledEmbeddingSet) -> Result<Self> {
        let items = corpus.items();
        let speakers = corpus
            .by_speaker()
            .into_iter()
            .map(|(spk, idx)| {
                let utts = idx.iter().map(|&i| items[i].utt.clone()).collect();
                let d = speaker_distances(backend, idx.iter().map(|&i| items[i].vector.as_slice()))?;
                Ok((spk.clone(), utts, d))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { speakers })
    }

    pub fn clean(&self, eps: f64, min_pts: usize) -> Result<Vec<CleaningReport>> {
        self.speakers
            .iter()
            .map(|(spk, utts, d)| clean_with_distances(spk.clone(), utts, d.as_ref(), eps, min_pts))
            .collect()
    }

    /// Largest finite distance over all speakers.
    pub fn max_distance(&self) -> f64 {
        self.speakers.iter().filter_map(|(_, _, d)| d.as_ref()).map(DistanceMatrix::max_entry).fold(0.0, f64::max)
    }
}

/// Keeps only the utterances the reports marked as kept.
pub fn apply_cleaning(corpus: &LabeledEmbeddingSet, reports: &[CleaningReport]) -> LabeledEmbeddingSet {
    let kept: BTreeSet<&UtteranceId> = reports.iter().flat_map(|r| r.kept.iter()).collect();
    corpus.filter(|it| kept.contains(&it.utt))
}

pub fn mean_vsr(reports: &[CleaningReport]) -> f64 {
    if reports.is_empty() {
        return 1.0;
    }
    reports.iter().map(|r| r.vsr).sum::<f64>() / reports.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub mean_vsr: f64,
    pub kept: usize,
    pub total: usize,
    pub verification: Option<VerificationReport>,
    pub reports: Vec<CleaningReport>,
}

/// Cleans every speaker at each eps. When `evaluate` is given it is run on
/// each cleaned corpus and its report attached to the row.
pub fn eps_sweep(
    backend: &Backend,
    corpus: &LabeledEmbeddingSet,
    eps_list: &[f64],
    min_pts: usize,
    mut evaluate: Option<&mut dyn FnMut(&LabeledEmbeddingSet) -> Result<VerificationReport>>,
) -> Result<Vec<SweepRow>> {
    if eps_list.is_empty() {
        return Err(Error::InvalidParameter("eps list is empty".into()));
    }
    if corpus.n_speakers() < 2 {
        return Err(Error::InsufficientData("sweep needs at least 2 speakers".into()));
    }
    let distances = SpeakerDistances::compute(backend, corpus)?;
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let reports = distances.clean(eps, min_pts)?;
        let kept = reports.iter().map(|r| r.kept.len()).sum();
        let verification = match evaluate.as_mut() {
            Some(f) => Some(f(&apply_cleaning(corpus, &reports))?),
            None => None,
        };
        rows.push(SweepRow { eps, mean_vsr: mean_vsr(&reports), kept, total: corpus.len(), verification, reports });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use alloc::vec;

    fn toy_model() -> PldaModel {
        PldaModel::new(vec![0.0, 0.0], Matrix::identity(2).scale(4.0), Matrix::identity(2)).unwrap()
    }

    fn utt(i: u32) -> UtteranceId {
        format!("s/v/{i}").parse().unwrap()
    }

    #[test]
    fn identical_pair_is_at_distance_zero() {
        let d = plda_distance_matrix(&toy_model(), &[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_eq!(d.get(0, 1), 0.0);
    }

    #[test]
    fn toy_distances_match_hand_computation() {
        // B = 4I, W = I: transform is the identity and psi = 4 on both axes,
        // so s(a, b) = sum_k [-ln(9)/2 + ln(5) - (5(a²+b²) - 8ab)/18 + (a²+b²)/10].
        let per_dim = |a: f64, b: f64| {
            -0.5 * libm::log(9.0) + libm::log(5.0) - (5.0 * (a * a + b * b) - 8.0 * a * b) / 18.0
                + (a * a + b * b) / 10.0
        };
        let s = |x: &[f64], y: &[f64]| per_dim(x[0], y[0]) + per_dim(x[1], y[1]);
        let xs = vec![vec![1.0, 0.0], vec![0.8, 0.3], vec![-1.0, 0.5]];
        let model = toy_model();
        let (s01, s02, s12) = (s(&xs[0], &xs[1]), s(&xs[0], &xs[2]), s(&xs[1], &xs[2]));
        let max = s01.max(s02).max(s12);
        let d = plda_distance_matrix(&model, &xs).unwrap();
        assert!((d.get(0, 1) - (max - s01)).abs() < 1e-12);
        assert!((d.get(0, 2) - (max - s02)).abs() < 1e-12);
        assert!((d.get(1, 2) - (max - s12)).abs() < 1e-12);
        assert_eq!(d.min_off_diagonal(), Some(0.0));
    }

    #[test]
    fn fewer_than_two_vectors_is_an_error() {
        assert!(plda_distance_matrix(&toy_model(), &[vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn small_speakers_pass_through() {
        let spk = SpeakerId::new("s").unwrap();
        let utts = vec![utt(0), utt(1)];
        let d = DistanceMatrix::new(2, vec![0.0, 100.0, 100.0, 0.0]).unwrap();
        let r = clean_with_distances(spk.clone(), &utts, Some(&d), 1.0, 3).unwrap();
        assert_eq!(r.outcome, CleaningOutcome::PassThrough);
        assert_eq!(r.vsr, 1.0);
        let r = clean_with_distances(spk, &utts[..1], None, 1.0, 3).unwrap();
        assert_eq!((r.kept.len(), r.outcome), (1, CleaningOutcome::PassThrough));
    }

    #[test]
    fn all_noise_keeps_everything_flagged() {
        let spk = SpeakerId::new("s").unwrap();
        let utts: Vec<_> = (0..4).map(utt).collect();
        let d = DistanceMatrix::from_fn(4, |i, j| 10.0 * (i + j) as f64).unwrap();
        let r = clean_with_distances(spk, &utts, Some(&d), 1.0, 3).unwrap();
        assert_eq!(r.outcome, CleaningOutcome::AllNoiseFallback);
        assert_eq!(r.kept, utts);
        assert!(r.dropped.is_empty());
        assert_eq!(r.vsr, 1.0);
    }

    #[test]
    fn largest_cluster_is_kept() {
        let spk = SpeakerId::new("s").unwrap();
        let xs: [f64; 7] = [0.0, 0.1, 0.2, 0.3, 5.0, 5.1, 9.0];
        let utts: Vec<_> = (0..xs.len() as u32).map(utt).collect();
        let d = DistanceMatrix::from_fn(xs.len(), |i, j| (xs[i] - xs[j]).abs()).unwrap();
        let r = clean_with_distances(spk, &utts, Some(&d), 0.5, 2).unwrap();
        assert_eq!(r.kept, utts[..4].to_vec());
        assert_eq!(r.dropped, utts[4..].to_vec());
        assert!((r.vsr - 4.0 / 7.0).abs() < 1e-15);
        // eps above the largest distance keeps everything.
        let r = clean_with_distances(r.speaker, &utts, Some(&d), d.max_entry(), 2).unwrap();
        assert_eq!(r.vsr, 1.0);
    }
}
