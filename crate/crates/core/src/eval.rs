//! Verification trials and error metrics (EER, minDCF).

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendParams, LabeledEmbeddingSet};
use crate::model::{SpeakerId, UtteranceId};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialLabel {
    Target,
    Nontarget,
}

impl TrialLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Target => "target",
            Self::Nontarget => "nontarget",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub enroll: UtteranceId,
    pub test: UtteranceId,
    pub label: TrialLabel,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialList {
    pub trials: Vec<Trial>,
    /// Speakers with a single utterance; they yield no target trials.
    pub singleton_speakers: Vec<SpeakerId>,
}

/// Builds target and non-target trials over a test set.
///
/// Every unordered same-speaker pair is one target trial, attributed to its
/// earlier utterance. Each utterance then gets as many non-target trials as
/// target trials it owns, drawn without replacement from the other
/// speakers' utterances.
pub fn build_trials(test: &LabeledEmbeddingSet, seed: u64) -> Result<TrialList> {
    let groups = test.by_speaker();
    if groups.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "trials need at least 2 speakers, got {}",
            groups.len()
        )));
    }
    let items = test.items();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = TrialList::default();
    for (speaker, idx) in &groups {
        if idx.len() < 2 {
            out.singleton_speakers.push((*speaker).clone());
        }
        let others: Vec<usize> = (0..items.len()).filter(|&j| items[j].speaker() != *speaker).collect();
        for (k, &i) in idx.iter().enumerate() {
            let owned = &idx[k + 1..];
            for &j in owned {
                out.trials.push(Trial {
                    enroll: items[i].utt.clone(),
                    test: items[j].utt.clone(),
                    label: TrialLabel::Target,
                });
            }
            let count = owned.len().min(others.len());
            for &j in others.choose_multiple(&mut rng, count) {
                out.trials.push(Trial {
                    enroll: items[i].utt.clone(),
                    test: items[j].utt.clone(),
                    label: TrialLabel::Nontarget,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrial {
    pub score: f64,
    pub label: TrialLabel,
}

/// Scores with target / non-target labels, ready for metric computation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialSet {
    trials: Vec<ScoredTrial>,
}

impl TrialSet {
    pub fn new(trials: Vec<ScoredTrial>) -> Result<Self> {
        if trials.iter().any(|t| !t.score.is_finite()) {
            return Err(Error::NonFinite("trial score"));
        }
        Ok(Self { trials })
    }

    pub fn from_scores(targets: &[f64], nontargets: &[f64]) -> Result<Self> {
        let trials = targets
            .iter()
            .map(|&score| ScoredTrial { score, label: TrialLabel::Target })
            .chain(nontargets.iter().map(|&score| ScoredTrial { score, label: TrialLabel::Nontarget }))
            .collect();
        Self::new(trials)
    }

    pub fn trials(&self) -> &[ScoredTrial] {
        &self.trials
    }

    pub fn push(&mut self, trial: ScoredTrial) -> Result<()> {
        if !trial.score.is_finite() {
            return Err(Error::NonFinite("trial score"));
        }
        self.trials.push(trial);
        Ok(())
    }

    pub fn counts(&self) -> (usize, usize) {
        let t = self.trials.iter().filter(|t| t.label == TrialLabel::Target).count();
        (t, self.trials.len() - t)
    }
}

/// One operating point: accept when `score >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Operating points at every distinct score plus `+inf`, in increasing
/// threshold order. FAR falls and FRR rises along the list.
pub fn operating_points(set: &TrialSet) -> Result<Vec<OperatingPoint>> {
    let (n_tgt, n_non) = set.counts();
    if n_tgt == 0 || n_non == 0 {
        return Err(Error::MissingTrialLabel);
    }
    let mut sorted: Vec<ScoredTrial> = set.trials.clone();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    let mut points = Vec::with_capacity(sorted.len() + 1);
    let (mut tgt_below, mut non_below) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].score;
        points.push(OperatingPoint {
            threshold,
            far: (n_non - non_below) as f64 / n_non as f64,
            frr: tgt_below as f64 / n_tgt as f64,
        });
        while i < sorted.len() && sorted[i].score == threshold {
            match sorted[i].label {
                TrialLabel::Target => tgt_below += 1,
                TrialLabel::Nontarget => non_below += 1,
            }
            i += 1;
        }
    }
    points.push(OperatingPoint { threshold: f64::INFINITY, far: 0.0, frr: 1.0 });
    Ok(points)
}

/// Equal error rate in percent, linearly interpolated between the two
/// operating points that bracket the FAR = FRR crossing.
pub fn compute_eer(set: &TrialSet) -> Result<f64> {
    let points = operating_points(set)?;
    Ok(100.0 * eer_from_points(&points))
}

pub(crate) fn eer_from_points(points: &[OperatingPoint]) -> f64 {
    for w in points.windows(2) {
        let d0 = w[0].frr - w[0].far;
        let d1 = w[1].frr - w[1].far;
        if d0 >= 0.0 {
            return w[0].far;
        }
        if d1 >= 0.0 {
            let alpha = -d0 / (d1 - d0);
            return w[0].far + alpha * (w[1].far - w[0].far);
        }
    }
    // The last point (+inf) always has FRR - FAR = 1.
    points.last().map_or(0.0, |p| p.far)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        Self { p_target: 0.01, c_miss: 1.0, c_fa: 1.0 }
    }
}

impl DcfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(Error::InvalidParameter(format!("p_target {} not in (0, 1)", self.p_target)));
        }
        if !(self.c_miss > 0.0 && self.c_fa > 0.0) || !self.c_miss.is_finite() || !self.c_fa.is_finite() {
            return Err(Error::InvalidParameter("DCF costs must be positive".into()));
        }
        Ok(())
    }
}

/// Minimum normalised detection cost over all thresholds.
pub fn compute_min_dcf(set: &TrialSet, params: &DcfParams) -> Result<f64> {
    params.validate()?;
    let points = operating_points(set)?;
    let miss_weight = params.c_miss * params.p_target;
    let fa_weight = params.c_fa * (1.0 - params.p_target);
    let norm = miss_weight.min(fa_weight);
    Ok(points
        .iter()
        .map(|p| (miss_weight * p.frr + fa_weight * p.far) / norm)
        .fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// Percent.
    pub eer: f64,
    pub min_dcf: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub dcf: DcfParams,
}

pub fn verification_report(set: &TrialSet, dcf: &DcfParams) -> Result<VerificationReport> {
    let (n_target, n_nontarget) = set.counts();
    Ok(VerificationReport {
        eer: compute_eer(set)?,
        min_dcf: compute_min_dcf(set, dcf)?,
        n_target,
        n_nontarget,
        dcf: *dcf,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerSplit {
    pub train: Vec<SpeakerId>,
    pub test: Vec<SpeakerId>,
}

impl SpeakerSplit {
    pub fn is_train(&self, s: &SpeakerId) -> bool {
        self.train.binary_search(s).is_ok()
    }

    pub fn is_test(&self, s: &SpeakerId) -> bool {
        self.test.binary_search(s).is_ok()
    }
}

/// Fraction of speakers reserved for backend training.
pub const TRAIN_FRACTION: f64 = 0.8;

/// Deterministic speaker-disjoint split: shuffle the sorted speaker list with
/// `seed` and keep the first 80% for training.
pub fn split_speakers(speakers: &[SpeakerId], seed: u64) -> Result<SpeakerSplit> {
    let mut all: Vec<SpeakerId> = speakers.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let n_train = libm::floor(all.len() as f64 * TRAIN_FRACTION) as usize;
    if n_train < 2 || all.len() - n_train < 2 {
        return Err(Error::InsufficientData(format!(
            "{} speakers cannot be split into >= 2 train and >= 2 test speakers",
            all.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    let mut test = all.split_off(n_train);
    all.sort();
    test.sort();
    Ok(SpeakerSplit { train: all, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct EvalParams {
    pub backend: BackendParams,
    pub dcf: DcfParams,
    pub split_seed: u64,
}


#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub split: SpeakerSplit,
    pub backend: Backend,
    pub trials: Vec<Trial>,
    pub scores: Vec<f64>,
    pub report: VerificationReport,
}

/// Scores a trial list with a trained backend.
pub fn score_trials(backend: &Backend, set: &LabeledEmbeddingSet, trials: &[Trial]) -> Result<Vec<f64>> {
    let mut lookup = alloc::collections::BTreeMap::new();
    for it in set.items() {
        lookup.insert(&it.utt, backend.preprocess(&it.vector)?);
    }
    trials
        .iter()
        .map(|t| {
            let (Some(a), Some(b)) = (lookup.get(&t.enroll), lookup.get(&t.test)) else {
                return Err(Error::InsufficientData(format!("trial {} {} not in set", t.enroll, t.test)));
            };
            backend.plda.score(a, b)
        })
        .collect()
}

/// Splits the corpus by speaker, trains the backend on the training side and
/// measures verification error on the test side.
pub fn evaluate_corpus(corpus: &LabeledEmbeddingSet, params: &EvalParams) -> Result<Evaluation> {
    let split = split_speakers(&corpus.speakers(), params.split_seed)?;
    evaluate_split(corpus, &split, params)
}

/// Like [`evaluate_corpus`] with a fixed split.
pub fn evaluate_split(corpus: &LabeledEmbeddingSet, split: &SpeakerSplit, params: &EvalParams) -> Result<Evaluation> {
    let train = corpus.filter(|it| split.is_train(it.speaker()));
    let (backend, _) = Backend::train(&train, &params.backend)?;
    evaluate_trained(backend, corpus, split, params)
}

/// Scores the test side of `split` with an already trained backend.
pub fn evaluate_trained(
    backend: Backend,
    corpus: &LabeledEmbeddingSet,
    split: &SpeakerSplit,
    params: &EvalParams,
) -> Result<Evaluation> {
    let test = corpus.filter(|it| split.is_test(it.speaker()));
    let trials = build_trials(&test, params.split_seed ^ 0x5eed_7a1a)?.trials;
    let scores = score_trials(&backend, &test, &trials)?;
    let set = TrialSet::new(
        scores.iter().zip(&trials).map(|(&score, t)| ScoredTrial { score, label: t.label }).collect(),
    )?;
    let report = verification_report(&set, &params.dcf)?;
    Ok(Evaluation { split: split.clone(), backend, trials, scores, report })
}
