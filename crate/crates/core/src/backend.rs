//! Speaker-verification backend: centring, LDA, length normalisation and a
//! two-covariance PLDA model trained with EM.
//!
//! The generative model behind PLDA is `x = mu + y + e` where the speaker
//! offset `y ~ N(0, B)` is shared by all utterances of a speaker and the
//! channel term `e ~ N(0, W)` is drawn per utterance.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::linalg::{self, Matrix};
use crate::model::{Embedding, SpeakerId, UtteranceId};
use crate::{Error, Result};

/// Eigenvalue floor applied to PLDA covariances.
pub const COVARIANCE_FLOOR: f64 = 1e-6;
/// Ridge added to the LDA within-class scatter, relative to its mean eigenvalue.
pub const LDA_RIDGE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVector {
    pub utt: UtteranceId,
    pub vector: Vec<f64>,
}

impl LabeledVector {
    pub fn speaker(&self) -> &SpeakerId {
        &self.utt.speaker
    }
}

/// Utterance vectors labelled by the speaker encoded in their id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddingSet {
    dim: usize,
    items: Vec<LabeledVector>,
}

impl LabeledEmbeddingSet {
    pub fn new(dim: usize, items: Vec<LabeledVector>) -> Result<Self> {
        for it in &items {
            if it.vector.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: it.vector.len() });
            }
            if it.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("embedding"));
            }
        }
        Ok(Self { dim, items })
    }

    /// Parses each embedding id as an [`UtteranceId`].
    pub fn from_embeddings(embeddings: &[Embedding]) -> Result<Self> {
        let dim = crate::model::common_dim(embeddings)?.unwrap_or(0);
        let items = embeddings
            .iter()
            .map(|e| Ok(LabeledVector { utt: e.id.parse()?, vector: e.to_f64() }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(dim, items)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[LabeledVector] {
        &self.items
    }

    pub fn into_items(self) -> Vec<LabeledVector> {
        self.items
    }

    /// Item positions grouped by speaker, speakers in sorted order.
    pub fn by_speaker(&self) -> BTreeMap<&SpeakerId, Vec<usize>> {
        let mut map: BTreeMap<&SpeakerId, Vec<usize>> = BTreeMap::new();
        for (i, it) in self.items.iter().enumerate() {
            map.entry(it.speaker()).or_default().push(i);
        }
        map
    }

    pub fn speakers(&self) -> Vec<SpeakerId> {
        self.by_speaker().into_keys().cloned().collect()
    }

    pub fn n_speakers(&self) -> usize {
        self.by_speaker().len()
    }

    /// Keeps the items for which `keep` returns true.
    pub fn filter(&self, mut keep: impl FnMut(&LabeledVector) -> bool) -> Self {
        Self { dim: self.dim, items: self.items.iter().filter(|it| keep(it)).cloned().collect() }
    }

    /// Applies `f` to every vector.
    pub fn map_vectors(&self, mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<Self> {
        let items = self
            .items
            .iter()
            .map(|it| Ok(LabeledVector { utt: it.utt.clone(), vector: f(&it.vector)? }))
            .collect::<Result<Vec<_>>>()?;
        let dim = items.first().map_or(0, |it: &LabeledVector| it.vector.len());
        Self::new(dim, items)
    }

    fn require_speakers(&self, min: usize) -> Result<()> {
        let n = self.n_speakers();
        if n < min {
            return Err(Error::InsufficientData(format!("need at least {min} speakers, got {n}")));
        }
        Ok(())
    }
}

fn mean_vector(dim: usize, vectors: impl Iterator<Item = impl AsRef<[f64]>>) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    let mut n = 0usize;
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v.as_ref()) {
            *m += x;
        }
        n += 1;
    }
    if n > 0 {
        mean.iter_mut().for_each(|m| *m /= n as f64);
    }
    mean
}

/// Projection onto the most speaker-discriminative directions.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaTransform {
    pub mean: Vec<f64>,
    /// `r x d`, rows ordered by decreasing discriminant ratio.
    pub projection: Matrix,
    pub eigenvalues: Vec<f64>,
}

impl LdaTransform {
    pub fn input_dim(&self) -> usize {
        self.projection.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        Ok(self.projection.mul_vec(&linalg::sub(x, &self.mean)))
    }
}

/// Within- and between-class scatter, both normalised by the sample count.
pub fn class_scatter(data: &LabeledEmbeddingSet) -> (Vec<f64>, Matrix, Matrix) {
    let d = data.dim();
    let n = data.len() as f64;
    let mean = mean_vector(d, data.items().iter().map(|it| &it.vector));
    let mut within = Matrix::zeros(d, d);
    let mut between = Matrix::zeros(d, d);
    for idx in data.by_speaker().values() {
        let class_mean = mean_vector(d, idx.iter().map(|&i| &data.items()[i].vector));
        for &i in idx {
            let dev = linalg::sub(&data.items()[i].vector, &class_mean);
            within.add_outer(1.0 / n, &dev, &dev);
        }
        let dev = linalg::sub(&class_mean, &mean);
        between.add_outer(idx.len() as f64 / n, &dev, &dev);
    }
    within.symmetrize();
    between.symmetrize();
    (mean, within, between)
}

/// Fits an LDA projection to `r` dimensions.
///
/// Solves the generalised eigenproblem `S_b w = lambda S_w w` with `S_w`
/// ridge-regularised. Rows are scaled so that projected within-class
/// covariance is the identity.
pub fn fit_lda(data: &LabeledEmbeddingSet, r: usize) -> Result<LdaTransform> {
    data.require_speakers(2)?;
    let d = data.dim();
    let bound = d.min(data.n_speakers() - 1);
    if r == 0 || r > bound {
        return Err(Error::RankTooLarge { requested: r, bound });
    }
    let (mean, mut within, between) = class_scatter(data);
    let ridge = LDA_RIDGE * within.trace() / d as f64;
    within.add_diagonal(ridge);
    let chol = within.cholesky().map_err(|_| Error::SingularScatter)?;
    let l_inv = chol.lower_inverse();
    let mut m = l_inv.matmul(&between).matmul(&l_inv.transpose());
    m.symmetrize();
    let eig = m.symmetric_eigen();
    let mut projection = Matrix::zeros(r, d);
    for k in 0..r {
        // w = L^{-T} v
        let w = chol.solve_upper(&eig.vectors.column(k));
        projection.row_mut(k).copy_from_slice(&w);
    }
    Ok(LdaTransform { mean, projection, eigenvalues: eig.values[..r].to_vec() })
}

/// Scales `x` to norm `sqrt(dim)`.
pub fn length_normalize(x: &[f64]) -> Result<Vec<f64>> {
    let norm = linalg::norm(x);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::InvalidParameter("cannot length-normalise a zero vector".into()));
    }
    let scale = libm::sqrt(x.len() as f64) / norm;
    Ok(x.iter().map(|v| v * scale).collect())
}

/// Two-covariance PLDA model with a cached simultaneous diagonalisation of
/// `W` and `B` for fast scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel {
    pub mu: Vec<f64>,
    pub between: Matrix,
    pub within: Matrix,
    /// `A` with `A W A^T = I` and `A B A^T = diag(psi)`.
    transform: Matrix,
    psi: Vec<f64>,
}

impl PldaModel {
    pub fn new(mu: Vec<f64>, between: Matrix, within: Matrix) -> Result<Self> {
        let r = mu.len();
        for m in [&between, &within] {
            if m.rows() != r || m.cols() != r {
                return Err(Error::DimensionMismatch { expected: r, got: m.rows() });
            }
            if !m.is_finite() {
                return Err(Error::NonFinite("PLDA covariance"));
            }
        }
        let chol = within.cholesky()?;
        let l_inv = chol.lower_inverse();
        let mut m = l_inv.matmul(&between).matmul(&l_inv.transpose());
        m.symmetrize();
        let eig = m.symmetric_eigen();
        let transform = eig.vectors.transpose().matmul(&l_inv);
        let psi = eig.values.iter().map(|&v| v.max(0.0)).collect();
        Ok(Self { mu, between, within, transform, psi })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Log-likelihood ratio of "same speaker" against "different speakers".
    pub fn score(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        Ok(self.score_projected(&self.project(x1)?, &self.project(x2)?))
    }

    /// Coordinates in which `W` is the identity and `B` is diagonal. Scoring
    /// many pairs is cheaper from these.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(self.transform.mul_vec(&linalg::sub(x, &self.mu)))
    }

    /// [`PldaModel::score`] on outputs of [`PldaModel::project`].
    pub fn score_projected(&self, u1: &[f64], u2: &[f64]) -> f64 {
        let mut llr = 0.0;
        for ((&a, &b), &psi) in u1.iter().zip(u2).zip(&self.psi) {
            let same_det = 2.0 * psi + 1.0;
            let diff_var = psi + 1.0;
            let sq = a * a + b * b;
            llr += -0.5 * libm::log(same_det) + libm::log(diff_var)
                - 0.5 * (diff_var * sq - 2.0 * psi * a * b) / same_det
                + 0.5 * sq / diff_var;
        }
        llr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PldaParams {
    pub iters: usize,
    pub floor: f64,
}

impl Default for PldaParams {
    fn default() -> Self {
        Self { iters: 10, floor: COVARIANCE_FLOOR }
    }
}

/// Per-speaker sufficient statistics for the two-covariance model.
struct PldaStats {
    dim: usize,
    n_total: usize,
    mu: Vec<f64>,
    /// (count, sum of centred vectors) per speaker.
    speakers: Vec<(usize, Vec<f64>)>,
    /// Sum over all utterances of centred outer products.
    scatter: Matrix,
    /// Within-speaker scatter around each speaker's own mean, summed.
    within_scatter: Matrix,
}

impl PldaStats {
    fn new(data: &LabeledEmbeddingSet) -> Self {
        let dim = data.dim();
        let mu = mean_vector(dim, data.items().iter().map(|it| &it.vector));
        let mut scatter = Matrix::zeros(dim, dim);
        let mut within_scatter = Matrix::zeros(dim, dim);
        let mut speakers = Vec::new();
        for idx in data.by_speaker().values() {
            let mut f = vec![0.0; dim];
            for &i in idx {
                let c = linalg::sub(&data.items()[i].vector, &mu);
                scatter.add_outer(1.0, &c, &c);
                f.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
            }
            let n = idx.len();
            within_scatter.add_outer(-1.0 / n as f64, &f, &f);
            speakers.push((n, f));
        }
        within_scatter.add_in_place(&scatter);
        within_scatter.symmetrize();
        scatter.symmetrize();
        Self { dim, n_total: data.len(), mu, speakers, scatter, within_scatter }
    }

    fn distinct_counts(&self) -> Vec<usize> {
        let mut counts: Vec<usize> = self.speakers.iter().map(|(n, _)| *n).collect();
        counts.sort_unstable();
        counts.dedup();
        counts
    }

    /// Marginal log-likelihood of all data under `(B, W)`.
    fn log_likelihood(&self, between: &Matrix, within: &Matrix) -> Result<f64> {
        let d = self.dim as f64;
        let w_chol = within.cholesky()?;
        let w_logdet = w_chol.log_det();
        let w_inv = w_chol.inverse();
        let mut ll = -0.5 * trace_product(&w_inv, &self.within_scatter);
        let mut cache: BTreeMap<usize, linalg::Cholesky> = BTreeMap::new();
        for n in self.distinct_counts() {
            cache.insert(n, within.add(&between.scale(n as f64)).cholesky()?);
        }
        for (n, f) in &self.speakers {
            let n = *n;
            let chol = &cache[&n];
            ll -= 0.5
                * (n as f64 * d * libm::log(2.0 * PI)
                    + (n as f64 - 1.0) * w_logdet
                    + chol.log_det()
                    + chol.quad_form_inv(f) / n as f64);
        }
        Ok(ll)
    }

    /// One EM update of `(B, W)` with `mu` held at the sample mean.
    fn em_step(&self, between: &Matrix, within: &Matrix, floor: f64) -> Result<(Matrix, Matrix)> {
        let dim = self.dim;
        let b_inv = between.cholesky()?.inverse();
        let w_inv = within.cholesky()?.inverse();
        let mut posterior_cov: BTreeMap<usize, Matrix> = BTreeMap::new();
        for n in self.distinct_counts() {
            let precision = b_inv.add(&w_inv.scale(n as f64));
            posterior_cov.insert(n, precision.cholesky()?.inverse());
        }
        let mut b_acc = Matrix::zeros(dim, dim);
        let mut w_acc = self.scatter.clone();
        for (n, f) in &self.speakers {
            let cov = &posterior_cov[n];
            let y = cov.mul_vec(&w_inv.mul_vec(f));
            b_acc.add_in_place(cov);
            b_acc.add_outer(1.0, &y, &y);
            w_acc.add_outer(-1.0, f, &y);
            w_acc.add_outer(-1.0, &y, f);
            w_acc.add_in_place(&cov.scale(*n as f64));
            w_acc.add_outer(*n as f64, &y, &y);
        }
        b_acc.scale_in_place(1.0 / self.speakers.len() as f64);
        w_acc.scale_in_place(1.0 / self.n_total as f64);
        b_acc.symmetrize();
        w_acc.symmetrize();
        Ok((b_acc.floor_eigenvalues(floor), w_acc.floor_eigenvalues(floor)))
    }
}

fn trace_product(a: &Matrix, b: &Matrix) -> f64 {
    // tr(A B) for symmetric B.
    a.as_slice().iter().zip(b.transpose().as_slice()).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PldaFit {
    pub model: PldaModel,
    /// Log-likelihood before the first update and after each iteration.
    pub log_likelihood: Vec<f64>,
}

/// Trains a two-covariance PLDA model by EM, starting from the empirical
/// between- and within-speaker covariances.
pub fn fit_plda(data: &LabeledEmbeddingSet, params: &PldaParams) -> Result<PldaFit> {
    data.require_speakers(2)?;
    if !(params.floor > 0.0) {
        return Err(Error::InvalidParameter("covariance floor must be positive".into()));
    }
    let stats = PldaStats::new(data);
    let dim = stats.dim;
    let mut between = Matrix::zeros(dim, dim);
    for (n, f) in &stats.speakers {
        let m: Vec<f64> = f.iter().map(|v| v / *n as f64).collect();
        between.add_outer(1.0 / stats.speakers.len() as f64, &m, &m);
    }
    let mut within = stats.within_scatter.scale(1.0 / stats.n_total as f64);
    between.symmetrize();
    within.symmetrize();
    between = between.floor_eigenvalues(params.floor);
    within = within.floor_eigenvalues(params.floor);
    let mut trace = vec![stats.log_likelihood(&between, &within)?];
    for _ in 0..params.iters {
        let (b, w) = stats.em_step(&between, &within, params.floor)?;
        between = b;
        within = w;
        trace.push(stats.log_likelihood(&between, &within)?);
    }
    Ok(PldaFit { model: PldaModel::new(stats.mu, between, within)?, log_likelihood: trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendParams {
    /// Requested LDA dimension; clipped to `min(dim, n_speakers - 1)`.
    pub lda_dim: usize,
    pub plda: PldaParams,
}

impl Default for BackendParams {
    fn default() -> Self {
        Self { lda_dim: 200, plda: PldaParams::default() }
    }
}

/// Trained scoring pipeline: centre, LDA, length-normalise, PLDA.
#[derive(Debug, Clone, PartialEq)]
pub struct Backend {
    pub lda: LdaTransform,
    pub plda: PldaModel,
}

impl Backend {
    pub fn train(data: &LabeledEmbeddingSet, params: &BackendParams) -> Result<(Self, Vec<f64>)> {
        data.require_speakers(2)?;
        let r = params.lda_dim.min(data.dim()).min(data.n_speakers() - 1).max(1);
        let lda = fit_lda(data, r)?;
        let projected = data.map_vectors(|x| length_normalize(&lda.apply(x)?))?;
        let fit = fit_plda(&projected, &params.plda)?;
        Ok((Self { lda, plda: fit.model }, fit.log_likelihood))
    }

    pub fn preprocess(&self, x: &[f64]) -> Result<Vec<f64>> {
        length_normalize(&self.lda.apply(x)?)
    }

    /// Scores two raw embeddings.
    pub fn score(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        self.plda.score(&self.preprocess(x1)?, &self.preprocess(x2)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn utt(spk: &str, i: u32) -> UtteranceId {
        format!("{spk}/v/{i}").parse().unwrap()
    }

    fn set(points: &[(&str, Vec<f64>)]) -> LabeledEmbeddingSet {
        let items = points
            .iter()
            .enumerate()
            .map(|(i, (s, v))| LabeledVector { utt: utt(s, i as u32), vector: v.clone() })
            .collect();
        LabeledEmbeddingSet::new(points[0].1.len(), items).unwrap()
    }

    #[test]
    fn lda_two_classes_aligns_with_separating_axis() {
        // Mirror-symmetric classes: any off-axis component would break the symmetry.
        let data = set(&[
            ("a", vec![-5.1, 0.3]),
            ("a", vec![-4.9, 0.3]),
            ("a", vec![-5.1, -0.3]),
            ("a", vec![-4.9, -0.3]),
            ("b", vec![5.1, 0.3]),
            ("b", vec![4.9, 0.3]),
            ("b", vec![5.1, -0.3]),
            ("b", vec![4.9, -0.3]),
        ]);
        let lda = fit_lda(&data, 1).unwrap();
        let row = lda.projection.row(0);
        let cos = row[0].abs() / linalg::norm(row);
        assert!(cos > 1.0 - 1e-9, "projection {row:?}");
    }

    #[test]
    fn lda_rank_bound() {
        let data = set(&[("a", vec![0.0, 1.0]), ("a", vec![0.5, 1.0]), ("b", vec![3.0, 0.0]), ("b", vec![3.0, 0.2])]);
        assert_eq!(fit_lda(&data, 2).unwrap_err(), Error::RankTooLarge { requested: 2, bound: 1 });
        assert!(fit_lda(&data, 0).is_err());
    }

    #[test]
    fn lda_needs_two_speakers() {
        let data = set(&[("a", vec![0.0, 1.0]), ("a", vec![0.5, 1.0])]);
        assert!(matches!(fit_lda(&data, 1), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn lda_rejects_zero_within_scatter() {
        let data = set(&[("a", vec![1.0, 1.0]), ("a", vec![1.0, 1.0]), ("b", vec![2.0, 0.0]), ("b", vec![2.0, 0.0])]);
        assert_eq!(fit_lda(&data, 1).unwrap_err(), Error::SingularScatter);
    }

    #[test]
    fn length_normalize_scales_to_sqrt_dim() {
        let x = [1.0, 0.0, 0.0, 0.0];
        let y = length_normalize(&x).unwrap();
        assert!((linalg::norm(&y) - 2.0).abs() < 1e-15);
        let z = length_normalize(&y).unwrap();
        for (a, b) in y.iter().zip(&z) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(length_normalize(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn identical_embeddings_hit_the_floor() {
        let points: Vec<(&str, Vec<f64>)> =
            ["a", "a", "b", "b", "c", "c"].iter().map(|s| (*s, vec![0.3, -0.2, 1.0])).collect();
        let fit = fit_plda(&set(&points), &PldaParams::default()).unwrap();
        let floor = Matrix::identity(3).scale(COVARIANCE_FLOOR);
        assert!(fit.model.between.sub(&floor).frobenius_norm() < 1e-15);
        assert!(fit.model.within.sub(&floor).frobenius_norm() < 1e-15);
    }

    #[test]
    fn score_is_symmetric_and_checks_dims() {
        let b = Matrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]);
        let w = Matrix::from_rows(&[vec![0.5, 0.1], vec![0.1, 0.4]]);
        let model = PldaModel::new(vec![0.1, -0.2], b, w).unwrap();
        let (x, y) = ([0.4, 1.3], [-0.7, 0.2]);
        let s1 = model.score(&x, &y).unwrap();
        let s2 = model.score(&y, &x).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
        assert!(model.score(&[1.0], &y).is_err());
    }

    #[test]
    fn from_embeddings_parses_ids() {
        let embs = vec![
            Embedding::new("s1/v1/00000", vec![1.0, 2.0]).unwrap(),
            Embedding::new("s2/v1/00001", vec![0.0, 2.0]).unwrap(),
        ];
        let set = LabeledEmbeddingSet::from_embeddings(&embs).unwrap();
        assert_eq!(set.n_speakers(), 2);
        assert_eq!(set.items()[1].speaker().to_string(), "s2");
        let bad = vec![Embedding::new("not-an-utterance", vec![1.0]).unwrap()];
        assert!(LabeledEmbeddingSet::from_embeddings(&bad).is_err());
    }
}
