//! Objective evaluation over audio embeddings and k-means sample selection.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor_io;

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_FAD_EPS: f64 = 1e-6;
pub const DEFAULT_KL_SMOOTH: f64 = 1e-9;
pub const DEFAULT_SURVEY_K: usize = 10;
const KMEANS_TOL: f64 = 1e-6;
const KMEANS_MAX_ITERS: usize = 300;

/// Labeled embedding rows, all of the same width.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(invalid("embedding set is empty"));
        }
        if ids.len() != rows.len() {
            return Err(invalid(format!(
                "{} ids for {} rows",
                ids.len(),
                rows.len()
            )));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(invalid("embedding rows have zero width"));
        }
        for (id, r) in ids.iter().zip(&rows) {
            if r.len() != dim {
                return Err(Error::Shape(format!(
                    "{id}: width {} differs from {dim}",
                    r.len()
                )));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("{id}: non-finite embedding value")));
            }
        }
        let unique: BTreeSet<&String> = ids.iter().collect();
        if unique.len() != ids.len() {
            return Err(invalid("embedding ids are not unique"));
        }
        Ok(Self { ids, rows })
    }

    /// Rows labeled `0..n` in order.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::new(ids, rows)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.ids
            .iter()
            .position(|x| x == id)
            .map(|i| self.rows[i].as_slice())
    }

    /// Same rows reordered to follow `ids`.
    pub fn aligned_to(&self, ids: &[String]) -> Result<Self> {
        let rows = ids
            .iter()
            .map(|id| {
                self.get(id)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| invalid(format!("id {id} missing from paired set")))
            })
            .collect::<Result<_>>()?;
        Self::new(ids.to_vec(), rows)
    }
}

/// A categorical distribution over classifier labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDistribution(Vec<f64>);

impl ProbDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("distribution has no classes"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid("probabilities must be finite and non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

fn moments(set: &EmbeddingSet) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = (set.len(), set.dim());
    let x = DMatrix::from_fn(n, d, |i, j| set.rows[i][j]);
    let mu = DVector::from_fn(d, |j, _| x.column(j).mean());
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mu[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    (mu, cov)
}

fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new((m + m.transpose()) * 0.5)
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = sym_eigen(m);
    let s = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&s) * e.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians fitted to two embedding sets.
pub fn fad(reference: &EmbeddingSet, generated: &EmbeddingSet, eps: f64) -> Result<f64> {
    if reference.len() < 2 || generated.len() < 2 {
        return Err(invalid("each set needs at least two embeddings"));
    }
    if reference.dim() != generated.dim() {
        return Err(Error::Shape(format!(
            "embedding widths differ: {} vs {}",
            reference.dim(),
            generated.dim()
        )));
    }
    let (mu_r, mut cov_r) = moments(reference);
    let (mu_g, mut cov_g) = moments(generated);
    fad_from_moments(&mu_r, &mut cov_r, &mu_g, &mut cov_g, eps)
}

/// FAD from given moments; covariances are regularized in place when either
/// has an eigenvalue at or below `eps`.
pub fn fad_from_moments(
    mu_r: &DVector<f64>,
    cov_r: &mut DMatrix<f64>,
    mu_g: &DVector<f64>,
    cov_g: &mut DMatrix<f64>,
    eps: f64,
) -> Result<f64> {
    let d = mu_r.len();
    if mu_g.len() != d || cov_r.shape() != (d, d) || cov_g.shape() != (d, d) {
        return Err(Error::Shape("moment dimensions disagree".into()));
    }
    let min_eig = |m: &DMatrix<f64>| sym_eigen(m).eigenvalues.min();
    if min_eig(cov_r) <= eps || min_eig(cov_g) <= eps {
        let reg = DMatrix::identity(d, d) * eps;
        *cov_r += &reg;
        *cov_g += &reg;
    }
    let root_r = psd_sqrt(cov_r);
    let inner = &root_r * &*cov_g * &root_r;
    let tr_root: f64 = sym_eigen(&inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let mean_term = (mu_r - mu_g).norm_squared();
    let value = mean_term + cov_r.trace() + cov_g.trace() - 2.0 * tr_root;
    Ok(value.max(0.0))
}

/// Distance from each point to its k-th nearest other point of the same set.
fn knn_radii(set: &EmbeddingSet, k: usize) -> Vec<f64> {
    set.rows
        .par_iter()
        .enumerate()
        .map(|(i, a)| {
            let mut d: Vec<f64> = set
                .rows
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| dist(a, b))
                .collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .collect()
}

/// Fraction of `generated` points inside at least one k-NN ball around a
/// `reference` point.
pub fn manifold_precision(
    reference: &EmbeddingSet,
    generated: &EmbeddingSet,
    k: usize,
) -> Result<f64> {
    if k == 0 || k >= reference.len() {
        return Err(invalid(format!(
            "k = {k} must be in 1..{} for {} reference points",
            reference.len(),
            reference.len()
        )));
    }
    if reference.dim() != generated.dim() {
        return Err(Error::Shape(format!(
            "embedding widths differ: {} vs {}",
            reference.dim(),
            generated.dim()
        )));
    }
    let radii = knn_radii(reference, k);
    let inside = generated
        .rows
        .par_iter()
        .filter(|g| {
            reference
                .rows
                .iter()
                .zip(&radii)
                .any(|(r, &rad)| dist(g, r) <= rad)
        })
        .count();
    Ok(inside as f64 / generated.len() as f64)
}

/// Fraction of `reference` points inside the generated manifold.
pub fn manifold_recall(
    reference: &EmbeddingSet,
    generated: &EmbeddingSet,
    k: usize,
) -> Result<f64> {
    manifold_precision(generated, reference, k)
}

/// Mean cosine similarity of rows paired by position.
pub fn paired_similarity(reference: &EmbeddingSet, generated: &EmbeddingSet) -> Result<f64> {
    if reference.len() != generated.len() || reference.dim() != generated.dim() {
        return Err(Error::Shape(format!(
            "paired sets differ in shape: {}×{} vs {}×{}",
            reference.len(),
            reference.dim(),
            generated.len(),
            generated.dim()
        )));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut zero = Vec::new();
    let mut total = 0.0;
    for i in 0..reference.len() {
        let (a, b) = (&reference.rows[i], &generated.rows[i]);
        let (na, nb) = (norm(a), norm(b));
        if na == 0.0 || nb == 0.0 {
            zero.push(reference.ids[i].clone());
            continue;
        }
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        total += (dot / (na * nb)).clamp(-1.0, 1.0);
    }
    if !zero.is_empty() {
        return Err(Error::ZeroNorm(zero));
    }
    Ok(total / reference.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// KL(reference ‖ generated)
    #[default]
    RefToGen,
    /// KL(generated ‖ reference)
    GenToRef,
}

fn smoothed(p: &[f64], smooth: f64) -> Vec<f64> {
    let total: f64 = p.iter().map(|v| v + smooth).sum();
    p.iter().map(|v| (v + smooth) / total).collect()
}

pub fn kl_divergence(p: &ProbDistribution, q: &ProbDistribution, smooth: f64) -> Result<f64> {
    if p.0.len() != q.0.len() {
        return Err(Error::Shape(format!(
            "{} vs {} classes",
            p.0.len(),
            q.0.len()
        )));
    }
    let (p, q) = (smoothed(&p.0, smooth), smoothed(&q.0, smooth));
    Ok(p.iter()
        .zip(&q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum::<f64>()
        .max(0.0))
}

/// Mean KL divergence over aligned distribution pairs.
pub fn paired_kl(
    reference: &[ProbDistribution],
    generated: &[ProbDistribution],
    smooth: f64,
    direction: KlDirection,
) -> Result<f64> {
    if reference.len() != generated.len() {
        return Err(Error::Shape(format!(
            "{} reference vs {} generated distributions",
            reference.len(),
            generated.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for (r, g) in reference.iter().zip(generated) {
        total += match direction {
            KlDirection::RefToGen => kl_divergence(r, g, smooth)?,
            KlDirection::GenToRef => kl_divergence(g, r, smooth)?,
        };
    }
    Ok(total / reference.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub sse_trace: Vec<f64>,
    pub iterations: usize,
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

fn plus_plus(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut chosen = vec![rng.random_range(0..rows.len())];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &rows[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total has a positive weight")
        } else {
            // All remaining points coincide with chosen centers.
            let free: Vec<usize> = (0..rows.len()).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, r) in rows.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, &rows[next]));
        }
    }
    chosen.into_iter().map(|i| rows[i].clone()).collect()
}

fn sse(rows: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    rows.iter()
        .zip(assignments)
        .map(|(r, &c)| sq_dist(r, &centroids[c]))
        .sum()
}

/// k-means++ seeding followed by Lloyd iterations until every centroid moves
/// less than 1e-6 (or 300 iterations). Empty clusters keep their centroid.
pub fn kmeans(set: &EmbeddingSet, k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || k > set.len() {
        return Err(invalid(format!("k = {k} must be in 1..={}", set.len())));
    }
    let rows = &set.rows;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(rows, k, &mut rng);
    let mut assignments: Vec<usize> = rows.iter().map(|r| nearest(r, &centroids)).collect();
    let mut sse_trace = vec![sse(rows, &centroids, &assignments)];
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERS {
        iterations += 1;
        let mut sums = vec![vec![0.0; set.dim()]; k];
        let mut counts = vec![0usize; k];
        for (r, &c) in rows.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(r) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let updated: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(dist(&updated, &centroids[c]));
            centroids[c] = updated;
        }
        assignments = rows.iter().map(|r| nearest(r, &centroids)).collect();
        sse_trace.push(sse(rows, &centroids, &assignments));
        if shift < KMEANS_TOL {
            break;
        }
    }
    Ok(KMeans {
        centroids,
        assignments,
        sse_trace,
        iterations,
    })
}

/// One representative id per cluster: the member nearest its centroid. A
/// cluster left empty takes the nearest point not already selected.
pub fn kmeans_select(set: &EmbeddingSet, k: usize, seed: u64) -> Result<Vec<String>> {
    let km = kmeans(set, k, seed)?;
    let mut taken = vec![false; set.len()];
    let mut out = Vec::with_capacity(k);
    for (c, centroid) in km.centroids.iter().enumerate() {
        let members: Vec<usize> = (0..set.len()).filter(|&i| km.assignments[i] == c).collect();
        let pool: Vec<usize> = if members.is_empty() {
            (0..set.len()).filter(|&i| !taken[i]).collect()
        } else {
            members
        };
        let best = pool
            .into_iter()
            .min_by(|&a, &b| {
                sq_dist(&set.rows[a], centroid).total_cmp(&sq_dist(&set.rows[b], centroid))
            })
            .expect("k <= n leaves a candidate");
        taken[best] = true;
        out.push(set.ids[best].clone());
    }
    Ok(out)
}

/// Loads every tensor in `dir` as one embedding keyed by file stem. Matrices
/// with several rows (frame-level embeddings) are mean-pooled.
pub fn load_embedding_dir(dir: &Path) -> Result<EmbeddingSet> {
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (id, stem) in tensor_io::list_tensors(dir)? {
        let t = tensor_io::read_tensor(&stem)?;
        let (r, c) = t.rows_cols()?;
        if r == 0 || c == 0 {
            return Err(invalid(format!("{id}: empty tensor")));
        }
        let mut row = vec![0.0; c];
        for i in 0..r {
            for (j, v) in row.iter_mut().enumerate() {
                *v += t.data[i * c + j] as f64;
            }
        }
        row.iter_mut().for_each(|v| *v /= r as f64);
        ids.push(id);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(invalid(format!("no embeddings found in {}", dir.display())));
    }
    EmbeddingSet::new(ids, rows)
}

/// Loads per-id class distributions (1-D tensors) from `dir`.
pub fn load_distribution_dir(dir: &Path) -> Result<Vec<(String, ProbDistribution)>> {
    tensor_io::list_tensors(dir)?
        .into_iter()
        .map(|(id, stem)| {
            let t = tensor_io::read_tensor(&stem)?;
            let p = ProbDistribution::new(t.data.iter().map(|&v| v as f64).collect())
                .map_err(|e| invalid(format!("{id}: {e}")))?;
            Ok((id, p))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fad: f64,
    pub precision: f64,
    pub recall: f64,
    /// Present when both sets contain the same ids.
    pub similarity: Option<f64>,
    /// Present when class distributions were supplied.
    pub kl: Option<f64>,
    pub n_ref: usize,
    pub n_gen: usize,
    pub k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub k: usize,
    pub seed: u64,
    pub fad_eps: f64,
    pub kl_smooth: f64,
    pub kl_direction: KlDirection,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            seed: 0,
            fad_eps: DEFAULT_FAD_EPS,
            kl_smooth: DEFAULT_KL_SMOOTH,
            kl_direction: KlDirection::RefToGen,
        }
    }
}

/// Distributions for both sides, paired by id.
pub type DistributionPairs = (
    Vec<(String, ProbDistribution)>,
    Vec<(String, ProbDistribution)>,
);

pub fn evaluate(
    reference: &EmbeddingSet,
    generated: &EmbeddingSet,
    distributions: Option<&DistributionPairs>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let same_ids: BTreeSet<&String> = reference.ids().iter().collect();
    let gen_ids: BTreeSet<&String> = generated.ids().iter().collect();
    let similarity = if same_ids == gen_ids {
        Some(paired_similarity(
            reference,
            &generated.aligned_to(reference.ids())?,
        )?)
    } else {
        None
    };
    let kl = match distributions {
        Some((r, g)) => {
            let mut r = r.clone();
            let mut g = g.clone();
            r.sort_by(|a, b| a.0.cmp(&b.0));
            g.sort_by(|a, b| a.0.cmp(&b.0));
            if r.iter().map(|x| &x.0).ne(g.iter().map(|x| &x.0)) {
                return Err(invalid(
                    "reference and generated distributions have different ids",
                ));
            }
            let (rp, gp): (Vec<_>, Vec<_>) = r.into_iter().zip(g).map(|(a, b)| (a.1, b.1)).unzip();
            Some(paired_kl(&rp, &gp, opts.kl_smooth, opts.kl_direction)?)
        }
        None => None,
    };
    Ok(EvalReport {
        fad: fad(reference, generated, opts.fad_eps)?,
        precision: manifold_precision(reference, generated, opts.k)?,
        recall: manifold_recall(reference, generated, opts.k)?,
        similarity,
        kl,
        n_ref: reference.len(),
        n_gen: generated.len(),
        k: opts.k,
        seed: opts.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn set(rows: &[&[f64]]) -> EmbeddingSet {
        EmbeddingSet::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn random_set(n: usize, d: usize, seed: u64, shift: f64) -> EmbeddingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EmbeddingSet::from_rows(
            (0..n)
                .map(|_| {
                    (0..d)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            z + shift
                        })
                        .collect()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn embedding_set_validation() {
        assert!(EmbeddingSet::from_rows(vec![]).is_err());
        assert!(EmbeddingSet::from_rows(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(EmbeddingSet::from_rows(vec![vec![f64::NAN]]).is_err());
        assert!(
            EmbeddingSet::new(vec!["a".into(), "a".into()], vec![vec![1.0], vec![2.0]]).is_err()
        );
    }

    #[test]
    fn fad_identity_and_one_dimensional_case() {
        let a = random_set(30, 4, 1, 0.0);
        assert!(fad(&a, &a, DEFAULT_FAD_EPS).unwrap().abs() < 1e-8);
        let r = set(&[&[-1.0], &[1.0]]);
        let g = set(&[&[0.0], &[2.0]]);
        assert!((fad(&r, &g, DEFAULT_FAD_EPS).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fad_with_injected_moments() {
        let mu = DVector::zeros(2);
        let mut cr = DMatrix::identity(2, 2);
        let mut cg = DMatrix::identity(2, 2) * 4.0;
        let v = fad_from_moments(&mu, &mut cr, &mu, &mut cg, DEFAULT_FAD_EPS).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fad_errors() {
        let one = set(&[&[1.0]]);
        let two = set(&[&[1.0], &[2.0]]);
        assert!(fad(&one, &two, DEFAULT_FAD_EPS).is_err());
        let wide = set(&[&[1.0, 0.0], &[2.0, 0.0]]);
        assert!(matches!(
            fad(&two, &wide, DEFAULT_FAD_EPS),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn fad_symmetric_and_rotation_invariant() {
        let a = random_set(40, 3, 2, 0.0);
        let b = random_set(50, 3, 3, 0.5);
        let ab = fad(&a, &b, DEFAULT_FAD_EPS).unwrap();
        assert!((ab - fad(&b, &a, DEFAULT_FAD_EPS).unwrap()).abs() < 1e-9);
        let (c, s) = (0.6f64, 0.8f64);
        let rot = |e: &EmbeddingSet| {
            EmbeddingSet::from_rows(
                e.rows()
                    .iter()
                    .map(|r| vec![c * r[0] - s * r[1], s * r[0] + c * r[1], r[2]])
                    .collect(),
            )
            .unwrap()
        };
        assert!((fad(&rot(&a), &rot(&b), DEFAULT_FAD_EPS).unwrap() - ab).abs() < 1e-6);
    }

    fn brute_precision(r: &EmbeddingSet, g: &EmbeddingSet, k: usize) -> f64 {
        let mut hits = 0;
        for gp in g.rows() {
            let mut hit = false;
            for (i, rp) in r.rows().iter().enumerate() {
                let mut ds: Vec<f64> = r
                    .rows()
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, o)| dist(rp, o))
                    .collect();
                ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
                if dist(gp, rp) <= ds[k - 1] {
                    hit = true;
                }
            }
            hits += hit as usize;
        }
        hits as f64 / g.len() as f64
    }

    #[test]
    fn precision_on_grid_by_hand() {
        let r = set(&[
            &[0.0, 0.0],
            &[1.0, 0.0],
            &[0.0, 1.0],
            &[1.0, 1.0],
            &[3.0, 3.0],
        ]);
        // k = 1 radii: 1, 1, 1, 1 and sqrt(8) for the outlier.
        let g = set(&[&[0.5, 0.5], &[4.5, 4.0], &[-2.0, -2.0]]);
        let p = manifold_precision(&r, &g, 1).unwrap();
        assert!((p - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(p, brute_precision(&r, &g, 1));
    }

    #[test]
    fn precision_recall_identities() {
        let a = random_set(12, 3, 4, 0.0);
        assert_eq!(manifold_precision(&a, &a, 5).unwrap(), 1.0);
        assert_eq!(manifold_recall(&a, &a, 5).unwrap(), 1.0);
        let far = random_set(8, 3, 5, 1e3);
        assert_eq!(manifold_precision(&a, &far, 5).unwrap(), 0.0);
        assert!(manifold_precision(&a, &far, 12).is_err());
        let single = set(&[&[0.0, 0.0, 0.0]]);
        assert!(manifold_recall(&a, &single, 1).is_err());
    }

    #[test]
    fn similarity_by_hand() {
        let r = set(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let g = set(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert!((paired_similarity(&r, &g).unwrap() - 0.5).abs() < 1e-15);
        let neg = EmbeddingSet::from_rows(
            r.rows()
                .iter()
                .map(|x| x.iter().map(|v| -v).collect())
                .collect(),
        )
        .unwrap();
        assert_eq!(paired_similarity(&r, &neg).unwrap(), -1.0);
        let z = EmbeddingSet::new(
            vec!["a".into(), "b".into()],
            vec![vec![0.0, 0.0], vec![1.0, 0.0]],
        )
        .unwrap();
        match paired_similarity(&z, &r) {
            Err(Error::ZeroNorm(ids)) => assert_eq!(ids, vec!["a".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn kl_by_hand() {
        let p = ProbDistribution::new(vec![1.0, 0.0]).unwrap();
        let q = ProbDistribution::new(vec![0.5, 0.5]).unwrap();
        let v = paired_kl(
            std::slice::from_ref(&p),
            std::slice::from_ref(&q),
            DEFAULT_KL_SMOOTH,
            KlDirection::RefToGen,
        )
        .unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-6);
        assert_eq!(
            paired_kl(
                std::slice::from_ref(&p),
                std::slice::from_ref(&p),
                DEFAULT_KL_SMOOTH,
                KlDirection::RefToGen
            )
            .unwrap(),
            0.0
        );
        let rev = paired_kl(std::slice::from_ref(&p), &[q], DEFAULT_KL_SMOOTH, KlDirection::GenToRef).unwrap();
        assert!(rev > 5.0);
        assert!(paired_kl(std::slice::from_ref(&p), &[], DEFAULT_KL_SMOOTH, KlDirection::RefToGen).is_err());
        assert!(ProbDistribution::new(vec![0.5, 0.6]).is_err());
    }

    #[test]
    fn kmeans_all_points_when_k_is_n() {
        let s = random_set(10, 2, 6, 0.0);
        let mut picked = kmeans_select(&s, 10, 3).unwrap();
        picked.sort();
        let mut all = s.ids().to_vec();
        all.sort();
        assert_eq!(picked, all);
        assert!(kmeans_select(&s, 11, 3).is_err());
    }

    #[test]
    fn kmeans_single_cluster_picks_point_nearest_mean() {
        let s = random_set(25, 3, 7, 0.0);
        let mean: Vec<f64> = (0..3)
            .map(|j| s.rows().iter().map(|r| r[j]).sum::<f64>() / 25.0)
            .collect();
        let best = (0..25)
            .min_by(|&a, &b| {
                sq_dist(&s.rows()[a], &mean)
                    .partial_cmp(&sq_dist(&s.rows()[b], &mean))
                    .unwrap()
            })
            .unwrap();
        assert_eq!(
            kmeans_select(&s, 1, 1).unwrap(),
            vec![s.ids()[best].clone()]
        );
    }

    #[test]
    fn kmeans_is_deterministic_and_sse_non_increasing() {
        let s = random_set(60, 4, 8, 0.0);
        let a = kmeans(&s, 5, 11).unwrap();
        assert_eq!(a, kmeans(&s, 5, 11).unwrap());
        for w in a.sse_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn evaluate_identical_sets() {
        let a = random_set(20, 3, 9, 0.0);
        let rep = evaluate(&a, &a, None, &EvalOptions::default()).unwrap();
        assert!(rep.fad.abs() < 1e-8);
        assert_eq!(rep.similarity, Some(1.0));
        assert_eq!((rep.precision, rep.recall), (1.0, 1.0));
        assert_eq!(rep.kl, None);
    }

    proptest! {
        #[test]
        fn recall_is_swapped_precision(seed in 0u64..500, n in 3usize..12, m in 3usize..12, k in 1usize..3) {
            let a = random_set(n, 2, seed, 0.0);
            let b = random_set(m, 2, seed + 1000, 0.3);
            prop_assert_eq!(manifold_recall(&a, &b, k).unwrap(), manifold_precision(&b, &a, k).unwrap());
            let p = manifold_precision(&a, &b, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert_eq!(p, brute_precision(&a, &b, k));
        }

        #[test]
        fn kl_non_negative(p in prop::collection::vec(0.0f64..1.0, 4), q in prop::collection::vec(0.0f64..1.0, 4)) {
            let norm = |v: Vec<f64>| {
                let t: f64 = v.iter().sum::<f64>() + 1e-3;
                ProbDistribution::new(v.iter().map(|x| (x + 2.5e-4) / t).collect()).unwrap()
            };
            let v = paired_kl(&[norm(p)], &[norm(q)], DEFAULT_KL_SMOOTH, KlDirection::RefToGen).unwrap();
            prop_assert!(v >= 0.0);
        }

        #[test]
        fn metrics_invariant_to_set_order(seed in 0u64..200) {
            let a = random_set(9, 2, seed, 0.0);
            let b = random_set(9, 2, seed + 7, 0.2);
            let rev = |e: &EmbeddingSet| {
                let ids: Vec<String> = e.ids().iter().rev().cloned().collect();
                e.aligned_to(&ids).unwrap()
            };
            let f = fad(&a, &b, DEFAULT_FAD_EPS).unwrap();
            prop_assert!((f - fad(&rev(&a), &rev(&b), DEFAULT_FAD_EPS).unwrap()).abs() < 1e-9);
            prop_assert_eq!(manifold_precision(&a, &b, 2).unwrap(), manifold_precision(&rev(&a), &rev(&b), 2).unwrap());
            let s = paired_similarity(&a, &b).unwrap();
            prop_assert!((s - paired_similarity(&rev(&a), &rev(&b)).unwrap()).abs() < 1e-12);
        }
    }
}
