//! Automatic rank selection by perturbation-ensemble stability.
//!
//! For each candidate rank k, the input is perturbed r times, each replica
//! is factorized, and the normalized basis columns are matched into k
//! clusters across runs. A rank whose columns reappear consistently earns a
//! high silhouette; the chosen k* is the largest candidate whose minimum
//! cluster silhouette clears the threshold, with an argmax fallback when
//! none does. The returned consensus pair uses cluster-medoid basis columns
//! and coefficients re-fitted against the unperturbed input.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrices::SparseMatrix;
use crate::nmf::{self, FactorPair, NmfParams};
use crate::seed::{mix, TAG_CONSENSUS, TAG_PERTURB, TAG_RANK_RUN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmfkParams {
    /// Inclusive candidate rank interval.
    pub k_min: usize,
    pub k_max: usize,
    /// Ensemble size r per candidate rank.
    pub n_perturbs: usize,
    /// Each nonzero is multiplied by a uniform draw on [1−ε, 1+ε].
    pub perturb_epsilon: f64,
    /// A rank is stable when its minimum cluster silhouette reaches this.
    pub silhouette_threshold: f64,
    pub nmf_params: NmfParams,
    #[serde(skip)]
    pub master_seed: u64,
}

impl Default for NmfkParams {
    fn default() -> Self {
        NmfkParams {
            k_min: 2,
            k_max: 8,
            n_perturbs: 10,
            perturb_epsilon: 0.015,
            silhouette_threshold: 0.75,
            nmf_params: NmfParams::default(),
            master_seed: 0,
        }
    }
}

impl NmfkParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_min < 1 || self.k_min > self.k_max {
            return Err(Error::invalid(format!(
                "rank range [{}, {}] is empty or starts below 1",
                self.k_min, self.k_max
            )));
        }
        if self.n_perturbs < 2 {
            return Err(Error::invalid("n_perturbs must be ≥ 2"));
        }
        if !(self.perturb_epsilon >= 0.0 && self.perturb_epsilon < 1.0) {
            return Err(Error::invalid(format!(
                "perturb_epsilon must be in [0, 1), got {}",
                self.perturb_epsilon
            )));
        }
        if !(self.silhouette_threshold > 0.0 && self.silhouette_threshold <= 1.0) {
            return Err(Error::invalid(format!(
                "silhouette_threshold must be in (0, 1], got {}",
                self.silhouette_threshold
            )));
        }
        self.nmf_params.validate()
    }

    pub fn with_master_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn k_candidates(&self) -> impl Iterator<Item = usize> {
        self.k_min..=self.k_max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSelection {
    pub k_star: usize,
    pub per_k_min_silhouette: BTreeMap<usize, f64>,
    /// Median over the ensemble of each run's fit error on its own replica.
    pub per_k_rel_error: BTreeMap<usize, f64>,
    pub consensus: FactorPair,
}

#[derive(Debug, Serialize, Deserialize)]
struct SelectionMeta {
    k_star: usize,
    per_k_min_silhouette: BTreeMap<usize, f64>,
    per_k_rel_error: BTreeMap<usize, f64>,
}

impl ModelSelection {
    /// Writes `selection.json` (per-k scores) plus consensus factor files.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = SelectionMeta {
            k_star: self.k_star,
            per_k_min_silhouette: self.per_k_min_silhouette.clone(),
            per_k_rel_error: self.per_k_rel_error.clone(),
        };
        let path = dir.join("selection.json");
        let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.consensus.save(dir, "consensus")
    }

    pub fn load(dir: &Path) -> Result<ModelSelection> {
        let path = dir.join("selection.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: SelectionMeta = serde_json::from_str(&text)
            .map_err(|e| Error::parse(&path, None, format!("invalid metadata: {e}")))?;
        Ok(ModelSelection {
            k_star: meta.k_star,
            per_k_min_silhouette: meta.per_k_min_silhouette,
            per_k_rel_error: meta.per_k_rel_error,
            consensus: FactorPair::load(dir, "consensus")?,
        })
    }
}

/// Multiplies every nonzero by an independent uniform draw on
/// [1−epsilon, 1+epsilon], in column-major entry order. The sparsity
/// pattern is unchanged and epsilon 0 reproduces the input exactly.
pub fn perturb(a: &SparseMatrix, epsilon: f64, seed: u64) -> SparseMatrix {
    assert!(
        (0.0..1.0).contains(&epsilon),
        "perturbation epsilon must be in [0, 1)"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triplets = a
        .iter()
        .map(|(r, c, v)| {
            let factor = rng.random_range(1.0 - epsilon..=1.0 + epsilon);
            (r, c, v * factor)
        })
        .collect();
    SparseMatrix::from_triplets(a.n_rows(), a.n_cols(), triplets)
        .expect("perturbation preserves validity")
}

/// Cluster membership: `clusters[j]` lists (run index, column index) pairs,
/// exactly one per run, seeded by run 0's column j.
pub type ColumnClusters = Vec<Vec<(usize, usize)>>;

fn cosine_distance(x: &Array1<f64>, y: &Array1<f64>) -> f64 {
    (1.0 - x.dot(y)).max(0.0)
}

/// Matches columns across runs: run 0's columns seed the clusters, then each
/// later run's columns are assigned one-to-one by descending cosine
/// similarity to the running centroids (ties broken toward the smaller
/// cluster, then column index). Returns the clusters and the minimum over
/// clusters of the mean member silhouette under cosine distance. A single
/// cluster scores 1.0 by convention.
pub fn cluster_columns(runs: &[Array2<f64>]) -> Result<(ColumnClusters, f64)> {
    let first = runs
        .first()
        .ok_or_else(|| Error::invalid("cluster_columns requires at least one run"))?;
    let (n_rows, k) = first.dim();
    for (i, w) in runs.iter().enumerate() {
        if w.dim() != (n_rows, k) {
            return Err(Error::invalid(format!(
                "run {i} has shape {:?}, expected {:?}",
                w.dim(),
                (n_rows, k)
            )));
        }
    }

    let col = |run: usize, c: usize| runs[run].column(c).to_owned();
    let mut clusters: ColumnClusters = (0..k).map(|j| vec![(0, j)]).collect();
    let mut centroids: Vec<Array1<f64>> = (0..k).map(|j| col(0, j)).collect();

    for run in 1..runs.len() {
        // All (similarity, cluster, column) candidates, best first.
        let mut sims: Vec<(f64, usize, usize)> = Vec::with_capacity(k * k);
        for (j, centroid) in centroids.iter().enumerate() {
            for c in 0..k {
                sims.push((centroid.dot(&col(run, c)), j, c));
            }
        }
        sims.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut cluster_taken = vec![false; k];
        let mut col_taken = vec![false; k];
        for (_, j, c) in sims {
            if cluster_taken[j] || col_taken[c] {
                continue;
            }
            cluster_taken[j] = true;
            col_taken[c] = true;
            clusters[j].push((run, c));
        }
        for (j, members) in clusters.iter().enumerate() {
            let mut mean = Array1::zeros(n_rows);
            for &(r, c) in members {
                mean += &col(r, c);
            }
            centroids[j] = mean / members.len() as f64;
        }
    }

    if k == 1 {
        return Ok((clusters, 1.0));
    }

    let member_vecs: Vec<Vec<Array1<f64>>> = clusters
        .iter()
        .map(|ms| ms.iter().map(|&(r, c)| col(r, c)).collect())
        .collect();
    let mut min_sil = f64::INFINITY;
    for (j, members) in member_vecs.iter().enumerate() {
        let mut sum_sil = 0.0;
        for (m, x) in members.iter().enumerate() {
            let a = if members.len() > 1 {
                members
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != m)
                    .map(|(_, y)| cosine_distance(x, y))
                    .sum::<f64>()
                    / (members.len() - 1) as f64
            } else {
                0.0
            };
            let b = member_vecs
                .iter()
                .enumerate()
                .filter(|(o, _)| *o != j)
                .map(|(_, other)| {
                    other.iter().map(|y| cosine_distance(x, y)).sum::<f64>()
                        / other.len() as f64
                })
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            sum_sil += if denom == 0.0 { 0.0 } else { (b - a) / denom };
        }
        min_sil = min_sil.min(sum_sil / members.len() as f64);
    }
    Ok((clusters, min_sil))
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// The in-cluster column minimizing summed cosine distance to the other
/// members; ties fall to the earliest member in (run, column) order.
fn medoid(members: &[(usize, usize)], runs: &[Array2<f64>]) -> Array1<f64> {
    let vecs: Vec<Array1<f64>> = members
        .iter()
        .map(|&(r, c)| runs[r].column(c).to_owned())
        .collect();
    let mut best = 0usize;
    let mut best_sum = f64::INFINITY;
    for (i, x) in vecs.iter().enumerate() {
        let sum: f64 = vecs.iter().map(|y| cosine_distance(x, y)).sum();
        if sum < best_sum {
            best_sum = sum;
            best = i;
        }
    }
    vecs.into_iter().nth(best).expect("cluster is non-empty")
}

struct RankSweep {
    min_silhouette: f64,
    median_rel_error: f64,
    medoid_w: Array2<f64>,
}

fn sweep_rank(a: &SparseMatrix, k: usize, params: &NmfkParams) -> Result<RankSweep> {
    let fits: Vec<FactorPair> = (0..params.n_perturbs)
        .into_par_iter()
        .map(|run| {
            let p_seed = mix(&[TAG_PERTURB, params.master_seed, k as u64, run as u64]);
            let f_seed = mix(&[TAG_RANK_RUN, params.master_seed, k as u64, run as u64]);
            let replica = perturb(a, params.perturb_epsilon, p_seed);
            nmf::nmf(&replica, k, &params.nmf_params.with_seed(f_seed))
        })
        .collect::<Result<_>>()?;

    let mut normalized = Vec::with_capacity(fits.len());
    let mut rel_errors = Vec::with_capacity(fits.len());
    for fit in &fits {
        let (w, _) = nmf::normalize_factors(&fit.w, &fit.h)?;
        normalized.push(w);
        rel_errors.push(fit.rel_error);
    }
    let (clusters, min_silhouette) = cluster_columns(&normalized)?;
    let n_rows = normalized[0].nrows();
    let mut medoid_w = Array2::zeros((n_rows, k));
    for (j, members) in clusters.iter().enumerate() {
        medoid_w.column_mut(j).assign(&medoid(members, &normalized));
    }
    Ok(RankSweep {
        min_silhouette,
        median_rel_error: median(rel_errors),
        medoid_w,
    })
}

/// Runs the ensemble sweep over every candidate rank and selects k*: the
/// largest rank whose minimum silhouette reaches the threshold, else the
/// rank with the highest minimum silhouette (ties toward smaller k). The
/// consensus coefficients are re-fitted on the unperturbed input with the
/// medoid basis held fixed.
pub fn select_k(a: &SparseMatrix, params: &NmfkParams) -> Result<ModelSelection> {
    params.validate()?;
    let max_k = a.n_rows().min(a.n_cols());
    if params.k_max > max_k {
        return Err(Error::invalid(format!(
            "rank range [{}, {}] exceeds min(rows, cols) = {max_k}",
            params.k_min, params.k_max
        )));
    }

    let mut sweeps: BTreeMap<usize, RankSweep> = BTreeMap::new();
    for k in params.k_candidates() {
        sweeps.insert(k, sweep_rank(a, k, params)?);
    }

    let stable_max = sweeps
        .iter()
        .filter(|(_, s)| s.min_silhouette >= params.silhouette_threshold)
        .map(|(&k, _)| k)
        .max();
    let k_star = stable_max.unwrap_or_else(|| {
        // Argmax of min_silhouette; ascending scan keeps the smaller k on ties.
        let mut best_k = params.k_min;
        let mut best = f64::NEG_INFINITY;
        for (&k, s) in &sweeps {
            if s.min_silhouette > best {
                best = s.min_silhouette;
                best_k = k;
            }
        }
        best_k
    });

    let consensus_seed = mix(&[TAG_CONSENSUS, params.master_seed, k_star as u64]);
    let medoid_w = sweeps[&k_star].medoid_w.clone();
    let consensus = nmf::nmf_fixed_w(
        a,
        &medoid_w,
        &params.nmf_params.with_seed(consensus_seed),
    )?;

    Ok(ModelSelection {
        k_star,
        per_k_min_silhouette: sweeps
            .iter()
            .map(|(&k, s)| (k, s.min_silhouette))
            .collect(),
        per_k_rel_error: sweeps
            .iter()
            .map(|(&k, s)| (k, s.median_rel_error))
            .collect(),
        consensus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn dense(rows: &[&[f64]]) -> SparseMatrix {
        let a = Array2::from_shape_vec(
            (rows.len(), rows[0].len()),
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
        .unwrap();
        SparseMatrix::from_dense(&a).unwrap()
    }

    #[test]
    fn perturb_zero_epsilon_is_identity() {
        let a = dense(&[&[1.0, 0.0], &[2.0, 3.0]]);
        assert_eq!(perturb(&a, 0.0, 99), a);
    }

    #[test]
    fn perturb_stays_in_range_and_keeps_pattern() {
        let a = dense(&[&[1.0, 0.0], &[2.0, 3.0]]);
        let p = perturb(&a, 0.5, 7);
        assert_eq!(p.nnz(), a.nnz());
        for ((r1, c1, v1), (r2, c2, v2)) in a.iter().zip(p.iter()) {
            assert_eq!((r1, c1), (r2, c2), "sparsity pattern unchanged");
            let ratio = v2 / v1;
            assert!((0.5..=1.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn perturb_is_deterministic() {
        let a = dense(&[&[1.0, 4.0], &[2.0, 3.0]]);
        assert_eq!(perturb(&a, 0.3, 5), perturb(&a, 0.3, 5));
        assert_ne!(perturb(&a, 0.3, 5), perturb(&a, 0.3, 6));
    }

    #[test]
    fn identical_orthogonal_runs_score_one() {
        let w = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        let (clusters, sil) = cluster_columns(&[w.clone(), w]).unwrap();
        assert_eq!(sil, 1.0);
        assert_eq!(clusters[0], vec![(0, 0), (1, 0)]);
        assert_eq!(clusters[1], vec![(0, 1), (1, 1)]);
    }

    #[test]
    fn single_cluster_scores_one_by_convention() {
        let w = array![[1.0], [0.0]];
        let v = array![[0.0], [1.0]];
        let (clusters, sil) = cluster_columns(&[w, v]).unwrap();
        assert_eq!(sil, 1.0);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].len(), 2);
    }

    #[test]
    fn random_unit_columns_score_low() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut random_w = || {
            let mut w = Array2::from_shape_fn((50, 4), |_| rng.random::<f64>());
            for j in 0..4 {
                let norm = w.column(j).dot(&w.column(j)).sqrt();
                w.column_mut(j).mapv_inplace(|x| x / norm);
            }
            w
        };
        let runs = [random_w(), random_w()];
        let (_, sil) = cluster_columns(&runs).unwrap();
        assert!(sil < 0.9, "random columns should look unstable, got {sil}");
    }

    #[test]
    fn clustering_rejects_mismatched_shapes() {
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let b = array![[1.0], [0.0]];
        assert!(cluster_columns(&[a, b]).is_err());
    }

    #[test]
    fn swapped_columns_are_matched_back() {
        let w = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        let mut swapped = Array2::zeros((3, 2));
        swapped.column_mut(0).assign(&w.column(1));
        swapped.column_mut(1).assign(&w.column(0));
        let (clusters, sil) = cluster_columns(&[w, swapped]).unwrap();
        assert_eq!(sil, 1.0);
        assert_eq!(clusters[0], vec![(0, 0), (1, 1)]);
        assert_eq!(clusters[1], vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn every_cluster_gets_one_column_per_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let runs: Vec<Array2<f64>> = (0..4)
            .map(|_| {
                let mut w = Array2::from_shape_fn((12, 3), |_| rng.random::<f64>() + 0.01);
                for j in 0..3 {
                    let norm = w.column(j).dot(&w.column(j)).sqrt();
                    w.column_mut(j).mapv_inplace(|x| x / norm);
                }
                w
            })
            .collect();
        let (clusters, sil) = cluster_columns(&runs).unwrap();
        assert!((-1.0..=1.0).contains(&sil));
        for members in &clusters {
            assert_eq!(members.len(), 4);
            let mut seen_runs: Vec<usize> = members.iter().map(|&(r, _)| r).collect();
            seen_runs.sort_unstable();
            assert_eq!(seen_runs, vec![0, 1, 2, 3]);
        }
    }

    fn block_matrix() -> SparseMatrix {
        // Three disjoint row-column blocks of positives, 30×60.
        let mut rng = ChaCha8Rng::seed_from_u64(314);
        let mut triplets = Vec::new();
        for b in 0..3 {
            for r in (b * 10)..((b + 1) * 10) {
                for c in (b * 20)..((b + 1) * 20) {
                    triplets.push((r, c, 0.5 + rng.random::<f64>()));
                }
            }
        }
        SparseMatrix::from_triplets(30, 60, triplets).unwrap()
    }

    #[test]
    fn planted_blocks_select_their_rank() {
        let params = NmfkParams {
            k_min: 2,
            k_max: 6,
            n_perturbs: 5,
            master_seed: 77,
            ..NmfkParams::default()
        };
        let sel = select_k(&block_matrix(), &params).unwrap();
        assert_eq!(sel.k_star, 3);
        assert_eq!(sel.consensus.k, 3);
        assert_eq!(sel.per_k_min_silhouette.len(), 5, "every candidate scored");
        assert_eq!(sel.per_k_rel_error.len(), 5);
    }

    #[test]
    fn singleton_range_is_forced() {
        let params = NmfkParams {
            k_min: 4,
            k_max: 4,
            n_perturbs: 3,
            master_seed: 5,
            ..NmfkParams::default()
        };
        let sel = select_k(&block_matrix(), &params).unwrap();
        assert_eq!(sel.k_star, 4);
    }

    #[test]
    fn rank_one_matrix_selects_one() {
        let a = dense(&[&[2.0, 4.0], &[1.0, 2.0]]);
        let params = NmfkParams {
            k_min: 1,
            k_max: 2,
            n_perturbs: 5,
            master_seed: 11,
            ..NmfkParams::default()
        };
        let sel = select_k(&a, &params).unwrap();
        assert_eq!(sel.k_star, 1);
    }

    #[test]
    fn select_k_is_deterministic() {
        let params = NmfkParams {
            k_min: 2,
            k_max: 4,
            n_perturbs: 4,
            master_seed: 23,
            ..NmfkParams::default()
        };
        let a = block_matrix();
        let x = select_k(&a, &params).unwrap();
        let y = select_k(&a, &params).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn selection_round_trips_through_files() {
        let params = NmfkParams {
            k_min: 2,
            k_max: 3,
            n_perturbs: 3,
            master_seed: 9,
            ..NmfkParams::default()
        };
        let sel = select_k(&block_matrix(), &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        sel.save(dir.path()).unwrap();
        assert_eq!(ModelSelection::load(dir.path()).unwrap(), sel);
    }

    #[test]
    fn out_of_range_candidates_are_rejected() {
        let a = dense(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let params = NmfkParams {
            k_min: 1,
            k_max: 5,
            ..NmfkParams::default()
        };
        assert!(select_k(&a, &params).is_err());
    }
}
