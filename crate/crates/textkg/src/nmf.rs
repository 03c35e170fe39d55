//! Nonnegative matrix factorization at fixed rank via multiplicative
//! updates on the Frobenius objective ||A − WH||²_F.
//!
//! The input stays sparse throughout: the update products WᵀA and AHᵀ and
//! the objective itself iterate nonzeros only. Every update preserves
//! nonnegativity, and the objective is non-increasing across iterations,
//! which the rank-selection layer relies on.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrices::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Init {
    #[default]
    #[serde(rename = "random-uniform")]
    RandomUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmfParams {
    pub max_iter: usize,
    /// Stop once the relative objective decrease over one iteration falls
    /// below this.
    pub tol: f64,
    pub init: Init,
    #[serde(skip)]
    pub seed: u64,
    /// Added to update denominators; small enough to leave converged
    /// factors untouched.
    pub epsilon_guard: f64,
}

impl Default for NmfParams {
    fn default() -> Self {
        NmfParams {
            max_iter: 500,
            tol: 1e-8,
            init: Init::RandomUniform,
            seed: 0,
            epsilon_guard: 1e-16,
        }
    }
}

impl NmfParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::invalid("max_iter must be ≥ 1"));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid(format!("tol must be ≥ 0, got {}", self.tol)));
        }
        if !(self.epsilon_guard > 0.0 && self.epsilon_guard.is_finite()) {
            return Err(Error::invalid(format!(
                "epsilon_guard must be > 0, got {}",
                self.epsilon_guard
            )));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    /// rows × k, nonnegative.
    pub w: Array2<f64>,
    /// k × cols, nonnegative.
    pub h: Array2<f64>,
    pub k: usize,
    /// ||A − WH||_F / ||A||_F at the final iterate.
    pub rel_error: f64,
    pub iterations: usize,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct FactorMeta {
    k: usize,
    seed: u64,
    iterations: usize,
    rel_error: f64,
}

impl FactorPair {
    /// Writes `{stem}_w.txt` and `{stem}_h.txt` in the sparse triplet text
    /// format plus `{stem}_meta.json`. Zeros in the factors are restored on
    /// load from the stored shapes.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        SparseMatrix::from_dense(&self.w)?.save(&dir.join(format!("{stem}_w.txt")))?;
        SparseMatrix::from_dense(&self.h)?.save(&dir.join(format!("{stem}_h.txt")))?;
        let meta = FactorMeta {
            k: self.k,
            seed: self.seed,
            iterations: self.iterations,
            rel_error: self.rel_error,
        };
        let path = dir.join(format!("{stem}_meta.json"));
        let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<FactorPair> {
        let w = SparseMatrix::load(&dir.join(format!("{stem}_w.txt")))?.to_dense();
        let h = SparseMatrix::load(&dir.join(format!("{stem}_h.txt")))?.to_dense();
        let path = dir.join(format!("{stem}_meta.json"));
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: FactorMeta = serde_json::from_str(&text)
            .map_err(|e| Error::parse(&path, None, format!("invalid metadata: {e}")))?;
        if w.ncols() != meta.k || h.nrows() != meta.k {
            return Err(Error::parse(
                &path,
                None,
                format!(
                    "factor shapes {}x{} / {}x{} do not match k={}",
                    w.nrows(),
                    w.ncols(),
                    h.nrows(),
                    h.ncols(),
                    meta.k
                ),
            ));
        }
        Ok(FactorPair {
            w,
            h,
            k: meta.k,
            rel_error: meta.rel_error,
            iterations: meta.iterations,
            seed: meta.seed,
        })
    }
}

/// WᵀA for sparse A: iterates nonzeros, O(nnz · k).
pub(crate) fn wt_a(w: &ArrayView2<f64>, a: &SparseMatrix) -> Array2<f64> {
    let k = w.ncols();
    let mut out = Array2::zeros((k, a.n_cols()));
    for (r, c, v) in a.iter() {
        let w_row = w.row(r);
        let mut out_col = out.column_mut(c);
        for q in 0..k {
            out_col[q] += v * w_row[q];
        }
    }
    out
}

/// AHᵀ for sparse A: iterates nonzeros, O(nnz · k).
pub(crate) fn a_ht(a: &SparseMatrix, h: &ArrayView2<f64>) -> Array2<f64> {
    let k = h.nrows();
    let mut out = Array2::zeros((a.n_rows(), k));
    for (r, c, v) in a.iter() {
        let h_col = h.column(c);
        let mut out_row = out.row_mut(r);
        for q in 0..k {
            out_row[q] += v * h_col[q];
        }
    }
    out
}

/// ||A − WH||²_F without densifying A:
/// ||A||² − 2·Σ_nz a_ij (WH)_ij + Σ (WᵀW) ∘ (HHᵀ), clamped at zero.
fn objective(a: &SparseMatrix, w: &ArrayView2<f64>, h: &ArrayView2<f64>) -> f64 {
    let a_sq: f64 = a.iter().map(|(_, _, v)| v * v).sum();
    let mut cross = 0.0;
    for (r, c, v) in a.iter() {
        cross += v * w.row(r).dot(&h.column(c));
    }
    let gram_w = w.t().dot(w);
    let gram_h = h.dot(&h.t());
    let wh_sq = (&gram_w * &gram_h).sum();
    (a_sq - 2.0 * cross + wh_sq).max(0.0)
}

/// ||A − WH||_F / ||A||_F, computed from nonzeros plus the Gram term.
pub fn relative_error(a: &SparseMatrix, w: &Array2<f64>, h: &Array2<f64>) -> Result<f64> {
    check_shapes(a, w, h)?;
    let norm = a.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::invalid("relative error undefined for a zero matrix"));
    }
    Ok(objective(a, &w.view(), &h.view()).sqrt() / norm)
}

fn check_shapes(a: &SparseMatrix, w: &Array2<f64>, h: &Array2<f64>) -> Result<()> {
    if w.nrows() != a.n_rows() || h.ncols() != a.n_cols() || w.ncols() != h.nrows() {
        return Err(Error::invalid(format!(
            "factor shapes {}x{} / {}x{} do not match a {}x{} matrix",
            w.nrows(),
            w.ncols(),
            h.nrows(),
            h.ncols(),
            a.n_rows(),
            a.n_cols()
        )));
    }
    Ok(())
}

/// Scales each W column to unit Euclidean norm and multiplies the matching
/// H row by that norm, leaving the product WH unchanged.
pub fn normalize_factors(w: &Array2<f64>, h: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    if w.ncols() != h.nrows() {
        return Err(Error::invalid("W columns and H rows must agree"));
    }
    let mut w = w.clone();
    let mut h = h.clone();
    for q in 0..w.ncols() {
        let norm = w.column(q).dot(&w.column(q)).sqrt();
        if norm == 0.0 {
            return Err(Error::invalid(format!("W column {q} is all zeros")));
        }
        w.column_mut(q).mapv_inplace(|x| x / norm);
        h.row_mut(q).mapv_inplace(|x| x * norm);
    }
    Ok((w, h))
}

fn random_factor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    // Uniform on (0, 1] so no entry starts at exactly zero.
    Array2::from_shape_fn((rows, cols), |_| (1.0 - rng.random::<f64>()) * scale)
}

fn update_h(
    a: &SparseMatrix,
    w: &ArrayView2<f64>,
    h: &mut Array2<f64>,
    eps: f64,
) {
    let numer = wt_a(w, a);
    let denom = w.t().dot(w).dot(h);
    ndarray::Zip::from(h)
        .and(&numer)
        .and(&denom)
        .for_each(|h, &n, &d| *h *= n / (d + eps));
}

fn update_w(
    a: &SparseMatrix,
    w: &mut Array2<f64>,
    h: &ArrayView2<f64>,
    eps: f64,
) {
    let numer = a_ht(a, h);
    let denom = w.dot(&h.dot(&h.t()));
    ndarray::Zip::from(w)
        .and(&numer)
        .and(&denom)
        .for_each(|w, &n, &d| *w *= n / (d + eps));
}

#[cfg(debug_assertions)]
fn assert_nonnegative(m: &Array2<f64>, label: &str) {
    debug_assert!(
        m.iter().all(|v| v.is_finite() && *v >= 0.0),
        "{label} left the nonnegative orthant"
    );
}

#[cfg(not(debug_assertions))]
fn assert_nonnegative(_: &Array2<f64>, _: &str) {}

/// Factorizes A ≈ WH at rank k. Returns the factors together with the full
/// objective trace: `history[0]` is the objective of the random
/// initialization and `history[t]` the objective after iteration t.
pub fn nmf_with_history(
    a: &SparseMatrix,
    k: usize,
    params: &NmfParams,
) -> Result<(FactorPair, Vec<f64>)> {
    params.validate()?;
    if a.is_empty() {
        return Err(Error::invalid("cannot factorize a zero matrix"));
    }
    let max_k = a.n_rows().min(a.n_cols());
    if k < 1 || k > max_k {
        return Err(Error::invalid(format!(
            "rank {k} out of range [1, {max_k}] for a {}x{} matrix",
            a.n_rows(),
            a.n_cols()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mean = a.sum() / (a.n_rows() * a.n_cols()) as f64;
    let scale = (mean / k as f64).sqrt();
    let mut w = random_factor(&mut rng, a.n_rows(), k, scale);
    let mut h = random_factor(&mut rng, k, a.n_cols(), scale);

    let mut history = vec![objective(a, &w.view(), &h.view())];
    let mut iterations = 0;
    for _ in 0..params.max_iter {
        update_h(a, &w.view(), &mut h, params.epsilon_guard);
        update_w(a, &mut w, &h.view(), params.epsilon_guard);
        assert_nonnegative(&w, "W update");
        assert_nonnegative(&h, "H update");
        iterations += 1;
        let obj = objective(a, &w.view(), &h.view());
        let prev = *history.last().expect("history is non-empty");
        history.push(obj);
        if prev == 0.0 || (prev - obj) < params.tol * prev {
            break;
        }
    }

    let rel_error = history.last().unwrap().sqrt() / a.frobenius_norm();
    Ok((
        FactorPair {
            w,
            h,
            k,
            rel_error,
            iterations,
            seed: params.seed,
        },
        history,
    ))
}

/// Factorizes A ≈ WH at rank k with multiplicative updates.
pub fn nmf(a: &SparseMatrix, k: usize, params: &NmfParams) -> Result<FactorPair> {
    nmf_with_history(a, k, params).map(|(fp, _)| fp)
}

/// Solves the H-subproblem min_H ||A − WH||²_F with W held fixed, from a
/// fresh seeded initialization. Used to re-fit coefficients against
/// consensus basis columns.
pub fn nmf_fixed_w(a: &SparseMatrix, w: &Array2<f64>, params: &NmfParams) -> Result<FactorPair> {
    params.validate()?;
    if a.is_empty() {
        return Err(Error::invalid("cannot factorize a zero matrix"));
    }
    if w.nrows() != a.n_rows() {
        return Err(Error::invalid(format!(
            "W has {} rows but the matrix has {}",
            w.nrows(),
            a.n_rows()
        )));
    }
    if !w.iter().all(|v| v.is_finite() && *v >= 0.0) {
        return Err(Error::invalid("W must be nonnegative and finite"));
    }
    let k = w.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mean = a.sum() / (a.n_rows() * a.n_cols()) as f64;
    let scale = (mean / k.max(1) as f64).sqrt();
    let mut h = random_factor(&mut rng, k, a.n_cols(), scale);

    let mut prev = objective(a, &w.view(), &h.view());
    let mut iterations = 0;
    for _ in 0..params.max_iter {
        update_h(a, &w.view(), &mut h, params.epsilon_guard);
        assert_nonnegative(&h, "H update");
        iterations += 1;
        let obj = objective(a, &w.view(), &h.view());
        let done = prev == 0.0 || (prev - obj) < params.tol * prev;
        prev = obj;
        if done {
            break;
        }
    }
    Ok(FactorPair {
        w: w.clone(),
        h,
        k,
        rel_error: prev.sqrt() / a.frobenius_norm(),
        iterations,
        seed: params.seed,
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
    fn rank_one_matrix_fits_to_machine_precision() {
        let a = dense(&[&[2.0, 4.0], &[1.0, 2.0]]);
        let fp = nmf(&a, 1, &NmfParams::default().with_seed(7)).unwrap();
        assert!(fp.rel_error < 1e-6, "rel_error = {}", fp.rel_error);
    }

    #[test]
    fn zero_matrix_is_an_error() {
        let a = SparseMatrix::empty(3, 3);
        let err = nmf(&a, 1, &NmfParams::default()).unwrap_err();
        assert!(err.to_string().contains("zero matrix"), "{err}");
    }

    #[test]
    fn rank_out_of_range_is_an_error() {
        let a = dense(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert!(nmf(&a, 0, &NmfParams::default()).is_err());
        assert!(nmf(&a, 3, &NmfParams::default()).is_err());
    }

    #[test]
    fn planted_factors_are_recovered_closely() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w0 = Array2::from_shape_fn((8, 2), |_| rng.random::<f64>());
        let h0 = Array2::from_shape_fn((2, 10), |_| rng.random::<f64>());
        let a = SparseMatrix::from_dense(&w0.dot(&h0)).unwrap();
        let fp = nmf(&a, 2, &NmfParams::default().with_seed(3)).unwrap();
        assert!(fp.rel_error < 1e-4, "rel_error = {}", fp.rel_error);
    }

    #[test]
    fn objective_history_is_monotone() {
        let a = dense(&[
            &[1.0, 0.0, 2.0, 0.5],
            &[0.0, 3.0, 0.0, 1.0],
            &[2.0, 1.0, 0.0, 0.0],
        ]);
        for seed in 0..5 {
            let (_, hist) =
                nmf_with_history(&a, 2, &NmfParams::default().with_seed(seed)).unwrap();
            for pair in hist.windows(2) {
                assert!(
                    pair[1] <= pair[0] * (1.0 + 1e-10),
                    "objective rose from {} to {}",
                    pair[0],
                    pair[1]
                );
            }
        }
    }

    #[test]
    fn identical_inputs_give_bit_identical_factors() {
        let a = dense(&[&[1.0, 2.0, 0.0], &[0.0, 1.0, 3.0]]);
        let p = NmfParams::default().with_seed(42);
        let x = nmf(&a, 2, &p).unwrap();
        let y = nmf(&a, 2, &p).unwrap();
        assert_eq!(x, y);
        let z = nmf(&a, 2, &p.with_seed(43)).unwrap();
        assert_ne!(x.w, z.w, "different seeds give different factors");
    }

    #[test]
    fn relative_error_examples() {
        let a = dense(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let w = array![[1.0], [0.0]];
        let h = array![[1.0, 0.0]];
        let got = relative_error(&a, &w, &h).unwrap();
        assert!((got - 1.0 / 2f64.sqrt()).abs() < 1e-12);

        let h_zero = array![[0.0, 0.0]];
        assert_eq!(relative_error(&a, &w, &h_zero).unwrap(), 1.0);

        let exact_w = array![[1.0, 0.0], [0.0, 1.0]];
        let exact_h = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(relative_error(&a, &exact_w, &exact_h).unwrap() < 1e-12);

        let bad_h = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        assert!(relative_error(&a, &w, &bad_h).is_err(), "shape mismatch");
        let zero = SparseMatrix::empty(2, 2);
        assert!(relative_error(&zero, &w, &h).is_err());
    }

    #[test]
    fn normalize_factors_examples() {
        let w = array![[2.0], [0.0]];
        let h = array![[1.0, 1.0]];
        let (w2, h2) = normalize_factors(&w, &h).unwrap();
        assert_eq!(w2, array![[1.0], [0.0]]);
        assert_eq!(h2, array![[2.0, 2.0]]);

        let (w3, h3) = normalize_factors(&w2, &h2).unwrap();
        assert_eq!(w3, w2);
        assert_eq!(h3, h2);

        let zero_col = array![[1.0, 0.0], [0.0, 0.0]];
        assert!(normalize_factors(&zero_col, &array![[1.0], [1.0]]).is_err());
        assert!(
            normalize_factors(&zero_col, &array![[1.0, 1.0], [1.0, 1.0]]).is_err(),
            "zero column"
        );
    }

    #[test]
    fn normalize_preserves_product() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = Array2::from_shape_fn((6, 3), |_| rng.random::<f64>() + 0.01);
        let h = Array2::from_shape_fn((3, 7), |_| rng.random::<f64>());
        let (w2, h2) = normalize_factors(&w, &h).unwrap();
        let before = w.dot(&h);
        let after = w2.dot(&h2);
        for (x, y) in before.iter().zip(after.iter()) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
        }
    }

    #[test]
    fn fixed_w_solve_recovers_h() {
        // Strictly positive optimum: multiplicative updates reach interior
        // stationary points quickly, so a tight error bound is safe here.
        let w = array![[1.0, 0.1], [0.1, 1.0], [1.0, 1.0]];
        let h_true = array![[1.0, 2.0, 0.4], [0.3, 1.0, 3.0]];
        let a = SparseMatrix::from_dense(&w.dot(&h_true)).unwrap();
        let fp = nmf_fixed_w(&a, &w, &NmfParams::default().with_seed(9)).unwrap();
        assert!(fp.rel_error < 1e-6, "rel_error = {}", fp.rel_error);
        assert_eq!(fp.w, w, "W is passed through untouched");
    }

    #[test]
    fn factor_pair_round_trips_through_files() {
        let a = dense(&[&[1.0, 2.0], &[3.0, 0.5]]);
        let fp = nmf(&a, 2, &NmfParams::default().with_seed(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        fp.save(dir.path(), "test").unwrap();
        let back = FactorPair::load(dir.path(), "test").unwrap();
        assert_eq!(back, fp);
    }
}
