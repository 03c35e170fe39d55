//! Chunked factorization with lossless merge.
//!
//! The input's columns are split into m near-equal contiguous chunks, each
//! chunk is rank-selected and factorized independently (in parallel), and
//! the per-chunk bases are merged by factorizing their concatenation
//! W̃ = [W_1|…|W_m] into W_x · M. Multiplying the M blocks back onto the
//! per-chunk coefficients rebuilds a full-width H* without ever factorizing
//! the whole matrix at once. Side matrices (co-occurrence, category) are
//! factorized separately and fused through one more merge over
//! W_+ = [W_x | w_s·W_s | w_c·W_c].
//!
//! Merge-stage factorizations search ranks [1, min(F, columns)]: a merged
//! rank can legitimately exceed the caller's per-chunk range because chunks
//! see disjoint column subsets. The caller's range still governs chunk and
//! side-matrix factorizations, clamped to each target's dimensions.

use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrices::SparseMatrix;
use crate::nmf::FactorPair;
use crate::nmfk::{select_k, NmfkParams};
use crate::seed::{mix, TAG_CHUNK, TAG_JOINT, TAG_MERGE};

/// Settings for a full SPLIT pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitParams {
    /// Number of column chunks.
    pub m: usize,
    /// Weight on the co-occurrence basis block in the fused merge.
    pub w_s: f64,
    /// Weight on the category basis block in the fused merge.
    pub w_c: f64,
    pub nmfk: NmfkParams,
}

impl Default for SplitParams {
    fn default() -> Self {
        SplitParams {
            m: 4,
            w_s: 1.0,
            w_c: 1.0,
            nmfk: NmfkParams::default(),
        }
    }
}

impl SplitParams {
    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::invalid("chunk count m must be at least 1"));
        }
        for (label, w) in [("w_s", self.w_s), ("w_c", self.w_c)] {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::invalid(format!(
                    "side weight {label} must be finite and > 0, got {w}"
                )));
            }
        }
        self.nmfk.validate()
    }

    pub fn with_master_seed(mut self, seed: u64) -> Self {
        self.nmfk.master_seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    /// Column range within the parent matrix.
    pub cols: Range<usize>,
    pub matrix: SparseMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkFactors {
    /// Consensus factors per chunk, in chunk order.
    pub factors: Vec<FactorPair>,
    pub offsets: Vec<Range<usize>>,
    pub n_rows: usize,
    pub n_cols: usize,
}

impl ChunkFactors {
    /// K = k_1 + … + k_m.
    pub fn total_rank(&self) -> usize {
        self.factors.iter().map(|f| f.k).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeResult {
    /// F × p consensus basis over the concatenated chunk bases.
    pub w_x: Array2<f64>,
    /// Mixing blocks, one per chunk: M_i is p × k_i.
    pub m_blocks: Vec<Array2<f64>>,
    /// p × N coefficients: H*_i = M_i · H_i placed at chunk offsets.
    pub h_star: Array2<f64>,
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SideMergeResult {
    /// Factorization of the co-occurrence matrix, when provided.
    pub side_s: Option<FactorPair>,
    /// Factorization of the category matrix, when provided.
    pub side_c: Option<FactorPair>,
    /// F × Z concatenation [W_x | w_s·W_s | w_c·W_c].
    pub w_plus: Array2<f64>,
    /// t × Z coefficients of the fused factorization; None on passthrough.
    pub y: Option<Array2<f64>>,
    /// F × t final basis.
    pub w: Array2<f64>,
    /// t × N final coefficients, Y_x · H*.
    pub h: Array2<f64>,
    pub z: usize,
    pub t: usize,
}

/// Splits columns into m contiguous chunks with sizes differing by at most
/// one; earlier chunks take the remainder (N=10, m=3 → 4, 3, 3).
pub fn chunk_columns(x: &SparseMatrix, m: usize) -> Result<Vec<Chunk>> {
    let n = x.n_cols();
    if m < 1 || m > n {
        return Err(Error::invalid(format!(
            "chunk count {m} out of range [1, {n}]"
        )));
    }
    let base = n / m;
    let remainder = n % m;
    let mut chunks = Vec::with_capacity(m);
    let mut start = 0usize;
    for i in 0..m {
        let size = base + usize::from(i < remainder);
        let cols = start..start + size;
        chunks.push(Chunk {
            matrix: x.slice_cols(cols.clone()),
            cols,
        });
        start += size;
    }
    Ok(chunks)
}

/// The caller's rank range clamped to a target with `cap = min(rows, cols)`.
fn clamp_params(params: &NmfkParams, cap: usize, master_seed: u64) -> NmfkParams {
    let mut p = *params;
    p.k_max = p.k_max.min(cap);
    p.k_min = p.k_min.min(p.k_max);
    p.master_seed = master_seed;
    p
}

/// A merge-stage parameter set: ranks searched over the full [1, cap].
fn merge_params(params: &NmfkParams, cap: usize, master_seed: u64) -> NmfkParams {
    let mut p = *params;
    p.k_min = 1;
    p.k_max = cap;
    p.master_seed = master_seed;
    p
}

fn chunk_seed(master_seed: u64, index: usize) -> u64 {
    mix(&[TAG_CHUNK, master_seed, index as u64])
}

/// Rank-selects and factorizes every chunk independently; chunk i's ensemble
/// seeds derive from (master_seed, i), so results do not depend on execution
/// order. The rank range is clamped per chunk to min(F, chunk width).
pub fn factorize_chunks(chunks: &[Chunk], params: &NmfkParams) -> Result<ChunkFactors> {
    if chunks.is_empty() {
        return Err(Error::invalid("factorize_chunks requires at least one chunk"));
    }
    let n_rows = chunks[0].matrix.n_rows();
    for (i, chunk) in chunks.iter().enumerate() {
        if chunk.matrix.is_empty() {
            return Err(Error::invalid(format!(
                "chunk {i} (columns {}..{}) has no nonzero entries",
                chunk.cols.start, chunk.cols.end
            )));
        }
    }
    let factors: Vec<FactorPair> = chunks
        .par_iter()
        .enumerate()
        .map(|(i, chunk)| {
            let cap = n_rows.min(chunk.matrix.n_cols());
            let p = clamp_params(params, cap, chunk_seed(params.master_seed, i));
            select_k(&chunk.matrix, &p).map(|sel| sel.consensus)
        })
        .collect::<Result<_>>()?;
    Ok(ChunkFactors {
        offsets: chunks.iter().map(|c| c.cols.clone()).collect(),
        n_cols: chunks.last().map(|c| c.cols.end).unwrap_or(0),
        factors,
        n_rows,
    })
}

/// Unit-normalizes each column of `w`, scaling the matching row of `h` by
/// the removed norm so the product is preserved.
fn normalize_into(w: &mut Array2<f64>, h: &mut Array2<f64>) -> Result<()> {
    for j in 0..w.ncols() {
        let norm = w.column(j).dot(&w.column(j)).sqrt();
        if norm == 0.0 {
            return Err(Error::invalid(format!("basis column {j} is all zeros")));
        }
        w.column_mut(j).mapv_inplace(|x| x / norm);
        h.row_mut(j).mapv_inplace(|x| x * norm);
    }
    Ok(())
}

/// Merges per-chunk bases: W̃ = [W_1|…|W_m] with unit-norm columns (norms
/// folded into the chunk coefficients), factorized as W̃ ≈ W_x · M over
/// ranks [1, min(F, K)]; H*_i = M_i · H_i assembled at chunk offsets.
pub fn merge_chunk_factors(cf: &ChunkFactors, params: &NmfkParams) -> Result<MergeResult> {
    if cf.factors.is_empty() {
        return Err(Error::invalid("merge requires at least one chunk factorization"));
    }
    let f = cf.n_rows;
    let total_k = cf.total_rank();

    let mut w_tilde = Array2::zeros((f, total_k));
    let mut scaled_h: Vec<Array2<f64>> = Vec::with_capacity(cf.factors.len());
    let mut col = 0usize;
    for fp in &cf.factors {
        if fp.w.nrows() != f {
            return Err(Error::invalid(format!(
                "chunk basis has {} rows, expected {f}",
                fp.w.nrows()
            )));
        }
        let mut w = fp.w.clone();
        let mut h = fp.h.clone();
        normalize_into(&mut w, &mut h)?;
        w_tilde.slice_mut(s![.., col..col + fp.k]).assign(&w);
        scaled_h.push(h);
        col += fp.k;
    }

    let cap = f.min(total_k);
    let merge_seed = mix(&[TAG_MERGE, params.master_seed]);
    let sel = select_k(
        &SparseMatrix::from_dense(&w_tilde)?,
        &merge_params(params, cap, merge_seed),
    )?;
    let p = sel.k_star;
    let w_x = sel.consensus.w;
    let m_full = sel.consensus.h;

    let mut m_blocks = Vec::with_capacity(cf.factors.len());
    let mut h_star = Array2::zeros((p, cf.n_cols));
    let mut col = 0usize;
    for (fp, h_i) in cf.factors.iter().zip(&scaled_h) {
        let m_i = m_full.slice(s![.., col..col + fp.k]).to_owned();
        let h_star_i = m_i.dot(h_i);
        let range = &cf.offsets[m_blocks.len()];
        h_star
            .slice_mut(s![.., range.start..range.end])
            .assign(&h_star_i);
        m_blocks.push(m_i);
        col += fp.k;
    }
    debug_assert!(h_star.iter().all(|v| *v >= 0.0 && v.is_finite()));
    Ok(MergeResult {
        w_x,
        m_blocks,
        h_star,
        p,
    })
}

/// Fuses side matrices into the merged basis. S and C are factorized
/// independently (caller's rank range, clamped); all basis columns are
/// unit-normalized, the side blocks scaled by their weights, and
/// W_+ = [W_x | w_s·W_s | w_c·W_c] factorized over [1, min(F, Z)] into
/// W · Y. The final coefficients are H = Y_x · H*. With both sides absent
/// the merge result passes through unchanged.
pub fn incorporate_side_info(
    mr: &MergeResult,
    s_mat: Option<&SparseMatrix>,
    c_mat: Option<&SparseMatrix>,
    weights: (f64, f64),
    params: &NmfkParams,
) -> Result<SideMergeResult> {
    let f = mr.w_x.nrows();
    let p = mr.p;
    let (w_s_weight, w_c_weight) = weights;
    for (label, w) in [("w_s", w_s_weight), ("w_c", w_c_weight)] {
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::invalid(format!(
                "side weight {label} must be finite and > 0, got {w}"
            )));
        }
    }

    if s_mat.is_none() && c_mat.is_none() {
        return Ok(SideMergeResult {
            side_s: None,
            side_c: None,
            w_plus: mr.w_x.clone(),
            y: None,
            w: mr.w_x.clone(),
            h: mr.h_star.clone(),
            z: p,
            t: p,
        });
    }

    if let Some(s) = s_mat {
        if s.n_rows() != f || s.n_cols() != f {
            return Err(Error::invalid(format!(
                "co-occurrence matrix is {}x{}, expected {f}x{f}",
                s.n_rows(),
                s.n_cols()
            )));
        }
        if s.transpose() != *s {
            return Err(Error::invalid("co-occurrence matrix must be symmetric"));
        }
    }
    if let Some(c) = c_mat {
        if c.n_rows() != f {
            return Err(Error::invalid(format!(
                "category matrix has {} rows, expected {f}",
                c.n_rows()
            )));
        }
    }

    let factorize_side = |mat: &SparseMatrix, index: u64| -> Result<FactorPair> {
        let cap = mat.n_rows().min(mat.n_cols());
        let seed = mix(&[TAG_JOINT, params.master_seed, index]);
        let mut fp = select_k(mat, &clamp_params(params, cap, seed))?.consensus;
        normalize_into(&mut fp.w, &mut fp.h)?;
        Ok(fp)
    };
    let side_s = s_mat.map(|m| factorize_side(m, 0)).transpose()?;
    let side_c = c_mat.map(|m| factorize_side(m, 1)).transpose()?;

    let s_rank = side_s.as_ref().map_or(0, |fp| fp.k);
    let c_rank = side_c.as_ref().map_or(0, |fp| fp.k);
    let z = p + s_rank + c_rank;

    // Normalize W_x too, folding its norms into a working copy of H*.
    let mut w_x = mr.w_x.clone();
    let mut h_star = mr.h_star.clone();
    normalize_into(&mut w_x, &mut h_star)?;

    let mut w_plus = Array2::zeros((f, z));
    w_plus.slice_mut(s![.., 0..p]).assign(&w_x);
    let mut col = p;
    if let Some(fp) = &side_s {
        w_plus
            .slice_mut(s![.., col..col + fp.k])
            .assign(&(&fp.w * w_s_weight));
        col += fp.k;
    }
    if let Some(fp) = &side_c {
        w_plus
            .slice_mut(s![.., col..col + fp.k])
            .assign(&(&fp.w * w_c_weight));
    }

    let fuse_seed = mix(&[TAG_JOINT, params.master_seed, 2]);
    let cap = f.min(z);
    let sel = select_k(
        &SparseMatrix::from_dense(&w_plus)?,
        &merge_params(params, cap, fuse_seed),
    )?;
    let t = sel.k_star;
    let w = sel.consensus.w;
    let y = sel.consensus.h;
    let y_x = y.slice(s![.., 0..p]).to_owned();
    let h = y_x.dot(&h_star);
    debug_assert!(h.iter().all(|v| *v >= 0.0 && v.is_finite()));

    Ok(SideMergeResult {
        side_s,
        side_c,
        w_plus,
        y: Some(y),
        w,
        h,
        z,
        t,
    })
}

/// Everything a SPLIT run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub chunk_factors: ChunkFactors,
    pub merge: MergeResult,
    pub side: SideMergeResult,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct SplitManifest {
    input_digest: String,
    config_digest: String,
    master_seed: u64,
    m: usize,
    offsets: Vec<(usize, usize)>,
    chunk_seeds: Vec<u64>,
    /// Filled in once every chunk factorization has completed.
    chunk_ranks: Option<Vec<usize>>,
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    hex::encode(hasher.finalize())
}

fn matrices_digest(
    x: &SparseMatrix,
    s: Option<&SparseMatrix>,
    c: Option<&SparseMatrix>,
) -> String {
    let mut parts: Vec<Vec<u8>> = Vec::new();
    for (label, mat) in [("x", Some(x)), ("s", s), ("c", c)] {
        let mut buf = format!("{label}\n").into_bytes();
        if let Some(m) = mat {
            m.write_triplets(&mut buf).expect("vec write");
        }
        parts.push(buf);
    }
    let refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
    sha256_hex(&refs)
}

fn config_digest(m: usize, weights: (f64, f64), params: &NmfkParams) -> String {
    let text = serde_json::to_string(&(
        m,
        weights.0.to_bits(),
        weights.1.to_bits(),
        params.k_min,
        params.k_max,
        params.n_perturbs,
        params.perturb_epsilon.to_bits(),
        params.silhouette_threshold.to_bits(),
        params.nmf_params.max_iter,
        params.nmf_params.tol.to_bits(),
        params.nmf_params.epsilon_guard.to_bits(),
    ))
    .expect("config serializes");
    sha256_hex(&[text.as_bytes()])
}

fn read_manifest(path: &Path) -> Result<Option<SplitManifest>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::parse(path, None, format!("invalid manifest: {e}")))
}

fn write_manifest(path: &Path, manifest: &SplitManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn chunk_stem(i: usize) -> String {
    format!("chunk_{i}")
}

fn chunk_files_exist(dir: &Path, i: usize) -> bool {
    let stem = chunk_stem(i);
    ["w.txt", "h.txt", "meta.json"]
        .iter()
        .all(|suffix| dir.join(format!("{stem}_{suffix}")).exists())
}

/// Runs the full SPLIT pass: chunk, factorize (reusing checkpointed chunk
/// factors bit-exactly when a checkpoint directory is given), merge, and
/// fuse side information. A checkpoint written for different inputs or
/// settings is rejected rather than silently recomputed.
pub fn run_split(
    x: &SparseMatrix,
    s_mat: Option<&SparseMatrix>,
    c_mat: Option<&SparseMatrix>,
    split: &SplitParams,
    checkpoint_dir: Option<&Path>,
) -> Result<SplitOutcome> {
    split.validate()?;
    let m = split.m;
    let weights = (split.w_s, split.w_c);
    let params = &split.nmfk;
    let chunks = chunk_columns(x, m)?;

    let chunk_factors = match checkpoint_dir {
        None => factorize_chunks(&chunks, params)?,
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let manifest_path = dir.join("split_manifest.json");
            let input_digest = matrices_digest(x, s_mat, c_mat);
            let cfg_digest = config_digest(m, weights, params);
            let chunk_seeds: Vec<u64> = (0..m).map(|i| chunk_seed(params.master_seed, i)).collect();
            let expected = SplitManifest {
                input_digest: input_digest.clone(),
                config_digest: cfg_digest.clone(),
                master_seed: params.master_seed,
                m,
                offsets: chunks.iter().map(|c| (c.cols.start, c.cols.end)).collect(),
                chunk_seeds: chunk_seeds.clone(),
                chunk_ranks: None,
            };
            if let Some(found) = read_manifest(&manifest_path)? {
                let stale = found.input_digest != expected.input_digest
                    || found.config_digest != expected.config_digest
                    || found.master_seed != expected.master_seed
                    || found.m != expected.m
                    || found.offsets != expected.offsets;
                if stale {
                    return Err(Error::Checkpoint(format!(
                        "{} was written for different inputs or settings; \
                         point at a fresh checkpoint directory or delete it",
                        manifest_path.display()
                    )));
                }
            } else {
                write_manifest(&manifest_path, &expected)?;
            }

            for (i, chunk) in chunks.iter().enumerate() {
                if chunk.matrix.is_empty() {
                    return Err(Error::invalid(format!(
                        "chunk {i} (columns {}..{}) has no nonzero entries",
                        chunk.cols.start, chunk.cols.end
                    )));
                }
            }
            let n_rows = chunks[0].matrix.n_rows();
            let factors: Vec<FactorPair> = chunks
                .par_iter()
                .enumerate()
                .map(|(i, chunk)| {
                    if chunk_files_exist(dir, i) {
                        return FactorPair::load(dir, &chunk_stem(i));
                    }
                    let cap = n_rows.min(chunk.matrix.n_cols());
                    let p = clamp_params(params, cap, chunk_seeds[i]);
                    let fp = select_k(&chunk.matrix, &p)?.consensus;
                    fp.save(dir, &chunk_stem(i))?;
                    Ok(fp)
                })
                .collect::<Result<_>>()?;
            let cf = ChunkFactors {
                offsets: chunks.iter().map(|c| c.cols.clone()).collect(),
                n_cols: x.n_cols(),
                factors,
                n_rows,
            };
            let mut finished = expected;
            finished.chunk_ranks = Some(cf.factors.iter().map(|f| f.k).collect());
            write_manifest(&manifest_path, &finished)?;
            cf
        }
    };

    let merge = merge_chunk_factors(&chunk_factors, params)?;
    let side = incorporate_side_info(&merge, s_mat, c_mat, weights, params)?;
    Ok(SplitOutcome {
        chunk_factors,
        merge,
        side,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmf::relative_error;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sp(m: usize, nmfk: NmfkParams) -> SplitParams {
        SplitParams {
            m,
            nmfk,
            ..SplitParams::default()
        }
    }

    fn params(k_min: usize, k_max: usize, seed: u64) -> NmfkParams {
        NmfkParams {
            k_min,
            k_max,
            n_perturbs: 4,
            master_seed: seed,
            ..NmfkParams::default()
        }
    }

    /// `blocks` disjoint row/column blocks of iid positives (full-rank noise).
    fn block_matrix(f: usize, n: usize, blocks: usize, seed: u64) -> SparseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows_per = f / blocks;
        let cols_per = n / blocks;
        let mut triplets = Vec::new();
        for b in 0..blocks {
            for r in (b * rows_per)..((b + 1) * rows_per) {
                for c in (b * cols_per)..((b + 1) * cols_per) {
                    triplets.push((r, c, 0.5 + rng.random::<f64>()));
                }
            }
        }
        SparseMatrix::from_triplets(f, n, triplets).unwrap()
    }

    /// `blocks` disjoint rank-one blocks u·vᵀ, so the exact rank is known.
    fn rank1_blocks(f: usize, n: usize, blocks: usize, seed: u64) -> SparseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows_per = f / blocks;
        let cols_per = n / blocks;
        let mut triplets = Vec::new();
        for b in 0..blocks {
            let u: Vec<f64> = (0..rows_per).map(|_| 0.5 + rng.random::<f64>()).collect();
            let v: Vec<f64> = (0..cols_per).map(|_| 0.5 + rng.random::<f64>()).collect();
            for (ri, uu) in u.iter().enumerate() {
                for (ci, vv) in v.iter().enumerate() {
                    triplets.push((b * rows_per + ri, b * cols_per + ci, uu * vv));
                }
            }
        }
        SparseMatrix::from_triplets(f, n, triplets).unwrap()
    }

    #[test]
    fn chunk_sizes_differ_by_at_most_one() {
        let x = block_matrix(4, 10, 2, 1);
        let chunks = chunk_columns(&x, 3).unwrap();
        let sizes: Vec<usize> = chunks.iter().map(|c| c.cols.len()).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        assert_eq!(chunks[0].cols, 0..4);
        assert_eq!(chunks[2].cols, 7..10);
    }

    #[test]
    fn single_chunk_is_the_matrix_itself() {
        let x = block_matrix(4, 6, 2, 2);
        let chunks = chunk_columns(&x, 1).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].matrix, x);
    }

    #[test]
    fn chunk_count_out_of_range_is_an_error() {
        let x = block_matrix(4, 6, 2, 3);
        assert!(chunk_columns(&x, 0).is_err());
        assert!(chunk_columns(&x, 7).is_err());
    }

    #[test]
    fn chunks_concatenate_back_exactly() {
        let x = block_matrix(6, 11, 3, 4);
        let chunks = chunk_columns(&x, 4).unwrap();
        let mut triplets = Vec::new();
        for chunk in &chunks {
            for (r, c, v) in chunk.matrix.iter() {
                triplets.push((r, c + chunk.cols.start, v));
            }
        }
        let rebuilt = SparseMatrix::from_triplets(6, 11, triplets).unwrap();
        assert_eq!(rebuilt, x);
        let mut original = Vec::new();
        x.write_triplets(&mut original).unwrap();
        let mut recon = Vec::new();
        rebuilt.write_triplets(&mut recon).unwrap();
        assert_eq!(original, recon, "bit-level identical triplet text");
    }

    #[test]
    fn single_block_chunks_each_select_rank_one() {
        // Two chunks, each holding one distinct planted block.
        let x = rank1_blocks(10, 8, 2, 5);
        let chunks = chunk_columns(&x, 2).unwrap();
        let cf = factorize_chunks(&chunks, &params(1, 3, 6)).unwrap();
        assert_eq!(cf.factors[0].k, 1);
        assert_eq!(cf.factors[1].k, 1);
        assert_eq!(cf.total_rank(), 2);
    }

    #[test]
    fn zero_chunk_fails_naming_the_chunk() {
        let x = SparseMatrix::from_triplets(3, 4, vec![(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        let chunks = chunk_columns(&x, 2).unwrap();
        let err = factorize_chunks(&chunks, &params(1, 2, 7)).unwrap_err();
        assert!(err.to_string().contains("chunk 1"), "{err}");
    }

    #[test]
    fn duplicate_basis_chunks_merge_to_rank_one() {
        let x = rank1_blocks(6, 12, 1, 8);
        let chunks = chunk_columns(&x, 2).unwrap();
        let cf = factorize_chunks(&chunks, &params(1, 2, 9)).unwrap();
        assert_eq!(cf.total_rank(), 2, "one basis column per chunk");
        let merged = merge_chunk_factors(&cf, &params(1, 2, 9)).unwrap();
        assert_eq!(merged.p, 1);
        // The single H* row carries both chunks' coefficients, rescaled: the
        // reconstruction through the merged basis still fits the matrix.
        let err = relative_error(&x, &merged.w_x, &merged.h_star).unwrap();
        assert!(err < 0.05, "rel_error = {err}");
    }

    #[test]
    fn single_chunk_merge_refactorizes_faithfully() {
        let x = block_matrix(8, 10, 2, 10);
        let chunks = chunk_columns(&x, 1).unwrap();
        let cf = factorize_chunks(&chunks, &params(1, 4, 11)).unwrap();
        let own_err = cf.factors[0].rel_error;
        let merged = merge_chunk_factors(&cf, &params(1, 4, 11)).unwrap();
        let w_x_m = merged.w_x.dot(&merged.m_blocks[0]);
        for (a, b) in w_x_m.iter().zip(cf.factors[0].w.iter()) {
            assert!((a - b).abs() < 0.2, "W_x·M tracks W_1: {a} vs {b}");
        }
        let split_err = relative_error(&x, &merged.w_x, &merged.h_star).unwrap();
        assert!(
            split_err <= own_err * 1.10 + 1e-12,
            "split {split_err} vs direct {own_err}"
        );
    }

    #[test]
    fn disjoint_topic_chunks_merge_to_the_union() {
        // 4 planted blocks; chunk 1 sees blocks 0-1, chunk 2 sees blocks 2-3,
        // so the merged basis must keep all four directions. W̃ here is
        // exactly orthogonal, where an occasional solver run lands in a local
        // optimum; a wide ensemble dilutes those runs in the cluster means so
        // the true rank still clears the silhouette threshold.
        let x = rank1_blocks(16, 16, 4, 12);
        let chunks = chunk_columns(&x, 2).unwrap();
        let mut p = params(1, 4, 13);
        p.n_perturbs = 30;
        let cf = factorize_chunks(&chunks, &p).unwrap();
        assert_eq!(cf.total_rank(), 4);
        let merged = merge_chunk_factors(&cf, &p).unwrap();
        assert_eq!(merged.p, 4);
    }

    #[test]
    fn absent_side_info_passes_through() {
        let x = block_matrix(8, 8, 2, 14);
        let chunks = chunk_columns(&x, 2).unwrap();
        let cf = factorize_chunks(&chunks, &params(1, 3, 15)).unwrap();
        let merged = merge_chunk_factors(&cf, &params(1, 3, 15)).unwrap();
        let side = incorporate_side_info(&merged, None, None, (1.0, 1.0), &params(1, 3, 15))
            .unwrap();
        assert_eq!(side.w, merged.w_x);
        assert_eq!(side.h, merged.h_star);
        assert_eq!(side.z, merged.p);
        assert_eq!(side.t, merged.p);
        assert!(side.y.is_none());
        assert!(side.side_s.is_none() && side.side_c.is_none());
    }

    #[test]
    fn side_rank_bookkeeping_adds_up() {
        let x = block_matrix(12, 12, 3, 16);
        let s = block_matrix(12, 12, 3, 17);
        let s = {
            // Symmetrize the planted block matrix: S += Sᵀ.
            let mut sums: std::collections::BTreeMap<(usize, usize), f64> =
                std::collections::BTreeMap::new();
            for (r, c, v) in s.iter() {
                *sums.entry((r, c)).or_insert(0.0) += v;
                *sums.entry((c, r)).or_insert(0.0) += v;
            }
            SparseMatrix::from_triplets(
                12,
                12,
                sums.into_iter().map(|((r, c), v)| (r, c, v)).collect(),
            )
            .unwrap()
        };
        let c = block_matrix(12, 3, 3, 18);
        let chunks = chunk_columns(&x, 2).unwrap();
        let p = params(1, 4, 19);
        let cf = factorize_chunks(&chunks, &p).unwrap();
        let merged = merge_chunk_factors(&cf, &p).unwrap();
        let side = incorporate_side_info(&merged, Some(&s), Some(&c), (1.0, 1.0), &p).unwrap();
        let s_rank = side.side_s.as_ref().unwrap().k;
        let c_rank = side.side_c.as_ref().unwrap().k;
        assert_eq!(side.z, merged.p + s_rank + c_rank);
        assert_eq!(side.w_plus.ncols(), side.z);
        assert_eq!(side.w.ncols(), side.t);
        assert_eq!(side.h.nrows(), side.t);
        assert_eq!(side.h.ncols(), x.n_cols());
        assert!(side.t <= side.z);
        assert!(side.h.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn side_dimension_mismatch_is_an_error() {
        let x = block_matrix(8, 8, 2, 20);
        let chunks = chunk_columns(&x, 2).unwrap();
        let p = params(1, 3, 21);
        let cf = factorize_chunks(&chunks, &p).unwrap();
        let merged = merge_chunk_factors(&cf, &p).unwrap();
        let wrong = block_matrix(6, 6, 2, 22);
        assert!(incorporate_side_info(&merged, Some(&wrong), None, (1.0, 1.0), &p).is_err());
        let asym = SparseMatrix::from_triplets(8, 8, vec![(0, 1, 1.0)]).unwrap();
        assert!(incorporate_side_info(&merged, Some(&asym), None, (1.0, 1.0), &p).is_err());
        assert!(
            incorporate_side_info(&merged, None, None, (0.0, 1.0), &p).is_err(),
            "zero weight"
        );
    }

    #[test]
    fn run_split_is_deterministic() {
        let x = block_matrix(12, 16, 2, 23);
        let p = params(1, 3, 24);
        let a = run_split(&x, None, None, &sp(3, p), None).unwrap();
        let b = run_split(&x, None, None, &sp(3, p), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoints_are_reused_bit_exactly() {
        let x = block_matrix(12, 16, 2, 25);
        let p = params(1, 3, 26);
        let dir = tempfile::tempdir().unwrap();
        let first = run_split(&x, None, None, &sp(2, p), Some(dir.path())).unwrap();
        // Poison one chunk file mtime marker by recording bytes, then rerun.
        let chunk_w = dir.path().join("chunk_0_w.txt");
        let before = std::fs::read(&chunk_w).unwrap();
        let second = run_split(&x, None, None, &sp(2, p), Some(dir.path())).unwrap();
        assert_eq!(first, second);
        assert_eq!(std::fs::read(&chunk_w).unwrap(), before, "files untouched");

        let manifest: SplitManifest = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("split_manifest.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(manifest.m, 2);
        assert_eq!(
            manifest.chunk_ranks,
            Some(first.chunk_factors.factors.iter().map(|f| f.k).collect())
        );
    }

    #[test]
    fn stale_checkpoint_is_rejected_with_a_hint() {
        let x = block_matrix(12, 16, 2, 27);
        let p = params(1, 3, 28);
        let dir = tempfile::tempdir().unwrap();
        run_split(&x, None, None, &sp(2, p), Some(dir.path())).unwrap();
        let other = block_matrix(12, 16, 2, 999);
        let err =
            run_split(&other, None, None, &sp(2, p), Some(dir.path())).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
        assert!(err.to_string().contains("fresh checkpoint"), "{err}");

        let changed = params(1, 4, 28);
        let err =
            run_split(&x, None, None, &sp(2, changed), Some(dir.path())).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }

    #[test]
    fn partial_checkpoints_resume() {
        let x = block_matrix(12, 16, 2, 29);
        let p = params(1, 3, 30);
        let dir = tempfile::tempdir().unwrap();
        let full = run_split(&x, None, None, &sp(2, p), Some(dir.path())).unwrap();
        // Drop one chunk's files; the next run recomputes just that chunk.
        for suffix in ["w.txt", "h.txt", "meta.json"] {
            std::fs::remove_file(dir.path().join(format!("chunk_1_{suffix}"))).unwrap();
        }
        let resumed = run_split(&x, None, None, &sp(2, p), Some(dir.path())).unwrap();
        assert_eq!(full, resumed);
    }
}
