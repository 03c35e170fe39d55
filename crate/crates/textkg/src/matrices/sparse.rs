//! Column-compressed sparse matrices with strictly positive entries.
//!
//! The storage invariants are load-bearing for the rest of the crate: every
//! stored value is finite and > 0, indices are in range, and entries within a
//! column are sorted by row with no duplicates. Absent entries mean exactly
//! zero. The text serialization is canonical, so equal matrices produce
//! byte-identical files and files round-trip bit-exactly.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    /// col_ptr[j]..col_ptr[j+1] indexes the entries of column j.
    col_ptr: Vec<usize>,
    /// Strictly increasing within each column.
    row_idx: Vec<usize>,
    /// Parallel to row_idx; every value finite and > 0.
    values: Vec<f64>,
}

impl SparseMatrix {
    /// An all-zero matrix of the given shape.
    pub fn empty(n_rows: usize, n_cols: usize) -> Self {
        SparseMatrix {
            n_rows,
            n_cols,
            col_ptr: vec![0; n_cols + 1],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from (row, col, value) triplets in any order.
    /// Rejects out-of-range indices, duplicates, and values that are not
    /// finite and strictly positive.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        for &(r, c, v) in &triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::invalid(format!(
                    "entry ({r}, {c}) out of range for a {n_rows}x{n_cols} matrix"
                )));
            }
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!(
                    "entry ({r}, {c}) has value {v}; entries must be finite and > 0"
                )));
            }
        }
        triplets.sort_unstable_by_key(|&(r, c, _)| (c, r));
        for pair in triplets.windows(2) {
            if pair[0].0 == pair[1].0 && pair[0].1 == pair[1].1 {
                return Err(Error::invalid(format!(
                    "duplicate entry at ({}, {})",
                    pair[0].0, pair[0].1
                )));
            }
        }
        let mut m = SparseMatrix::empty(n_rows, n_cols);
        m.row_idx.reserve(triplets.len());
        m.values.reserve(triplets.len());
        let mut col = 0usize;
        for (r, c, v) in triplets {
            while col < c {
                col += 1;
                m.col_ptr[col] = m.row_idx.len();
            }
            m.row_idx.push(r);
            m.values.push(v);
        }
        while col < n_cols {
            col += 1;
            m.col_ptr[col] = m.row_idx.len();
        }
        Ok(m)
    }

    /// Builds from a dense array, omitting zeros. Negative, NaN, or infinite
    /// entries are rejected.
    pub fn from_dense(a: &Array2<f64>) -> Result<Self> {
        let mut triplets = Vec::new();
        for ((i, j), &v) in a.indexed_iter() {
            if v == 0.0 {
                continue;
            }
            triplets.push((i, j, v));
        }
        SparseMatrix::from_triplets(a.nrows(), a.ncols(), triplets)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n_rows, self.n_cols));
        for (r, c, v) in self.iter() {
            a[[r, c]] = v;
        }
        a
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Entries in column-major order: (row, col, value).
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_cols).flat_map(move |c| {
            self.col_range_indices(c)
                .map(move |e| (self.row_idx[e], c, self.values[e]))
        })
    }

    /// Entries of one column: (row, value), ascending by row.
    pub fn column(&self, col: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        assert!(col < self.n_cols, "column {col} out of range");
        self.col_range_indices(col)
            .map(move |e| (self.row_idx[e], self.values[e]))
    }

    fn col_range_indices(&self, col: usize) -> Range<usize> {
        self.col_ptr[col]..self.col_ptr[col + 1]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        assert!(row < self.n_rows && col < self.n_cols);
        let lo = self.col_ptr[col];
        let hi = self.col_ptr[col + 1];
        match self.row_idx[lo..hi].binary_search(&row) {
            Ok(off) => self.values[lo + off],
            Err(_) => 0.0,
        }
    }

    /// Copies a contiguous range of columns into a new matrix.
    pub fn slice_cols(&self, cols: Range<usize>) -> SparseMatrix {
        assert!(
            cols.start <= cols.end && cols.end <= self.n_cols,
            "column range {cols:?} out of range for {} columns",
            self.n_cols
        );
        let lo = self.col_ptr[cols.start];
        let hi = self.col_ptr[cols.end];
        let base = self.col_ptr[cols.start];
        SparseMatrix {
            n_rows: self.n_rows,
            n_cols: cols.len(),
            col_ptr: self.col_ptr[cols.start..=cols.end]
                .iter()
                .map(|p| p - base)
                .collect(),
            row_idx: self.row_idx[lo..hi].to_vec(),
            values: self.values[lo..hi].to_vec(),
        }
    }

    pub fn transpose(&self) -> SparseMatrix {
        let triplets: Vec<_> = self.iter().map(|(r, c, v)| (c, r, v)).collect();
        SparseMatrix::from_triplets(self.n_cols, self.n_rows, triplets)
            .expect("transpose preserves validity")
    }

    /// Applies a positive scaling factor to every entry.
    pub fn scaled(&self, factor: f64) -> Result<SparseMatrix> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::invalid(format!(
                "scale factor must be finite and > 0, got {factor}"
            )));
        }
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= factor;
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Sum of each row's entries.
    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_rows];
        for (r, _, v) in self.iter() {
            sums[r] += v;
        }
        sums
    }

    /// Writes the canonical triplet text form:
    /// a `rows cols nnz` header, then one `row col value` line per entry
    /// sorted by (col, row), with 0-based indices and values printed to
    /// 17 significant digits so reading restores the exact bits.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut buf = String::new();
        writeln!(buf, "{} {} {}", self.n_rows, self.n_cols, self.nnz()).unwrap();
        for (r, c, v) in self.iter() {
            writeln!(buf, "{r} {c} {v:.16e}").unwrap();
        }
        w.write_all(buf.as_bytes())
    }

    /// Parses the canonical triplet text form, enforcing the exact layout
    /// `write_triplets` produces: correct entry count, (col, row) order
    /// without duplicates, in-range indices, positive finite values, and no
    /// trailing content.
    pub fn read_triplets<R: BufRead>(r: R, origin: &Path) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let bad = |line: usize, msg: String| Error::parse(origin, line, msg);
        let io_err = |e| Error::io(origin, e);

        let (_, header) = lines
            .next()
            .ok_or_else(|| bad(1, "missing header line".into()))?
            .1
            .map_err(io_err)
            .map(|h| (0usize, h))?;
        let mut head = header.split_ascii_whitespace();
        let mut field = |name: &str| -> Result<usize> {
            head.next()
                .ok_or_else(|| bad(1, format!("header missing {name}")))?
                .parse::<usize>()
                .map_err(|_| bad(1, format!("header {name} is not an integer")))
        };
        let n_rows = field("rows")?;
        let n_cols = field("cols")?;
        let nnz = field("nnz")?;
        if head.next().is_some() {
            return Err(bad(1, "header has trailing fields".into()));
        }

        let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(nnz);
        let mut prev: Option<(usize, usize)> = None;
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.map_err(io_err)?;
            if triplets.len() == nnz {
                return Err(bad(lineno, format!("expected {nnz} entries, found more")));
            }
            let mut parts = line.split_ascii_whitespace();
            let (r, c, v) = (|| -> Option<(usize, usize, f64)> {
                let r = parts.next()?.parse().ok()?;
                let c = parts.next()?.parse().ok()?;
                let v = parts.next()?.parse().ok()?;
                if parts.next().is_some() {
                    return None;
                }
                Some((r, c, v))
            })()
            .ok_or_else(|| bad(lineno, "expected `row col value`".into()))?;
            if r >= n_rows || c >= n_cols {
                return Err(bad(lineno, format!("entry ({r}, {c}) out of range")));
            }
            if !(v.is_finite() && v > 0.0) {
                return Err(bad(lineno, format!("value {v} is not finite and > 0")));
            }
            if let Some(p) = prev {
                if (c, r) <= (p.1, p.0) {
                    return Err(bad(lineno, "entries not sorted by (col, row)".into()));
                }
            }
            prev = Some((r, c));
            triplets.push((r, c, v));
        }
        if triplets.len() != nnz {
            return Err(Error::parse(
                origin,
                None,
                format!("expected {nnz} entries, found {}", triplets.len()),
            ));
        }
        SparseMatrix::from_triplets(n_rows, n_cols, triplets)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_triplets(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        SparseMatrix::read_triplets(BufReader::new(file), path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn sample() -> SparseMatrix {
        SparseMatrix::from_triplets(3, 4, vec![(2, 1, 0.5), (0, 1, 1.5), (1, 3, 2.0)]).unwrap()
    }

    #[test]
    fn from_triplets_orders_column_major() {
        let m = sample();
        let got: Vec<_> = m.iter().collect();
        assert_eq!(got, vec![(0, 1, 1.5), (2, 1, 0.5), (1, 3, 2.0)]);
        assert_eq!(m.get(2, 1), 0.5);
        assert_eq!(m.get(0, 0), 0.0);
    }

    #[test]
    fn from_triplets_rejects_invalid_entries() {
        for v in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(SparseMatrix::from_triplets(2, 2, vec![(0, 0, v)]).is_err());
        }
        assert!(SparseMatrix::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
        assert!(SparseMatrix::from_triplets(2, 2, vec![(0, 2, 1.0)]).is_err());
        assert!(
            SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0)]).is_err(),
            "duplicates must be rejected"
        );
    }

    #[test]
    fn dense_round_trip() {
        let a = array![[0.0, 1.25], [3.5, 0.0]];
        let m = SparseMatrix::from_dense(&a).unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.to_dense(), a);
        assert!(SparseMatrix::from_dense(&array![[-1.0]]).is_err());
    }

    #[test]
    fn slice_cols_preserves_entries() {
        let m = sample();
        let s = m.slice_cols(1..3);
        assert_eq!(s.n_rows(), 3);
        assert_eq!(s.n_cols(), 2);
        let got: Vec<_> = s.iter().collect();
        assert_eq!(got, vec![(0, 0, 1.5), (2, 0, 0.5)]);
        let empty = m.slice_cols(2..2);
        assert_eq!(empty.n_cols(), 0);
        assert_eq!(empty.nnz(), 0);
    }

    #[test]
    fn transpose_involutes() {
        let m = sample();
        assert_eq!(m.transpose().transpose(), m);
        assert_eq!(m.transpose().get(1, 2), 0.5);
    }

    #[test]
    fn row_sums_and_norms() {
        let m = sample();
        assert_eq!(m.row_sums(), vec![1.5, 2.0, 0.5]);
        assert_eq!(m.sum(), 4.0);
        let expect = (1.5f64 * 1.5 + 0.5 * 0.5 + 2.0 * 2.0).sqrt();
        assert!((m.frobenius_norm() - expect).abs() < 1e-15);
    }

    #[test]
    fn triplet_text_layout_is_canonical() {
        let mut out = Vec::new();
        sample().write_triplets(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "3 4 3\n\
             0 1 1.5000000000000000e0\n\
             2 1 5.0000000000000000e-1\n\
             1 3 2.0000000000000000e0\n"
        );
    }

    #[test]
    fn read_rejects_malformed_files() {
        let path = Path::new("test.txt");
        let cases: &[&str] = &[
            "",                                     // missing header
            "2 2\n",                                // short header
            "2 2 1\n",                              // missing entries
            "2 2 0\n0 0 1.0\n",                     // extra entries
            "2 2 1\n0 0 0.0\n",                     // zero value
            "2 2 1\n0 0 nope\n",                    // unparseable value
            "2 2 1\n3 0 1.0\n",                     // row out of range
            "2 2 2\n1 0 1.0\n0 0 1.0\n",            // unsorted
            "2 2 2\n0 0 1.0\n0 0 2.0\n",            // duplicate
            "2 2 1 9\n0 0 1.0\n",                   // trailing header field
            "2 2 1\n0 0 1.0 7\n",                   // trailing entry field
        ];
        for case in cases {
            let got = SparseMatrix::read_triplets(case.as_bytes(), path);
            assert!(got.is_err(), "expected parse failure for {case:?}");
        }
    }

    #[test]
    fn empty_matrix_round_trips() {
        let m = SparseMatrix::empty(5, 0);
        let mut out = Vec::new();
        m.write_triplets(&mut out).unwrap();
        let back = SparseMatrix::read_triplets(&out[..], Path::new("t")).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn text_round_trip_is_bit_exact(
            entries in proptest::collection::btree_map(
                (0usize..7, 0usize..9),
                prop::num::f64::POSITIVE.prop_filter("finite", |v| v.is_finite() && *v > 0.0),
                0..40,
            )
        ) {
            let triplets: Vec<_> = entries.iter().map(|(&(r, c), &v)| (r, c, v)).collect();
            let m = SparseMatrix::from_triplets(7, 9, triplets).unwrap();
            let mut out = Vec::new();
            m.write_triplets(&mut out).unwrap();
            let back = SparseMatrix::read_triplets(&out[..], Path::new("t")).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
