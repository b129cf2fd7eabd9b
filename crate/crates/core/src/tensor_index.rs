//! Multi-index arithmetic and lattice points of transportation polytopes.
//!
//! A [`MultiIndex`] `β = (β₁,…,β_q)` labels the tensorized Hermite element
//! `H_β(x) = ∏ h_{βᵢ}(xᵢ)`. Changing the orthonormal basis of `R^q` mixes
//! elements of equal total degree; the mixing weights are sums over integer
//! matrices with prescribed row and column sums, enumerated here.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A q-tuple of nonnegative integers.
///
/// Ordering is lexicographic on the entries, which makes it usable as a
/// deterministic map key.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        MultiIndex(entries)
    }

    pub fn zeros(q: usize) -> Self {
        MultiIndex(vec![0; q])
    }

    /// The unit index `e_i` scaled by `k`.
    pub fn axis(q: usize, i: usize, k: u32) -> Self {
        let mut e = vec![0; q];
        e[i] = k;
        MultiIndex(e)
    }

    pub fn q(&self) -> usize {
        self.0.len()
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    pub fn get(&self, i: usize) -> u32 {
        self.0[i]
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    /// `β_r + … + β_s` with zero-based inclusive bounds.
    pub fn partial_degree(&self, r: usize, s: usize) -> u32 {
        if r > s || r >= self.0.len() {
            return 0;
        }
        let s = s.min(self.0.len() - 1);
        self.0[r..=s].iter().sum()
    }

    /// Degree carried by the coordinates `from..q`.
    pub fn tail_degree(&self, from: usize) -> u32 {
        self.0.iter().skip(from).sum()
    }

    pub fn with_increment(&self, i: usize, by: i64) -> Option<MultiIndex> {
        let v = self.0[i] as i64 + by;
        if v < 0 {
            return None;
        }
        let mut e = self.0.clone();
        e[i] = v as u32;
        Some(MultiIndex(e))
    }

    /// `log β! = Σ log βᵢ!`.
    pub fn ln_factorial(&self) -> f64 {
        self.0.iter().map(|&b| ln_factorial(b)).sum()
    }

    /// True when every entry outside the first `k` coordinates vanishes.
    pub fn supported_in_prefix(&self, k: usize) -> bool {
        self.0.iter().skip(k).all(|&b| b == 0)
    }

    /// Drop or zero-pad to `q` coordinates. Dropped coordinates must be zero.
    pub fn resized(&self, q: usize) -> MultiIndex {
        let mut e = self.0.clone();
        e.resize(q, 0);
        MultiIndex(e)
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<Vec<u32>> for MultiIndex {
    fn from(v: Vec<u32>) -> Self {
        MultiIndex(v)
    }
}

impl<const N: usize> From<[u32; N]> for MultiIndex {
    fn from(v: [u32; N]) -> Self {
        MultiIndex(v.to_vec())
    }
}

const LN_FACT_TABLE: usize = 2048;

fn ln_fact_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..LN_FACT_TABLE)
            .map(|n| statrs::function::gamma::ln_gamma(n as f64 + 1.0))
            .collect()
    })
}

/// `log n!` through the log-gamma function.
pub fn ln_factorial(n: u32) -> f64 {
    let n = n as usize;
    if n < LN_FACT_TABLE {
        ln_fact_table()[n]
    } else {
        statrs::function::gamma::ln_gamma(n as f64 + 1.0)
    }
}

/// `log binom(n, k)`.
pub fn ln_binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// `binom(n, k)` as a float.
pub fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    ln_binomial(n, k).exp().round()
}

/// All `β ∈ N^q` with `|β| = k`, in lexicographic order.
pub fn enumerate_degree(q: usize, k: u32) -> Vec<MultiIndex> {
    assert!(q >= 1, "q must be positive");
    let mut out = Vec::new();
    let mut cur = vec![0u32; q];
    fill_compositions(&mut cur, 0, k, &mut out);
    out
}

fn fill_compositions(cur: &mut Vec<u32>, pos: usize, remaining: u32, out: &mut Vec<MultiIndex>) {
    let q = cur.len();
    if pos == q - 1 {
        cur[pos] = remaining;
        out.push(MultiIndex(cur.clone()));
        return;
    }
    for v in 0..=remaining {
        cur[pos] = v;
        fill_compositions(cur, pos + 1, remaining - v, out);
    }
}

/// All multi-indices of degree at most `k`, grouped by increasing degree.
pub fn enumerate_up_to(q: usize, k: u32) -> Vec<MultiIndex> {
    (0..=k).flat_map(|j| enumerate_degree(q, j)).collect()
}

/// A nonnegative integer matrix with row sums `γ` and column sums `β`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransportMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<u32>,
    row_sums: MultiIndex,
    col_sums: MultiIndex,
}

impl TransportMatrix {
    /// Builds from row-major entries, recomputing the margins.
    pub fn from_rows(rows: &[Vec<u32>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let entries: Vec<u32> = rows.iter().flat_map(|row| row.iter().copied()).collect();
        let row_sums = MultiIndex((0..r).map(|i| rows[i].iter().sum()).collect());
        let col_sums = MultiIndex(
            (0..c)
                .map(|j| rows.iter().map(|row| row[j]).sum())
                .collect(),
        );
        TransportMatrix {
            rows: r,
            cols: c,
            entries,
            row_sums,
            col_sums,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.entries[i * self.cols + j]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `γ`.
    pub fn row_sums(&self) -> &MultiIndex {
        &self.row_sums
    }

    /// `β`.
    pub fn col_sums(&self) -> &MultiIndex {
        &self.col_sums
    }

    pub fn to_rows(&self) -> Vec<Vec<u32>> {
        (0..self.rows)
            .map(|i| self.entries[i * self.cols..(i + 1) * self.cols].to_vec())
            .collect()
    }

    pub fn transpose(&self) -> TransportMatrix {
        let rows: Vec<Vec<u32>> = (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j)).collect())
            .collect();
        TransportMatrix::from_rows(&rows)
    }

    fn ln_entry_factorials(&self) -> f64 {
        self.entries.iter().map(|&t| ln_factorial(t)).sum()
    }
}

/// Every nonnegative integer matrix with row sums `γ` and column sums `β`.
///
/// Rows are filled one at a time; each entry is bounded by the remaining
/// column budget, and the last row is forced by the budget.
pub fn transport_polytope(beta: &MultiIndex, gamma: &MultiIndex) -> Result<Vec<TransportMatrix>> {
    if beta.degree() != gamma.degree() {
        return Err(Error::DegreeMismatch(beta.degree(), gamma.degree()));
    }
    let rows = gamma.q();
    let cols = beta.q();
    let mut out = Vec::new();
    if rows == 0 || cols == 0 {
        return Ok(out);
    }
    let mut budget: Vec<u32> = beta.entries().to_vec();
    let mut entries = vec![0u32; rows * cols];
    fill_polytope_row(
        0,
        gamma.entries(),
        &mut budget,
        &mut entries,
        cols,
        &mut out,
    );
    Ok(out)
}

fn fill_polytope_row(
    row: usize,
    gamma: &[u32],
    budget: &mut Vec<u32>,
    entries: &mut Vec<u32>,
    cols: usize,
    out: &mut Vec<TransportMatrix>,
) {
    let rows = gamma.len();
    if row == rows - 1 {
        // The remaining budget must equal the last row sum exactly.
        if budget.iter().sum::<u32>() != gamma[row] {
            return;
        }
        entries[row * cols..].copy_from_slice(budget);
        let rows_vec: Vec<Vec<u32>> = (0..rows)
            .map(|i| entries[i * cols..(i + 1) * cols].to_vec())
            .collect();
        out.push(TransportMatrix::from_rows(&rows_vec));
        return;
    }
    // Later rows must still be able to absorb what this row leaves behind.
    let later: u32 = gamma[row + 1..].iter().sum();
    fill_polytope_entry(row, 0, gamma[row], later, gamma, budget, entries, cols, out);
}

#[allow(clippy::too_many_arguments)]
fn fill_polytope_entry(
    row: usize,
    col: usize,
    remaining: u32,
    later: u32,
    gamma: &[u32],
    budget: &mut Vec<u32>,
    entries: &mut Vec<u32>,
    cols: usize,
    out: &mut Vec<TransportMatrix>,
) {
    if col == cols - 1 {
        if remaining > budget[col] {
            return;
        }
        entries[row * cols + col] = remaining;
        budget[col] -= remaining;
        if budget.iter().sum::<u32>() == later {
            fill_polytope_row(row + 1, gamma, budget, entries, cols, out);
        }
        budget[col] += remaining;
        return;
    }
    let hi = remaining.min(budget[col]);
    for v in 0..=hi {
        entries[row * cols + col] = v;
        budget[col] -= v;
        fill_polytope_entry(
            row,
            col + 1,
            remaining - v,
            later,
            gamma,
            budget,
            entries,
            cols,
            out,
        );
        budget[col] += v;
    }
}

/// `Q(T; β, γ) = ∏ⱼ multinom(βⱼ; column j) ∏ᵢ multinom(γᵢ; row i)`.
pub fn polytope_weight(t: &TransportMatrix) -> f64 {
    ln_polytope_weight(t).exp()
}

/// `log Q(T; β, γ) = log β! + log γ! − 2 Σ log T_ij!`.
pub fn ln_polytope_weight(t: &TransportMatrix) -> f64 {
    t.col_sums.ln_factorial() + t.row_sums.ln_factorial() - 2.0 * t.ln_entry_factorials()
}
