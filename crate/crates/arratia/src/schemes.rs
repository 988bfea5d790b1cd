//! Combinatorics of coalescence schemes.
//!
//! A scheme records, merge by merge, which survivor absorbed its right
//! neighbour: the i-th entry is the 1-based rank of the absorbing particle
//! among the survivors present just before that merge, so it lies in
//! `1..=n-i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The recorded merge indices of an `n`-point motion.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoalescenceScheme {
    n: usize,
    indices: Vec<usize>,
}

impl CoalescenceScheme {
    pub fn new(n: usize, indices: Vec<usize>) -> Result<Self> {
        let s = CoalescenceScheme { n, indices };
        if !s.is_valid() {
            return Err(Error::arg(format!(
                "indices {:?} invalid for n = {}",
                s.indices, s.n
            )));
        }
        Ok(s)
    }

    pub fn empty(n: usize) -> Self {
        CoalescenceScheme { n, indices: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn merges(&self) -> usize {
        self.indices.len()
    }

    /// Surviving cluster count after all recorded merges.
    pub fn clusters(&self) -> usize {
        self.n - self.indices.len()
    }

    /// Index-range validity: the i-th entry must lie in `1..=n-i`.
    pub fn is_valid(&self) -> bool {
        self.n >= 1
            && self.indices.len() <= self.n - 1
            && self
                .indices
                .iter()
                .enumerate()
                .all(|(i, &j)| j >= 1 && j <= self.n - i - 1)
    }

    /// Compact display such as `(2,1)`; the empty scheme prints as `()`.
    pub fn label(&self) -> String {
        let inner: Vec<String> = self.indices.iter().map(|j| j.to_string()).collect();
        format!("({})", inner.join(","))
    }
}

/// Validates index ranges of a raw index list against `n`.
pub fn validate(indices: &[usize], n: usize) -> bool {
    CoalescenceScheme {
        n,
        indices: indices.to_vec(),
    }
    .is_valid()
}

/// All schemes of `l` merges for an `n`-point motion, lexicographic.
/// There are `(n-1)(n-2)...(n-l)` of them.
pub fn enumerate(n: usize, l: usize) -> Result<Vec<CoalescenceScheme>> {
    if n == 0 {
        return Err(Error::arg("n must be at least 1"));
    }
    if l > n - 1 {
        return Err(Error::arg(format!("l = {l} exceeds n - 1 = {}", n - 1)));
    }
    let mut out = Vec::new();
    let mut current = vec![1usize; l];
    loop {
        out.push(CoalescenceScheme {
            n,
            indices: current.clone(),
        });
        // Mixed-radix increment, digit i running over 1..=n-i-1.
        let mut pos = l;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            if current[pos] < n - pos - 1 {
                current[pos] += 1;
                for digit in current.iter_mut().skip(pos + 1) {
                    *digit = 1;
                }
                break;
            }
        }
    }
}

/// All schemes for an `n`-point motion over every merge count.
pub fn enumerate_all(n: usize) -> Result<Vec<CoalescenceScheme>> {
    let mut out = Vec::new();
    for l in 0..n {
        out.extend(enumerate(n, l)?);
    }
    Ok(out)
}

/// A partition of `{1, ..., n}` into ascending contiguous blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalPartition {
    n: usize,
    /// Inclusive 1-based `(lo, hi)` bounds per block, ascending.
    blocks: Vec<(usize, usize)>,
}

impl IntervalPartition {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> &[(usize, usize)] {
        &self.blocks
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Block index containing the 1-based element `i`.
    pub fn block_of(&self, i: usize) -> Option<usize> {
        self.blocks.iter().position(|&(lo, hi)| lo <= i && i <= hi)
    }
}

/// Applies the merge indices to the singleton partition: step i joins the
/// blocks ranked `j_i` and `j_i + 1` (blocks ordered by minimum element).
pub fn to_partition(scheme: &CoalescenceScheme) -> Result<IntervalPartition> {
    if !scheme.is_valid() {
        return Err(Error::arg("invalid scheme"));
    }
    let mut blocks: Vec<(usize, usize)> = (1..=scheme.n()).map(|i| (i, i)).collect();
    for &j in scheme.indices() {
        // j is 1-based among current blocks; j + 1 exists by validity.
        let (_, hi) = blocks.remove(j);
        blocks[j - 1].1 = hi;
    }
    Ok(IntervalPartition {
        n: scheme.n(),
        blocks,
    })
}
