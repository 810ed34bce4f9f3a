//! Intelligible-component plumbing: the per-cell IC indicator, the
//! binary region indicator, top-k/percentile ROI selection, and
//! baseline-driven masking in both the domain and vector spaces.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seeds::fnv1a;
use crate::task::{extract_features, ProblemSample, Token, VectorRep, Vectorizer};

/// Sentinel for cells that map to no valid IC (padding or truncated).
pub const NO_IC: i32 = -1;

/// A valid IC: its index in the original sample, its name, the rows it
/// occupies in the vector representation, and its token content.
#[derive(Debug, Clone, PartialEq)]
pub struct IcDescriptor {
    pub original_index: usize,
    pub name: String,
    pub row_start: usize,
    pub row_len: usize,
    pub tokens: Vec<Token>,
}

/// The pair (per-cell index matrix, valid-IC array).
#[derive(Debug, Clone, PartialEq)]
pub struct ICIndicator {
    rows: usize,
    cols: usize,
    cells: Vec<i32>,
    pub ics: Vec<IcDescriptor>,
}

impl ICIndicator {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// IC index of a cell, or `NO_IC`.
    pub fn cell(&self, r: usize, c: usize) -> i32 {
        self.cells[r * self.cols + c]
    }

    /// Number of valid ICs.
    pub fn len(&self) -> usize {
        self.ics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ics.is_empty()
    }
}

/// Regions of interest: IC indices into the valid-IC array, or raw cells
/// in feature-level mode.
#[derive(Debug, Clone, PartialEq)]
pub enum Roi {
    Ics(BTreeSet<usize>),
    Cells(BTreeSet<(usize, usize)>),
}

impl Roi {
    pub fn ics(indices: impl IntoIterator<Item = usize>) -> Roi {
        Roi::Ics(indices.into_iter().collect())
    }

    pub fn all_ics(indicator: &ICIndicator) -> Roi {
        Roi::Ics((0..indicator.len()).collect())
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Roi::Ics(s) => s.is_empty(),
            Roi::Cells(s) => s.is_empty(),
        }
    }
}

/// Builds the IC indicator for a sample: each component is vectorized on
/// its own, its surviving rows inside the padded representation get the
/// running valid-IC index, and components with no vector counterpart
/// (fully truncated or empty) are filtered out.
pub fn ic_indicator(x: &ProblemSample, vectorizer: &Vectorizer) -> ICIndicator {
    let xf = extract_features(x);
    let rows = vectorizer.max_rows;
    let cols = vectorizer.embedding_dim();
    let mut cells = vec![NO_IC; rows * cols];
    let mut ics = Vec::new();

    for (original_index, (ic, &(start, len))) in x.ics.iter().zip(&xf.ic_spans).enumerate() {
        let end = (start + len).min(rows);
        if start >= rows || end <= start {
            continue;
        }
        let idx = ics.len() as i32;
        for r in start..end {
            for c in 0..cols {
                cells[r * cols + c] = idx;
            }
        }
        ics.push(IcDescriptor {
            original_index,
            name: ic.name.clone(),
            row_start: start,
            row_len: end - start,
            tokens: ic.tokens.clone(),
        });
    }

    ICIndicator { rows, cols, cells, ics }
}

/// The binary m-by-n indicator of a region: 1 where the cell belongs to
/// the ROI, 0 elsewhere.
pub fn indicator_matrix(indicator: &ICIndicator, roi: &Roi) -> Matrix {
    let (rows, cols) = indicator.shape();
    let mut out = Matrix::zeros(rows, cols);
    match roi {
        Roi::Ics(set) => {
            for r in 0..rows {
                for c in 0..cols {
                    let idx = indicator.cell(r, c);
                    if idx != NO_IC && set.contains(&(idx as usize)) {
                        out.set(r, c, 1.0);
                    }
                }
            }
        }
        Roi::Cells(set) => {
            for &(r, c) in set {
                if r < rows && c < cols {
                    out.set(r, c, 1.0);
                }
            }
        }
    }
    out
}

/// Threshold mode for ROI selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RoiMode {
    TopK(usize),
    /// Percentile in `(0, 100]`; selects `ceil(p% * |ICs|)`, at least one.
    TopPercentile(f64),
}

/// Indices of the top-scoring ICs. Ties break toward the lower IC index;
/// `k` clamps to the number of ICs.
pub fn select_roi(scores: &[f64], mode: RoiMode) -> Result<Roi> {
    if scores.is_empty() {
        return Err(Error::data("cannot select ROI from an empty attribution"));
    }
    let count = match mode {
        RoiMode::TopK(k) => {
            if k == 0 {
                return Err(Error::config("top-k requires k >= 1"));
            }
            k.min(scores.len())
        }
        RoiMode::TopPercentile(p) => {
            if !(p > 0.0 && p <= 100.0) {
                return Err(Error::config("percentile must be in (0, 100]"));
            }
            (((p / 100.0) * scores.len() as f64).ceil() as usize)
                .max(1)
                .min(scores.len())
        }
    };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(Roi::ics(order.into_iter().take(count)))
}

/// Pool of benign samples whose components replace masked regions.
#[derive(Debug, Clone)]
pub struct BaselineSet {
    pub samples: Vec<ProblemSample>,
    /// Flattened component contents, the actual replacement pool.
    pool: Vec<Vec<Token>>,
    pub seed: u64,
}

impl BaselineSet {
    pub fn new(samples: Vec<ProblemSample>, seed: u64) -> Result<BaselineSet> {
        if let Some(bad) = samples.iter().find(|s| s.label != 0) {
            return Err(Error::data(format!(
                "baseline pool must contain only non-risk samples (got {})",
                bad.id
            )));
        }
        let pool: Vec<Vec<Token>> = samples
            .iter()
            .flat_map(|s| s.ics.iter().map(|ic| ic.tokens.clone()))
            .collect();
        if pool.is_empty() {
            return Err(Error::data("baseline pool has no components"));
        }
        Ok(BaselineSet { samples, pool, seed })
    }

    /// Replacement tokens for a component, tiled or truncated to
    /// `target_len`. The draw is keyed by the replaced content and the
    /// masking seed, so identical components get identical replacements
    /// and re-masking is reproducible.
    pub fn replacement(&self, replaced: &[Token], target_len: usize, mask_seed: u64) -> Vec<Token> {
        let mut key = Vec::with_capacity(8 + replaced.len() * 2 + 8);
        key.extend_from_slice(&mask_seed.to_le_bytes());
        for &t in replaced {
            key.extend_from_slice(&t.to_le_bytes());
        }
        key.extend_from_slice(&(target_len as u64).to_le_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(&key) ^ self.seed);
        let source = &self.pool[rng.random_range(0..self.pool.len())];
        (0..target_len).map(|i| source[i % source.len()]).collect()
    }
}

/// Domain-space masking: replaces each selected component's token run
/// with benign content of the same length. Cells outside the region are
/// untouched; `r = {}` is the identity.
pub fn mask_sample(
    x: &ProblemSample,
    roi: &Roi,
    indicator: &ICIndicator,
    baselines: &BaselineSet,
    mask_seed: u64,
) -> Result<ProblemSample> {
    let set = match roi {
        Roi::Ics(set) => set,
        Roi::Cells(_) => {
            return Err(Error::data("domain-space masking expects an IC-level ROI"))
        }
    };
    let mut out = x.clone();
    for &idx in set {
        let desc = indicator
            .ics
            .get(idx)
            .ok_or_else(|| Error::data(format!("ROI index {idx} out of range")))?;
        let target = &mut out.ics[desc.original_index].tokens;
        *target = baselines.replacement(&desc.tokens, target.len(), mask_seed);
    }
    Ok(out)
}

/// Vector-space masking: overwrites the rows of each selected component
/// with the embedding of its replacement tokens. Equivalent to masking
/// the sample and re-vectorizing, restricted to the affected rows.
pub fn mask_vector(
    x_v: &VectorRep,
    roi: &Roi,
    indicator: &ICIndicator,
    baselines: &BaselineSet,
    vectorizer: &Vectorizer,
    mask_seed: u64,
) -> Result<VectorRep> {
    let set = match roi {
        Roi::Ics(set) => set,
        Roi::Cells(_) => {
            return Err(Error::data("vector-space masking expects an IC-level ROI"))
        }
    };
    let mut out = x_v.clone();
    for &idx in set {
        let desc = indicator
            .ics
            .get(idx)
            .ok_or_else(|| Error::data(format!("ROI index {idx} out of range")))?;
        let replacement = baselines.replacement(&desc.tokens, desc.row_len, mask_seed);
        for (offset, &tok) in replacement.iter().enumerate() {
            let row = desc.row_start + offset;
            out.matrix
                .row_mut(row)
                .copy_from_slice(vectorizer.embedding_row(tok));
        }
    }
    Ok(out)
}
