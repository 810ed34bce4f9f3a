//! Synthetic risk-detection task with planted IC-level ground truth.
//!
//! Samples are sequences of named intelligible components (ICs), each a
//! short token run. Risk samples start from a benign backbone and get
//! malicious motifs (fixed-length n-grams over a reserved token
//! alphabet) planted wholly inside selected ICs; those IC indices are
//! recorded as ground truth. Because the reserved alphabet never occurs
//! in benign content, an n-gram scan recovers the planted ICs exactly.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seeds::derive_seed;

pub type Token = u16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    /// Vocabulary size T; tokens are `0..T`.
    pub vocab_size: usize,
    pub benign_motifs: usize,
    pub malicious_motifs: usize,
    /// Motif n-gram length.
    pub motif_len: usize,
    /// Inclusive range of ICs per sample.
    pub ics_per_sample: (usize, usize),
    /// Inclusive range of tokens per IC.
    pub ic_len: (usize, usize),
    /// Inclusive range of malicious ICs planted into a risk sample.
    pub planted_ics: (usize, usize),
    pub train_benign: usize,
    pub train_risk: usize,
    pub test_benign: usize,
    pub test_risk: usize,
    /// Embedding width n.
    pub embedding_dim: usize,
    /// Padded sequence length m; longer sequences are truncated.
    pub max_rows: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            vocab_size: 64,
            benign_motifs: 8,
            malicious_motifs: 6,
            motif_len: 3,
            ics_per_sample: (4, 16),
            ic_len: (3, 12),
            planted_ics: (1, 3),
            train_benign: 240,
            train_risk: 240,
            test_benign: 80,
            test_risk: 80,
            embedding_dim: 8,
            max_rows: 256,
        }
    }
}

impl TaskSpec {
    /// Number of leading tokens reserved for malicious motifs. These
    /// never appear in benign content, which keeps ground truth exact.
    pub fn reserved_tokens(&self) -> usize {
        let mut h = self.motif_len.max(2);
        while h.pow(self.motif_len as u32) < 4 * self.malicious_motifs.max(1) {
            h += 1;
        }
        h
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("ics_per_sample", self.ics_per_sample),
            ("ic_len", self.ic_len),
            ("planted_ics", self.planted_ics),
        ];
        for (name, (lo, hi)) in ranges {
            if lo == 0 || lo > hi {
                return Err(Error::config(format!("{name} range ({lo},{hi}) is invalid")));
            }
        }
        if self.motif_len == 0 {
            return Err(Error::config("motif_len must be >= 1"));
        }
        if self.motif_len > self.ic_len.1 {
            return Err(Error::config(
                "infeasible task: motif is longer than the maximum IC length",
            ));
        }
        if self.planted_ics.1 > self.ics_per_sample.1 {
            return Err(Error::config(
                "infeasible task: more planted ICs than ICs per sample",
            ));
        }
        let reserved = self.reserved_tokens();
        if self.vocab_size <= reserved + 8 {
            return Err(Error::config(format!(
                "vocab too small: need > {} tokens",
                reserved + 8
            )));
        }
        if self.embedding_dim == 0 || self.max_rows == 0 {
            return Err(Error::config("embedding_dim and max_rows must be >= 1"));
        }
        Ok(())
    }
}

/// One intelligible component: a named token run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcRecord {
    pub name: String,
    pub tokens: Vec<Token>,
}

/// A problem-space sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSample {
    pub id: String,
    pub label: u8,
    pub ics: Vec<IcRecord>,
    /// Indices (into `ics`) of the components holding planted motifs.
    pub ground_truth: Vec<usize>,
}

/// Flat token sequence with per-IC spans that tile it exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRep {
    pub tokens: Vec<Token>,
    /// `(start, len)` per IC, in IC order.
    pub ic_spans: Vec<(usize, usize)>,
}

/// The m-by-n model input plus the padding mask.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorRep {
    pub matrix: Matrix,
    pub pad_mask: Vec<bool>,
}

/// Feature extraction: concatenates IC token runs in order.
pub fn extract_features(x: &ProblemSample) -> FeatureRep {
    let mut tokens = Vec::new();
    let mut ic_spans = Vec::with_capacity(x.ics.len());
    for ic in &x.ics {
        ic_spans.push((tokens.len(), ic.tokens.len()));
        tokens.extend_from_slice(&ic.tokens);
    }
    FeatureRep { tokens, ic_spans }
}

/// IC decomposition: the component records, in order. Size varies per
/// sample.
pub fn decompose(x: &ProblemSample) -> &[IcRecord] {
    &x.ics
}

/// Token-to-row embedding. The table is random, frozen, and derived from
/// a dedicated seed; it belongs to the representation, not to the model.
pub struct Vectorizer {
    embedding: Matrix,
    pub max_rows: usize,
    truncated_tokens: AtomicU64,
}

impl Vectorizer {
    pub fn new(spec: &TaskSpec, embedding_seed: u64) -> Vectorizer {
        let mut rng = ChaCha8Rng::seed_from_u64(embedding_seed);
        let mut table = Matrix::zeros(spec.vocab_size, spec.embedding_dim);
        for r in 0..spec.vocab_size {
            for c in 0..spec.embedding_dim {
                table.set(r, c, rng.random_range(-1.0..1.0));
            }
        }
        Vectorizer {
            embedding: table,
            max_rows: spec.max_rows,
            truncated_tokens: AtomicU64::new(0),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn embedding_row(&self, token: Token) -> &[f64] {
        self.embedding.row(token as usize)
    }

    /// Total tokens dropped by truncation so far (diagnostic only).
    pub fn truncated_tokens(&self) -> u64 {
        self.truncated_tokens.load(Ordering::Relaxed)
    }

    /// Vector representation: row i is the embedding of token i; rows
    /// beyond the sequence are zero with a false mask.
    pub fn vectorize(&self, xf: &FeatureRep) -> VectorRep {
        let n = self.embedding_dim();
        let mut matrix = Matrix::zeros(self.max_rows, n);
        let mut pad_mask = vec![false; self.max_rows];
        let take = xf.tokens.len().min(self.max_rows);
        if xf.tokens.len() > self.max_rows {
            self.truncated_tokens
                .fetch_add((xf.tokens.len() - self.max_rows) as u64, Ordering::Relaxed);
        }
        for (i, &tok) in xf.tokens[..take].iter().enumerate() {
            matrix.row_mut(i).copy_from_slice(self.embedding_row(tok));
            pad_mask[i] = true;
        }
        VectorRep { matrix, pad_mask }
    }

    /// Convenience composition of extraction and vectorization.
    pub fn vectorize_sample(&self, x: &ProblemSample) -> VectorRep {
        self.vectorize(&extract_features(x))
    }
}

/// Dataset split into disjoint train/test collections.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<ProblemSample>,
    pub test: Vec<ProblemSample>,
}

/// Motif pools drawn from the partitioned vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifPools {
    pub benign: Vec<Vec<Token>>,
    pub malicious: Vec<Vec<Token>>,
}

pub fn motif_pools(spec: &TaskSpec, data_seed: u64) -> MotifPools {
    let reserved = spec.reserved_tokens();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(data_seed, "motifs"));
    let draw_distinct = |rng: &mut ChaCha8Rng, count: usize, lo: Token, hi: Token| {
        let mut pool: Vec<Vec<Token>> = Vec::with_capacity(count);
        while pool.len() < count {
            let motif: Vec<Token> = (0..spec.motif_len)
                .map(|_| rng.random_range(lo..hi))
                .collect();
            if !pool.contains(&motif) {
                pool.push(motif);
            }
        }
        pool
    };
    let malicious = draw_distinct(&mut rng, spec.malicious_motifs, 0, reserved as Token);
    let benign = draw_distinct(
        &mut rng,
        spec.benign_motifs,
        reserved as Token,
        spec.vocab_size as Token,
    );
    MotifPools { benign, malicious }
}

fn benign_ic(rng: &mut ChaCha8Rng, spec: &TaskSpec, pools: &MotifPools) -> Vec<Token> {
    let reserved = spec.reserved_tokens() as Token;
    let len = rng.random_range(spec.ic_len.0..=spec.ic_len.1);
    let mut tokens: Vec<Token> = (0..len)
        .map(|_| rng.random_range(reserved..spec.vocab_size as Token))
        .collect();
    // About half the components carry a benign motif somewhere inside.
    if len >= spec.motif_len && rng.random_range(0.0..1.0) < 0.5 {
        let motif = &pools.benign[rng.random_range(0..pools.benign.len())];
        let pos = rng.random_range(0..=len - spec.motif_len);
        tokens[pos..pos + spec.motif_len].copy_from_slice(motif);
    }
    tokens
}

fn generate_sample(
    id: String,
    risky: bool,
    spec: &TaskSpec,
    pools: &MotifPools,
    seed: u64,
) -> ProblemSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ic_count = rng.random_range(spec.ics_per_sample.0..=spec.ics_per_sample.1);
    let mut ics: Vec<IcRecord> = (0..ic_count)
        .map(|i| IcRecord {
            name: format!("f{i:03}"),
            tokens: benign_ic(&mut rng, spec, pools),
        })
        .collect();

    let mut ground_truth = Vec::new();
    if risky {
        let eligible: Vec<usize> = (0..ic_count)
            .filter(|&i| ics[i].tokens.len() >= spec.motif_len)
            .collect();
        let want = rng.random_range(spec.planted_ics.0..=spec.planted_ics.1);
        let count = want.min(eligible.len()).max(1);
        // Seeded choice of distinct target ICs.
        let mut targets = eligible;
        for i in (1..targets.len()).rev() {
            let j = rng.random_range(0..=i);
            targets.swap(i, j);
        }
        targets.truncate(count);
        targets.sort_unstable();
        for &t in &targets {
            let motif = &pools.malicious[rng.random_range(0..pools.malicious.len())];
            let len = ics[t].tokens.len();
            let pos = rng.random_range(0..=len - spec.motif_len);
            ics[t].tokens[pos..pos + spec.motif_len].copy_from_slice(motif);
        }
        ground_truth = targets;
    }

    ProblemSample {
        id,
        label: u8::from(risky),
        ics,
        ground_truth,
    }
}

/// Generates the full benchmark. Deterministic given `data_seed`; every
/// sample draws from its own derived stream so ordering never matters.
pub fn generate_dataset(spec: &TaskSpec, data_seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let pools = motif_pools(spec, data_seed);
    let make = |split: &str, kind: &str, risky: bool, count: usize| -> Vec<ProblemSample> {
        (0..count)
            .map(|i| {
                let id = format!("{split}-{kind}-{i:05}");
                let seed = derive_seed(data_seed, &format!("sample/{id}"));
                generate_sample(id, risky, spec, &pools, seed)
            })
            .collect()
    };
    let mut train = make("train", "b", false, spec.train_benign);
    train.extend(make("train", "r", true, spec.train_risk));
    let mut test = make("test", "b", false, spec.test_benign);
    test.extend(make("test", "r", true, spec.test_risk));
    Ok(Dataset { train, test })
}

/// Scans one sample for malicious motifs per IC; the independent ground
/// truth oracle used across the test suites.
pub fn scan_malicious_ics(x: &ProblemSample, pools: &MotifPools) -> Vec<usize> {
    let mut found = Vec::new();
    for (i, ic) in x.ics.iter().enumerate() {
        let hit = pools.malicious.iter().any(|motif| {
            ic.tokens
                .windows(motif.len())
                .any(|window| window == motif.as_slice())
        });
        if hit {
            found.push(i);
        }
    }
    found
}

pub fn write_samples(path: &Path, samples: &[ProblemSample]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    for sample in samples {
        serde_json::to_writer(&mut out, sample)
            .map_err(|e| Error::data(format!("serialize sample: {e}")))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_samples(path: &Path) -> Result<Vec<ProblemSample>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    let reader = std::io::BufReader::new(file);
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: ProblemSample = serde_json::from_str(&line).map_err(|e| {
            Error::data(format!("{}:{}: bad record: {e}", path.display(), lineno + 1))
        })?;
        samples.push(sample);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> TaskSpec {
        TaskSpec {
            train_benign: 12,
            train_risk: 12,
            test_benign: 6,
            test_risk: 6,
            ..TaskSpec::default()
        }
    }

    #[test]
    fn zero_risk_spec_gives_all_benign() {
        let spec = TaskSpec {
            train_risk: 0,
            test_risk: 0,
            ..small_spec()
        };
        let data = generate_dataset(&spec, 1).unwrap();
        for s in data.train.iter().chain(&data.test) {
            assert_eq!(s.label, 0);
            assert!(s.ground_truth.is_empty());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec();
        let a = generate_dataset(&spec, 7).unwrap();
        let b = generate_dataset(&spec, 7).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn scan_oracle_recovers_exactly_the_planted_ics() {
        let spec = small_spec();
        let data = generate_dataset(&spec, 3).unwrap();
        let pools = motif_pools(&spec, 3);
        for s in data.train.iter().chain(&data.test) {
            let found = scan_malicious_ics(s, &pools);
            assert_eq!(found, s.ground_truth, "sample {}", s.id);
            assert_eq!(s.label == 1, !found.is_empty());
        }
    }

    #[test]
    fn motif_pools_are_disjoint_ngrams() {
        let spec = small_spec();
        let pools = motif_pools(&spec, 5);
        for m in &pools.malicious {
            assert!(!pools.benign.contains(m));
        }
        // Reserved alphabet split keeps them disjoint by construction.
        let reserved = spec.reserved_tokens() as Token;
        assert!(pools.malicious.iter().flatten().all(|&t| t < reserved));
        assert!(pools.benign.iter().flatten().all(|&t| t >= reserved));
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let spec = TaskSpec {
            motif_len: 20,
            ..small_spec()
        };
        assert!(spec.validate().is_err());
        let spec = TaskSpec {
            ic_len: (5, 4),
            ..small_spec()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn feature_extraction_spans_tile_the_sequence() {
        let x = ProblemSample {
            id: "t".into(),
            label: 0,
            ics: vec![
                IcRecord { name: "a".into(), tokens: vec![1, 2] },
                IcRecord { name: "b".into(), tokens: vec![3, 4, 5, 6] },
            ],
            ground_truth: vec![],
        };
        let xf = extract_features(&x);
        assert_eq!(xf.tokens, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(xf.ic_spans, vec![(0, 2), (2, 4)]);
    }

    #[test]
    fn single_ic_feature_rep() {
        let x = ProblemSample {
            id: "t".into(),
            label: 0,
            ics: vec![IcRecord { name: "a".into(), tokens: vec![9, 8, 7] }],
            ground_truth: vec![],
        };
        let xf = extract_features(&x);
        assert_eq!(xf.tokens.len(), 3);
        assert_eq!(xf.ic_spans, vec![(0, 3)]);
    }

    #[test]
    fn per_ic_slices_match_original_sequences() {
        let spec = small_spec();
        let data = generate_dataset(&spec, 9).unwrap();
        for s in &data.train {
            let xf = extract_features(s);
            for (ic, &(start, len)) in s.ics.iter().zip(&xf.ic_spans) {
                assert_eq!(&xf.tokens[start..start + len], ic.tokens.as_slice());
            }
            // h(x) concatenation equals the extracted token stream.
            let concat: Vec<Token> = decompose(s)
                .iter()
                .flat_map(|ic| ic.tokens.iter().copied())
                .collect();
            assert_eq!(concat, xf.tokens);
        }
    }

    #[test]
    fn vectorizer_embeds_and_pads() {
        let spec = small_spec();
        let v = Vectorizer::new(&spec, 11);
        let xf = FeatureRep {
            tokens: vec![5, 5, 9],
            ic_spans: vec![(0, 3)],
        };
        let xv = v.vectorize(&xf);
        assert_eq!(xv.matrix.shape(), (spec.max_rows, spec.embedding_dim));
        assert_eq!(xv.matrix.row(0), xv.matrix.row(1));
        assert_ne!(xv.matrix.row(0), xv.matrix.row(2));
        assert!(xv.pad_mask[..3].iter().all(|&b| b));
        assert!(xv.pad_mask[3..].iter().all(|&b| !b));
        assert!(xv.matrix.row(3).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn empty_sequence_vectorizes_to_zero() {
        let spec = small_spec();
        let v = Vectorizer::new(&spec, 11);
        let xv = v.vectorize(&FeatureRep { tokens: vec![], ic_spans: vec![] });
        assert!(xv.matrix.as_slice().iter().all(|&x| x == 0.0));
        assert!(xv.pad_mask.iter().all(|&b| !b));
    }

    #[test]
    fn nearest_neighbor_lookup_recovers_tokens() {
        let spec = small_spec();
        let v = Vectorizer::new(&spec, 13);
        let tokens: Vec<Token> = vec![0, 7, 31, 63, 12];
        let xv = v.vectorize(&FeatureRep {
            tokens: tokens.clone(),
            ic_spans: vec![(0, 5)],
        });
        for (i, &tok) in tokens.iter().enumerate() {
            let row = xv.matrix.row(i);
            let best = (0..spec.vocab_size)
                .min_by(|&a, &b| {
                    let da: f64 = v
                        .embedding_row(a as Token)
                        .iter()
                        .zip(row)
                        .map(|(e, r)| (e - r) * (e - r))
                        .sum();
                    let db: f64 = v
                        .embedding_row(b as Token)
                        .iter()
                        .zip(row)
                        .map(|(e, r)| (e - r) * (e - r))
                        .sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            assert_eq!(best as Token, tok);
        }
    }

    #[test]
    fn truncation_is_counted() {
        let spec = TaskSpec { max_rows: 4, ..small_spec() };
        let v = Vectorizer::new(&spec, 17);
        let xf = FeatureRep {
            tokens: vec![1; 10],
            ic_spans: vec![(0, 10)],
        };
        let xv = v.vectorize(&xf);
        assert_eq!(xv.matrix.rows(), 4);
        assert_eq!(v.truncated_tokens(), 6);
    }

    #[test]
    fn jsonl_round_trip() {
        let spec = small_spec();
        let data = generate_dataset(&spec, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        write_samples(&path, &data.train).unwrap();
        let back = read_samples(&path).unwrap();
        assert_eq!(back, data.train);
    }
}
