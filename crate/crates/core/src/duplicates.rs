//! Duplicate face discovery.
//!
//! Candidate pairs come from cosine similarity of externally computed face
//! embeddings, restricted to images of the same identity. A human then
//! confirms each candidate as a true duplicate or rejects it as a
//! near-duplicate (same person, different photo). Only confirmed duplicates
//! feed the label-conflict counts.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::annotation::AnnotationMatrix;
use crate::consistency::{inconsistency_level, DuplicateConflictStats};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::report::Row;

pub const DEFAULT_THRESHOLD: f64 = 0.9;

/// Fixed-dimension feature vectors keyed by image id, with identity ids.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    identities: Vec<String>,
    data: Vec<f64>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, image_id: &str, identity: &str, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteVector(image_id.to_string()));
        }
        if vector.iter().all(|x| *x == 0.0) {
            return Err(Error::ZeroNormVector(image_id.to_string()));
        }
        if self.index.contains_key(image_id) {
            return Err(Error::DuplicateId(image_id.to_string()));
        }
        self.index.insert(image_id.to_string(), self.ids.len());
        self.ids.push(image_id.to_string());
        self.identities.push(identity.to_string());
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, image_id: &str) -> Option<usize> {
        self.index.get(image_id).copied()
    }

    pub fn vector(&self, row: usize) -> &[f64] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn get(&self, image_id: &str) -> Option<&[f64]> {
        self.row(image_id).map(|r| self.vector(r))
    }

    pub fn identity(&self, row: usize) -> &str {
        &self.identities[row]
    }

    pub fn image_id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    /// Parses the embedding file format:
    ///
    /// ```text
    /// dim=<D>
    /// <image_id> <identity_id> f1 ... fD
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty embedding file".into(),
        })?;
        let dim: usize = header
            .trim()
            .strip_prefix("dim=")
            .and_then(|d| d.trim().parse().ok())
            .filter(|d| *d > 0)
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("expected dim=<D>, found {:?}", header.trim()),
            })?;
        let mut store = EmbeddingStore::new(dim);
        let mut buf = Vec::with_capacity(dim);
        for (idx, line) in lines {
            let mut tokens = line.split_whitespace();
            let Some(image_id) = tokens.next() else {
                continue;
            };
            let identity = tokens.next().ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: "missing identity id".into(),
            })?;
            buf.clear();
            for (col, tok) in tokens.enumerate() {
                buf.push(tok.parse::<f64>().map_err(|_| Error::BadValue {
                    line: idx + 1,
                    column: col + 1,
                    token: tok.to_string(),
                })?);
            }
            store.insert(image_id, identity, &buf)?;
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "dim={}", self.dim)?;
        for row in 0..self.len() {
            write!(out, "{} {}", self.ids[row], self.identities[row])?;
            for x in self.vector(row) {
                write!(out, " {x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    /// Row indices grouped by identity, groups in identity order.
    fn identity_groups(&self) -> Vec<(&str, Vec<usize>)> {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for row in 0..self.len() {
            groups.entry(&self.identities[row]).or_default().push(row);
        }
        groups.into_iter().collect()
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pending,
    Duplicate,
    NearDuplicateRejected,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pending => "PENDING",
            Verdict::Duplicate => "DUPLICATE",
            Verdict::NearDuplicateRejected => "NEAR_DUPLICATE_REJECTED",
        })
    }
}

impl FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PENDING" => Ok(Verdict::Pending),
            "DUPLICATE" => Ok(Verdict::Duplicate),
            "NEAR_DUPLICATE_REJECTED" | "NEAR_DUPLICATE" | "REJECTED" => {
                Ok(Verdict::NearDuplicateRejected)
            }
            other => Err(Error::InvalidArgument(format!("unknown verdict {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub pair_id: u32,
    pub identity: String,
    /// Lexicographically smaller id.
    pub image_a: String,
    pub image_b: String,
    pub similarity: f64,
    pub verdict: Verdict,
    pub reviewer: Option<String>,
    pub decided_at: Option<DateTime<Utc>>,
    /// Set when a second reviewer disagreed with the stored verdict.
    pub arbitration: bool,
}

impl CandidatePair {
    pub fn is_confirmed(&self) -> bool {
        self.verdict == Verdict::Duplicate && !self.arbitration
    }
}

impl Row for CandidatePair {
    fn header() -> Vec<&'static str> {
        vec!["pair_id", "image_a", "image_b", "similarity", "verdict", "reviewer", "arbitration"]
    }

    fn cells(&self) -> Vec<String> {
        vec![
            self.pair_id.to_string(),
            self.image_a.clone(),
            self.image_b.clone(),
            format!("{:.4}", self.similarity),
            self.verdict.to_string(),
            self.reviewer.clone().unwrap_or_else(|| "-".into()),
            self.arbitration.to_string(),
        ]
    }
}

/// All same-identity pairs with cosine similarity at or above `threshold`.
/// Output order: identity, then `(image_a, image_b)`.
pub fn find_candidate_pairs(store: &EmbeddingStore, threshold: f64) -> Result<Vec<CandidatePair>> {
    find_candidate_pairs_with(store, threshold, Execution::default())
}

pub fn find_candidate_pairs_with(
    store: &EmbeddingStore,
    threshold: f64,
    exec: Execution,
) -> Result<Vec<CandidatePair>> {
    if !(threshold > -1.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} outside (-1, 1]"
        )));
    }
    let groups = store.identity_groups();
    let per_group = exec.map(&groups, |(identity, rows)| {
        let mut ordered = rows.clone();
        ordered.sort_by(|a, b| store.image_id(*a).cmp(store.image_id(*b)));
        let mut found = Vec::new();
        for (i, &a) in ordered.iter().enumerate() {
            for &b in &ordered[i + 1..] {
                let sim = cosine(store.vector(a), store.vector(b));
                if sim >= threshold {
                    found.push((identity.to_string(), a, b, sim));
                }
            }
        }
        found
    });
    Ok(per_group
        .into_iter()
        .flatten()
        .enumerate()
        .map(|(i, (identity, a, b, sim))| CandidatePair {
            pair_id: i as u32,
            identity,
            image_a: store.image_id(a).to_string(),
            image_b: store.image_id(b).to_string(),
            similarity: sim,
            verdict: Verdict::Pending,
            reviewer: None,
            decided_at: None,
            arbitration: false,
        })
        .collect())
}

/// Candidate pairs with their review state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairQueue {
    pairs: Vec<CandidatePair>,
}

impl PairQueue {
    pub fn new(pairs: Vec<CandidatePair>) -> Self {
        PairQueue { pairs }
    }

    pub fn pairs(&self) -> &[CandidatePair] {
        &self.pairs
    }

    pub fn get(&self, pair_id: u32) -> Result<&CandidatePair> {
        self.pairs
            .iter()
            .find(|p| p.pair_id == pair_id)
            .ok_or(Error::UnknownPair(pair_id))
    }

    fn get_mut(&mut self, pair_id: u32) -> Result<&mut CandidatePair> {
        self.pairs
            .iter_mut()
            .find(|p| p.pair_id == pair_id)
            .ok_or(Error::UnknownPair(pair_id))
    }

    /// Stores a reviewer verdict. Re-submitting the stored verdict is a
    /// no-op; a different verdict flags the pair for arbitration and fails
    /// with `VerdictConflict` without overwriting.
    pub fn record_verdict(
        &mut self,
        pair_id: u32,
        verdict: Verdict,
        reviewer: &str,
    ) -> Result<&CandidatePair> {
        if verdict == Verdict::Pending {
            return Err(Error::InvalidArgument("verdict must not be PENDING".into()));
        }
        let pair = self.get_mut(pair_id)?;
        if pair.verdict == Verdict::Pending {
            pair.verdict = verdict;
            pair.reviewer = Some(reviewer.to_string());
            pair.decided_at = Some(Utc::now());
        } else if pair.verdict != verdict {
            pair.arbitration = true;
            return Err(Error::VerdictConflict {
                pair: pair_id,
                existing: pair.verdict.to_string(),
                submitted: verdict.to_string(),
                reviewer: reviewer.to_string(),
            });
        }
        Ok(pair)
    }

    /// Final ruling on a pair in arbitration (or any decided pair).
    pub fn arbitrate(&mut self, pair_id: u32, verdict: Verdict, arbiter: &str) -> Result<&CandidatePair> {
        if verdict == Verdict::Pending {
            return Err(Error::InvalidArgument("verdict must not be PENDING".into()));
        }
        let pair = self.get_mut(pair_id)?;
        pair.verdict = verdict;
        pair.reviewer = Some(arbiter.to_string());
        pair.decided_at = Some(Utc::now());
        pair.arbitration = false;
        Ok(pair)
    }

    pub fn arbitration_queue(&self) -> impl Iterator<Item = &CandidatePair> {
        self.pairs.iter().filter(|p| p.arbitration)
    }

    pub fn pending(&self) -> impl Iterator<Item = &CandidatePair> {
        self.pairs.iter().filter(|p| p.verdict == Verdict::Pending)
    }

    pub fn confirmed(&self) -> impl Iterator<Item = &CandidatePair> {
        self.pairs.iter().filter(|p| p.is_confirmed())
    }

    /// Tab-separated export:
    /// `pair_id image_a image_b similarity verdict reviewer identity arbitration`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("pair_id\timage_a\timage_b\tsimilarity\tverdict\treviewer\tidentity\tarbitration\n");
        for p in &self.pairs {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                p.pair_id,
                p.image_a,
                p.image_b,
                p.similarity,
                p.verdict,
                p.reviewer.as_deref().unwrap_or("-"),
                p.identity,
                p.arbitration as u8
            ));
        }
        out
    }

    /// Accepts the export format; the trailing identity and arbitration
    /// columns are optional.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() || line.starts_with("pair_id") {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() < 6 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected at least 6 fields, found {}", f.len()),
                });
            }
            let bad = |col: usize| Error::BadValue {
                line: line_no,
                column: col,
                token: f[col - 1].to_string(),
            };
            pairs.push(CandidatePair {
                pair_id: f[0].parse().map_err(|_| bad(1))?,
                image_a: f[1].to_string(),
                image_b: f[2].to_string(),
                similarity: f[3].parse().map_err(|_| bad(4))?,
                verdict: f[4].parse().map_err(|_| bad(5))?,
                reviewer: (f[5] != "-").then(|| f[5].to_string()),
                decided_at: None,
                identity: f.get(6).map(|s| s.to_string()).unwrap_or_default(),
                arbitration: f.get(7).is_some_and(|s| *s == "1"),
            });
        }
        Ok(PairQueue { pairs })
    }
}

/// Raw per-attribute tallies over confirmed duplicate pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictCounts {
    pub attribute: String,
    pub n_differ: u64,
    pub n_p: u64,
    pub n_n: u64,
    pub n_total: u64,
}

impl ConflictCounts {
    pub fn stats(&self) -> Result<DuplicateConflictStats> {
        inconsistency_level(&self.attribute, self.n_differ, self.n_p, self.n_n, self.n_total)
    }
}

/// Tallies label conflicts of confirmed duplicate pairs for every attribute.
///
/// Pending, rejected and in-arbitration pairs are ignored. A pair with an
/// unusable member is skipped entirely; a pair with info-not-visible on
/// either side is skipped for that attribute only.
pub fn attribute_conflicts(
    pairs: &[CandidatePair],
    matrix: &AnnotationMatrix,
) -> Result<Vec<ConflictCounts>> {
    let mut rows = Vec::new();
    for p in pairs.iter().filter(|p| p.is_confirmed()) {
        let a = matrix.image_index(&p.image_a)?;
        let b = matrix.image_index(&p.image_b)?;
        if matrix.records()[a].unusable || matrix.records()[b].unusable {
            continue;
        }
        rows.push((a, b));
    }
    Ok(matrix
        .attributes()
        .iter()
        .enumerate()
        .map(|(col, name)| {
            let mut c = ConflictCounts {
                attribute: name.clone(),
                n_differ: 0,
                n_p: 0,
                n_n: 0,
                n_total: 0,
            };
            for &(a, b) in &rows {
                let va = matrix.cell(a, col).and_then(|v| v.as_bool());
                let vb = matrix.cell(b, col).and_then(|v| v.as_bool());
                if let (Some(x), Some(y)) = (va, vb) {
                    c.n_total += 1;
                    c.n_p += x as u64 + y as u64;
                    c.n_n += (!x) as u64 + (!y) as u64;
                    c.n_differ += (x != y) as u64;
                }
            }
            c
        })
        .collect())
}

/// Inconsistency stats for every attribute that has both classes among the
/// pair labels. Degenerate attributes are returned by name in the second
/// element.
pub fn duplicate_inconsistency(
    pairs: &[CandidatePair],
    matrix: &AnnotationMatrix,
) -> Result<(Vec<DuplicateConflictStats>, Vec<String>)> {
    let mut stats = Vec::new();
    let mut degenerate = Vec::new();
    for counts in attribute_conflicts(pairs, matrix)? {
        match counts.stats() {
            Ok(s) => stats.push(s),
            Err(Error::DegenerateFrequency { .. }) => degenerate.push(counts.attribute),
            Err(e) => return Err(e),
        }
    }
    Ok((stats, degenerate))
}
