//! Error-rate audits of existing labels.
//!
//! For one attribute and one original value (a stratum), a uniform sample is
//! drawn, labeled independently by two annotation passes, reconciled where
//! the passes disagree, and compared with the original labels. Error rates
//! carry Wilson score intervals.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::annotation::{AnnotationMatrix, LabelValue};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::report::Row;
use crate::rng::{self, GENERATOR_ID};

pub const DEFAULT_MIN_PER_VALUE: usize = 500;

/// Two-sided normal quantile for a central `confidence` interval.
pub fn z_for_confidence(confidence: f64) -> Result<f64> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence {confidence} outside (0, 1)"
        )));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(0.5 + confidence / 2.0))
}

/// Wilson score interval for `successes` out of `n`, clipped to `[0, 1]`.
/// The bounds are exact (0 or 1) at the boundary counts.
pub fn wilson_interval(successes: u64, n: u64, confidence: f64) -> Result<(f64, f64)> {
    if n == 0 || successes > n {
        return Err(Error::BadCounts { successes, n });
    }
    let z = z_for_confidence(confidence)?;
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).clamp(0.0, p) };
    let hi = if successes == n { 1.0 } else { (centre + half).clamp(p, 1.0) };
    Ok((lo, hi))
}

/// Fraction of `trials` simulated Bernoulli(`p`) audits of size `n` whose
/// 95% Wilson interval contains `p`.
pub fn wilson_coverage(p: f64, n: u64, trials: usize, seed: u64, exec: Execution) -> f64 {
    let hits = exec.map_range(trials, |t| {
        let mut r = rng::seeded(rng::derive_seed(seed, &[t as u64]));
        let successes = (0..n).filter(|_| rng::unit_f64(&mut r) < p).count() as u64;
        let (lo, hi) = wilson_interval(successes, n, 0.95).expect("valid counts");
        (lo <= p && p <= hi) as usize
    });
    hits.iter().sum::<usize>() as f64 / trials as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub attribute: String,
    pub target_value: bool,
    pub sample_ids: Vec<String>,
    pub min_per_value: usize,
    pub rng_seed: u64,
    pub generator: String,
    pub population: usize,
    /// The stratum had fewer images than `min_per_value`; all were taken.
    pub short_population: bool,
}

/// Uniform sample without replacement of `min_per_value` usable images whose
/// original `attribute` value is `target_value`. Deterministic in `seed`.
pub fn sampling_plan(
    matrix: &AnnotationMatrix,
    attribute: &str,
    target_value: bool,
    min_per_value: usize,
    seed: u64,
) -> Result<SamplingPlan> {
    let col = matrix.attribute_index(attribute)?;
    let population: Vec<&str> = matrix
        .column(col)
        .filter(|(_, v)| v.as_bool() == Some(target_value))
        .map(|(id, _)| id)
        .collect();
    if population.is_empty() {
        return Err(Error::EmptyPopulation {
            attribute: attribute.to_string(),
            value: LabelValue::from_bool(target_value).to_string(),
        });
    }
    let short = population.len() < min_per_value;
    if short {
        log::warn!(
            "SHORT_POPULATION: {attribute}={} has {} images, fewer than {min_per_value}; taking all",
            LabelValue::from_bool(target_value),
            population.len()
        );
    }
    let picks = rng::sample_indices(&mut rng::seeded(seed), population.len(), min_per_value);
    Ok(SamplingPlan {
        attribute: attribute.to_string(),
        target_value,
        sample_ids: picks.into_iter().map(|i| population[i].to_string()).collect(),
        min_per_value,
        rng_seed: seed,
        generator: GENERATOR_ID.to_string(),
        population: population.len(),
        short_population: short,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pass {
    A,
    B,
}

impl fmt::Display for Pass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pass::A => "a",
            Pass::B => "b",
        })
    }
}

impl FromStr for Pass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" | "pass_a" => Ok(Pass::A),
            "b" | "pass_b" => Ok(Pass::B),
            other => Err(Error::InvalidArgument(format!("unknown pass {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionStatus {
    Open,
    Reconciling,
    Closed,
}

impl fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SessionStatus::Open => "OPEN",
            SessionStatus::Reconciling => "RECONCILING",
            SessionStatus::Closed => "CLOSED",
        })
    }
}

impl FromStr for SessionStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "OPEN" => Ok(SessionStatus::Open),
            "RECONCILING" => Ok(SessionStatus::Reconciling),
            "CLOSED" => Ok(SessionStatus::Closed),
            other => Err(Error::InvalidArgument(format!("unknown status {other:?}"))),
        }
    }
}

/// Two independent annotation passes over a sampling plan, plus the
/// reconciled consensus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSession {
    pub id: String,
    pub plan: SamplingPlan,
    pass_a: BTreeMap<String, LabelValue>,
    pass_b: BTreeMap<String, LabelValue>,
    /// Explicit resolutions for disagreeing images.
    resolutions: BTreeMap<String, LabelValue>,
    consensus: BTreeMap<String, LabelValue>,
    bindings: BTreeMap<String, Pass>,
    status: SessionStatus,
}

impl AuditSession {
    pub fn new(id: impl Into<String>, plan: SamplingPlan) -> Self {
        AuditSession {
            id: id.into(),
            plan,
            pass_a: BTreeMap::new(),
            pass_b: BTreeMap::new(),
            resolutions: BTreeMap::new(),
            consensus: BTreeMap::new(),
            bindings: BTreeMap::new(),
            status: SessionStatus::Open,
        }
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn pass(&self, pass: Pass) -> &BTreeMap<String, LabelValue> {
        match pass {
            Pass::A => &self.pass_a,
            Pass::B => &self.pass_b,
        }
    }

    pub fn consensus(&self) -> &BTreeMap<String, LabelValue> {
        &self.consensus
    }

    pub fn binding(&self, annotator: &str) -> Option<Pass> {
        self.bindings.get(annotator).copied()
    }

    fn require(&self, status: SessionStatus) -> Result<()> {
        if self.status != status {
            return Err(Error::InvalidSessionState {
                actual: self.status.to_string(),
                required: status.to_string(),
            });
        }
        Ok(())
    }

    pub fn in_sample(&self, image_id: &str) -> bool {
        self.plan.sample_ids.iter().any(|s| s == image_id)
    }

    /// Binds `annotator` to `pass` for the lifetime of the session.
    pub fn bind(&mut self, annotator: &str, pass: Pass) -> Result<()> {
        match self.bindings.get(annotator) {
            Some(bound) if *bound != pass => Err(Error::AnnotatorBound {
                annotator: annotator.to_string(),
                bound: bound.to_string(),
            }),
            Some(_) => Ok(()),
            None => {
                self.bindings.insert(annotator.to_string(), pass);
                Ok(())
            }
        }
    }

    /// Sample ids not yet labeled in `pass`, in sample order.
    pub fn unlabeled(&self, pass: Pass) -> impl Iterator<Item = &str> + '_ {
        let labels = self.pass(pass);
        self.plan
            .sample_ids
            .iter()
            .filter(move |id| !labels.contains_key(*id))
            .map(String::as_str)
    }

    /// Records one label of one pass. Each image is labeled once per pass;
    /// re-sending the same value is accepted.
    pub fn record_label(
        &mut self,
        pass: Pass,
        annotator: &str,
        image_id: &str,
        value: LabelValue,
    ) -> Result<()> {
        self.require(SessionStatus::Open)?;
        if !self.in_sample(image_id) {
            return Err(Error::NotInSample(image_id.to_string()));
        }
        self.bind(annotator, pass)?;
        let labels = match pass {
            Pass::A => &mut self.pass_a,
            Pass::B => &mut self.pass_b,
        };
        match labels.get(image_id) {
            Some(existing) if *existing == value => Ok(()),
            Some(_) => Err(Error::AlreadyLabeled {
                pass: pass.to_string(),
                image: image_id.to_string(),
            }),
            None => {
                labels.insert(image_id.to_string(), value);
                Ok(())
            }
        }
    }

    pub fn passes_complete(&self) -> bool {
        self.unlabeled(Pass::A).next().is_none() && self.unlabeled(Pass::B).next().is_none()
    }

    /// Images where both passes have a label and the labels differ.
    pub fn disagreements(&self) -> Vec<String> {
        self.plan
            .sample_ids
            .iter()
            .filter(|id| match (self.pass_a.get(*id), self.pass_b.get(*id)) {
                (Some(a), Some(b)) => a != b,
                _ => false,
            })
            .cloned()
            .collect()
    }

    /// Moves a session with complete passes into reconciliation and returns
    /// the disagreements that need a consensus value.
    pub fn start_reconciliation(&mut self) -> Result<Vec<String>> {
        if self.status == SessionStatus::Reconciling {
            return Ok(self.unresolved());
        }
        self.require(SessionStatus::Open)?;
        if !self.passes_complete() {
            return Err(Error::PassesIncomplete {
                a: self.unlabeled(Pass::A).count(),
                b: self.unlabeled(Pass::B).count(),
            });
        }
        self.status = SessionStatus::Reconciling;
        Ok(self.disagreements())
    }

    /// Consensus value for a disagreeing image.
    pub fn resolve(&mut self, image_id: &str, value: LabelValue) -> Result<()> {
        self.require(SessionStatus::Reconciling)?;
        if !self.disagreements().iter().any(|d| d == image_id) {
            return Err(Error::InvalidArgument(format!(
                "{image_id} is not a disagreement"
            )));
        }
        self.resolutions.insert(image_id.to_string(), value);
        Ok(())
    }

    pub fn unresolved(&self) -> Vec<String> {
        self.disagreements()
            .into_iter()
            .filter(|id| !self.resolutions.contains_key(id))
            .collect()
    }

    /// Fixes the consensus. Agreeing images take the shared value, the rest
    /// their resolution. An open session whose passes agree everywhere can
    /// be closed directly.
    pub fn close(&mut self) -> Result<()> {
        match self.status {
            SessionStatus::Closed => return Ok(()),
            SessionStatus::Open => {
                self.start_reconciliation()?;
            }
            SessionStatus::Reconciling => {}
        }
        let unresolved = self.unresolved();
        if !unresolved.is_empty() {
            return Err(Error::UnresolvedDisagreements(unresolved));
        }
        self.consensus = self
            .plan
            .sample_ids
            .iter()
            .map(|id| {
                let v = self
                    .resolutions
                    .get(id)
                    .or_else(|| self.pass_a.get(id))
                    .copied()
                    .expect("complete passes");
                (id.clone(), v)
            })
            .collect();
        self.status = SessionStatus::Closed;
        Ok(())
    }

    /// Tab-separated session file: `key<TAB>value` header lines, then
    /// `image_id pass_a pass_b consensus` rows with `.` for missing values.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# labelforge audit session v1\n");
        let p = &self.plan;
        let header = [
            ("id", self.id.clone()),
            ("attribute", p.attribute.clone()),
            ("value", LabelValue::from_bool(p.target_value).to_string()),
            ("seed", p.rng_seed.to_string()),
            ("generator", p.generator.clone()),
            ("min_per_value", p.min_per_value.to_string()),
            ("population", p.population.to_string()),
            ("status", self.status.to_string()),
        ];
        for (k, v) in header {
            out.push_str(&format!("{k}\t{v}\n"));
        }
        for (annotator, pass) in &self.bindings {
            out.push_str(&format!("binding\t{annotator}\t{pass}\n"));
        }
        out.push_str("image_id\tpass_a\tpass_b\tconsensus\n");
        let cell = |v: Option<&LabelValue>| v.map(|v| v.to_string()).unwrap_or_else(|| ".".into());
        for id in &p.sample_ids {
            let consensus = self.consensus.get(id).or_else(|| self.resolutions.get(id));
            out.push_str(&format!(
                "{id}\t{}\t{}\t{}\n",
                cell(self.pass_a.get(id)),
                cell(self.pass_b.get(id)),
                cell(consensus)
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut header: BTreeMap<&str, &str> = BTreeMap::new();
        let mut bindings = BTreeMap::new();
        let mut rows = Vec::new();
        let mut in_rows = false;
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if !in_rows {
                match f.as_slice() {
                    ["image_id", ..] => in_rows = true,
                    ["binding", who, pass] => {
                        bindings.insert(who.to_string(), pass.parse()?);
                    }
                    [k, v] => {
                        header.insert(k, v);
                    }
                    _ => {
                        return Err(Error::Parse {
                            line: line_no,
                            message: "malformed header line".into(),
                        })
                    }
                }
                continue;
            }
            if f.len() != 4 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 4 fields, found {}", f.len()),
                });
            }
            let parse = |s: &str| -> Result<Option<LabelValue>> {
                if s == "." {
                    Ok(None)
                } else {
                    s.parse().map(Some)
                }
            };
            rows.push((f[0].to_string(), parse(f[1])?, parse(f[2])?, parse(f[3])?));
        }
        let get = |k: &str| -> Result<&str> {
            header.get(k).copied().ok_or(Error::Parse {
                line: 0,
                message: format!("missing header {k}"),
            })
        };
        let num = |k: &str| -> Result<u64> {
            get(k)?.parse().map_err(|_| Error::Parse {
                line: 0,
                message: format!("bad number for {k}"),
            })
        };
        let target: LabelValue = get("value")?.parse()?;
        let plan = SamplingPlan {
            attribute: get("attribute")?.to_string(),
            target_value: target.as_bool().ok_or_else(|| {
                Error::InvalidArgument("session target value must be binary".into())
            })?,
            sample_ids: rows.iter().map(|r| r.0.clone()).collect(),
            min_per_value: num("min_per_value")? as usize,
            rng_seed: num("seed")?,
            generator: get("generator")?.to_string(),
            population: num("population")? as usize,
            short_population: false,
        };
        let short = plan.population < plan.min_per_value;
        let status: SessionStatus = get("status")?.parse()?;
        let mut session = AuditSession::new(get("id")?, SamplingPlan {
            short_population: short,
            ..plan
        });
        session.bindings = bindings;
        session.status = status;
        for (id, a, b, c) in rows {
            if let Some(a) = a {
                session.pass_a.insert(id.clone(), a);
            }
            if let Some(b) = b {
                session.pass_b.insert(id.clone(), b);
            }
            if let Some(c) = c {
                if status == SessionStatus::Closed {
                    session.consensus.insert(id.clone(), c);
                }
                if a != b {
                    session.resolutions.insert(id, c);
                }
            }
        }
        Ok(session)
    }
}

/// Audited error of one stratum (attribute, original value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumEstimate {
    pub original_value: bool,
    pub n: u64,
    pub errors: u64,
    /// Consensus info-not-visible; already included in `errors`.
    pub info_not_visible: u64,
    pub rate: f64,
    pub ci: (f64, f64),
}

impl StratumEstimate {
    pub fn from_counts(original_value: bool, errors: u64, n: u64, info_not_visible: u64) -> Result<Self> {
        let ci = wilson_interval(errors, n, 0.95)?;
        Ok(StratumEstimate {
            original_value,
            n,
            errors,
            info_not_visible,
            rate: errors as f64 / n as f64,
            ci,
        })
    }
}

/// Error of the original labels in one closed session's stratum. A
/// consensus of info-not-visible counts as an error of the binary original.
pub fn stratum_error(session: &AuditSession, original: &AnnotationMatrix) -> Result<StratumEstimate> {
    if session.status() != SessionStatus::Closed {
        return Err(Error::SessionNotClosed);
    }
    let col = original.attribute_index(&session.plan.attribute)?;
    let (mut errors, mut inv) = (0u64, 0u64);
    for id in &session.plan.sample_ids {
        let i = original.image_index(id)?;
        let orig = original
            .cell(i, col)
            .ok_or_else(|| Error::ImageUnusable(id.clone()))?;
        let consensus = session.consensus[id];
        if consensus == LabelValue::InfoNotVisible {
            inv += 1;
        }
        if consensus != orig {
            errors += 1;
        }
    }
    StratumEstimate::from_counts(
        session.plan.target_value,
        errors,
        session.plan.sample_ids.len() as u64,
        inv,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRateReport {
    pub attribute: String,
    pub negative: Option<StratumEstimate>,
    pub positive: Option<StratumEstimate>,
}

/// Error rates per attribute from a set of closed sessions (at most one per
/// stratum), in attribute order of first appearance.
pub fn error_rates(sessions: &[&AuditSession], original: &AnnotationMatrix) -> Result<Vec<ErrorRateReport>> {
    let mut reports: Vec<ErrorRateReport> = Vec::new();
    let mut seen = BTreeSet::new();
    for session in sessions {
        let key = (session.plan.attribute.clone(), session.plan.target_value);
        if !seen.insert(key) {
            return Err(Error::InvalidArgument(format!(
                "two sessions for stratum {}={}",
                session.plan.attribute,
                LabelValue::from_bool(session.plan.target_value)
            )));
        }
        let estimate = stratum_error(session, original)?;
        let pos = reports
            .iter()
            .position(|r| r.attribute == session.plan.attribute)
            .unwrap_or_else(|| {
                reports.push(ErrorRateReport {
                    attribute: session.plan.attribute.clone(),
                    negative: None,
                    positive: None,
                });
                reports.len() - 1
            });
        if estimate.original_value {
            reports[pos].positive = Some(estimate);
        } else {
            reports[pos].negative = Some(estimate);
        }
    }
    Ok(reports)
}

impl Row for ErrorRateReport {
    fn header() -> Vec<&'static str> {
        vec![
            "attribute", "N_n", "N_p", "Err_n", "Err_p", "ci_n", "ci_p", "inv_n", "inv_p",
        ]
    }

    fn cells(&self) -> Vec<String> {
        let n = |s: &Option<StratumEstimate>| s.as_ref().map(|s| s.n.to_string()).unwrap_or("-".into());
        let pct = |s: &Option<StratumEstimate>| {
            s.as_ref()
                .map(|s| format!("{:.2}%", 100.0 * s.rate))
                .unwrap_or("-".into())
        };
        let ci = |s: &Option<StratumEstimate>| {
            s.as_ref()
                .map(|s| format!("[{:.2}%, {:.2}%]", 100.0 * s.ci.0, 100.0 * s.ci.1))
                .unwrap_or("-".into())
        };
        let inv = |s: &Option<StratumEstimate>| {
            s.as_ref()
                .map(|s| s.info_not_visible.to_string())
                .unwrap_or("-".into())
        };
        vec![
            self.attribute.clone(),
            n(&self.negative),
            n(&self.positive),
            pct(&self.negative),
            pct(&self.positive),
            ci(&self.negative),
            ci(&self.positive),
            inv(&self.negative),
            inv(&self.positive),
        ]
    }
}
