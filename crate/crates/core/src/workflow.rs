//! Ensemble-agreement cleaning workflow.
//!
//! Starting from a small manually cleaned seed, each round trains `k` linear
//! probes on random subsets of the cleaned pool and counts, for every
//! uncleaned image, how many probes predict TRUE. Images with equal vote
//! counts form a bin. High-agreement bins are audited and accepted wholesale
//! when the audited error is within target, small bins are labeled by hand,
//! and the rest goes back to the uncleaned pool for the next round with a
//! retrained ensemble. The workflow converges when nothing is left to clean.
//!
//! State transitions:
//!
//! ```text
//! init -> RUNNING --run_round--> bins UNDECIDED
//!   bin: UNDECIDED --audit_bin--> ACCEPTED | NEXT_ROUND
//!        UNDECIDED | NEXT_ROUND --mark_manual--> MANUAL_LABEL
//!        UNDECIDED --defer_bin--> NEXT_ROUND
//! check_convergence: RUNNING -> CONVERGED | EXHAUSTED
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationMatrix, LabelValue, ProvenanceLog};
use crate::audit::{wilson_interval, AuditSession, SamplingPlan, SessionStatus};
use crate::duplicates::EmbeddingStore;
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::probe::{train_rows, ProbeModel, TrainConfig};
use crate::report::Row;
use crate::rng::{self, derive_seed, GENERATOR_ID};

pub const STATE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkflowConfig {
    pub k: usize,
    pub subset_fraction: f64,
    pub target_error: f64,
    pub audit_sample_size: usize,
    pub small_bin_threshold: usize,
    pub max_rounds: usize,
    pub seed: u64,
    /// Minimum number of agreeing probes for a bin to be audit-eligible.
    /// `None` means unanimous (`k`).
    pub min_agreement: Option<usize>,
    pub train: TrainConfig,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        WorkflowConfig {
            k: 3,
            subset_fraction: 0.8,
            target_error: 0.05,
            audit_sample_size: 100,
            small_bin_threshold: 2_000,
            max_rounds: 10,
            seed: 0,
            min_agreement: None,
            train: TrainConfig::default(),
        }
    }
}

impl WorkflowConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.k < 2 {
            return fail("k must be at least 2");
        }
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return fail("subset_fraction must be in (0, 1]");
        }
        if !(self.target_error > 0.0 && self.target_error < 1.0) {
            return fail("target_error must be in (0, 1)");
        }
        if self.max_rounds == 0 || self.audit_sample_size == 0 {
            return fail("max_rounds and audit_sample_size must be positive");
        }
        if let Some(m) = self.min_agreement {
            if m * 2 <= self.k || m > self.k {
                return fail("min_agreement must be a strict majority and at most k");
            }
        }
        Ok(())
    }

    fn min_agreement(&self) -> usize {
        self.min_agreement.unwrap_or(self.k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Undecided,
    Accepted,
    ManualLabel,
    NextRound,
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Decision::Undecided => "UNDECIDED",
            Decision::Accepted => "ACCEPTED",
            Decision::ManualLabel => "MANUAL_LABEL",
            Decision::NextRound => "NEXT_ROUND",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub sample: Vec<String>,
    pub mismatches: u64,
    pub error: f64,
    pub ci: (f64, f64),
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementBin {
    /// Number of probes predicting TRUE.
    pub votes: usize,
    pub members: Vec<String>,
    pub decision: Decision,
    pub audit: Option<AuditRecord>,
}

impl AgreementBin {
    /// Nothing left to decide: either decided, or empty.
    pub fn is_settled(&self) -> bool {
        self.decision != Decision::Undecided || self.members.is_empty()
    }

    pub fn audited_error(&self) -> Option<f64> {
        self.audit.as_ref().map(|a| a.error)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelSource {
    Seed,
    Accepted { round: usize, votes: usize },
    Manual { round: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanedLabel {
    pub value: LabelValue,
    pub source: LabelSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WorkflowStatus {
    Running,
    Converged,
    Exhausted,
}

impl std::fmt::Display for WorkflowStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WorkflowStatus::Running => "RUNNING",
            WorkflowStatus::Converged => "CONVERGED",
            WorkflowStatus::Exhausted => "EXHAUSTED",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub round: usize,
    pub votes: usize,
    pub size: usize,
    pub decision: Decision,
    pub audited_error: Option<f64>,
}

impl Row for BinSummary {
    fn header() -> Vec<&'static str> {
        vec!["round", "votes", "size", "decision", "audited_error"]
    }

    fn cells(&self) -> Vec<String> {
        vec![
            self.round.to_string(),
            self.votes.to_string(),
            self.size.to_string(),
            self.decision.to_string(),
            self.audited_error
                .map(|e| format!("{:.4}", e))
                .unwrap_or_else(|| "-".into()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub cleaned_before: usize,
    pub uncleaned_before: usize,
    pub bins: Vec<BinSummary>,
}

/// Size-weighted error contribution of one decided group of labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorContribution {
    pub size: usize,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowState {
    pub version: u32,
    pub id: String,
    pub attribute: String,
    pub config: WorkflowConfig,
    pub round: usize,
    cleaned: BTreeMap<String, CleanedLabel>,
    uncleaned: BTreeSet<String>,
    bins: Vec<AgreementBin>,
    models: Vec<ProbeModel>,
    history: Vec<RoundSummary>,
    contributions: Vec<ErrorContribution>,
    status: WorkflowStatus,
}

fn majority_label(votes: usize, k: usize) -> bool {
    // ties (even k) go to TRUE, matching the probe's >= 0.5 rule
    2 * votes >= k
}

impl WorkflowState {
    /// Starts a workflow from a cleaned seed. Seed labels must be binary.
    pub fn init(
        id: impl Into<String>,
        attribute: impl Into<String>,
        seed_clean: &BTreeMap<String, LabelValue>,
        uncleaned: BTreeSet<String>,
        config: WorkflowConfig,
    ) -> Result<Self> {
        config.validate()?;
        if seed_clean.is_empty() {
            return Err(Error::EmptySeed);
        }
        if let Some((id, _)) = seed_clean.iter().find(|(_, v)| !v.is_binary()) {
            return Err(Error::NonBinarySeed(id.clone()));
        }
        let overlap: Vec<String> = uncleaned
            .iter()
            .filter(|id| seed_clean.contains_key(*id))
            .cloned()
            .collect();
        if !overlap.is_empty() {
            return Err(Error::PoolOverlap(overlap));
        }
        let status = if uncleaned.is_empty() {
            WorkflowStatus::Converged
        } else {
            WorkflowStatus::Running
        };
        Ok(WorkflowState {
            version: STATE_VERSION,
            id: id.into(),
            attribute: attribute.into(),
            round: 0,
            contributions: vec![ErrorContribution {
                size: seed_clean.len(),
                error: 0.0,
            }],
            cleaned: seed_clean
                .iter()
                .map(|(id, v)| {
                    (
                        id.clone(),
                        CleanedLabel {
                            value: *v,
                            source: LabelSource::Seed,
                        },
                    )
                })
                .collect(),
            uncleaned,
            bins: Vec::new(),
            models: Vec::new(),
            history: Vec::new(),
            status,
            config,
        })
    }

    pub fn status(&self) -> WorkflowStatus {
        self.status
    }

    pub fn cleaned(&self) -> &BTreeMap<String, CleanedLabel> {
        &self.cleaned
    }

    pub fn uncleaned(&self) -> &BTreeSet<String> {
        &self.uncleaned
    }

    pub fn bins(&self) -> &[AgreementBin] {
        &self.bins
    }

    pub fn models(&self) -> &[ProbeModel] {
        &self.models
    }

    pub fn history(&self) -> &[RoundSummary] {
        &self.history
    }

    pub fn bin(&self, votes: usize) -> Result<&AgreementBin> {
        self.bins.get(votes).ok_or(Error::UnknownBin(votes))
    }

    fn bin_mut(&mut self, votes: usize) -> Result<&mut AgreementBin> {
        self.bins.get_mut(votes).ok_or(Error::UnknownBin(votes))
    }

    fn require_running(&self) -> Result<()> {
        if self.status != WorkflowStatus::Running {
            return Err(Error::NotRunning);
        }
        Ok(())
    }

    /// Label assigned to a bin when accepted.
    pub fn majority_label(&self, votes: usize) -> bool {
        majority_label(votes, self.config.k)
    }

    pub fn audit_eligible(&self, votes: usize) -> bool {
        if votes > self.config.k {
            return false;
        }
        let agreeing = votes.max(self.config.k - votes);
        agreeing >= self.config.min_agreement()
    }

    pub fn run_round(&mut self, store: &EmbeddingStore) -> Result<&[AgreementBin]> {
        self.run_round_with(store, Execution::default())
    }

    /// Retrains the ensemble on the cleaned pool and re-partitions the whole
    /// uncleaned pool into `k + 1` bins by TRUE-vote count. Convergence is
    /// checked first, so a finished workflow fails with `NOT_RUNNING`.
    pub fn run_round_with(&mut self, store: &EmbeddingStore, exec: Execution) -> Result<&[AgreementBin]> {
        self.check_convergence();
        self.require_running()?;
        if self.round >= self.config.max_rounds {
            return Err(Error::InvalidArgument(format!(
                "max_rounds ({}) reached",
                self.config.max_rounds
            )));
        }
        let round = self.round + 1;
        let cfg = &self.config;

        let mut rows = Vec::with_capacity(self.cleaned.len());
        let mut labels = Vec::with_capacity(self.cleaned.len());
        for (id, label) in &self.cleaned {
            if let Some(y) = label.value.as_bool() {
                rows.push(store.row(id).ok_or_else(|| Error::MissingEmbedding(id.clone()))?);
                labels.push(y);
            }
        }
        let unclean: Vec<&String> = self.uncleaned.iter().collect();
        let unclean_rows: Vec<usize> = unclean
            .iter()
            .map(|id| store.row(id).ok_or_else(|| Error::MissingEmbedding((*id).clone())))
            .collect::<Result<_>>()?;

        let subset_size = ((cfg.subset_fraction * rows.len() as f64).ceil() as usize).clamp(1, rows.len().max(1));
        let models = exec
            .map_range(cfg.k, |member| {
                let member_seed = derive_seed(cfg.seed, &[round as u64, member as u64]);
                let picks = rng::sample_indices(&mut rng::seeded(member_seed), rows.len(), subset_size);
                let sub_rows: Vec<usize> = picks.iter().map(|&i| rows[i]).collect();
                let sub_labels: Vec<bool> = picks.iter().map(|&i| labels[i]).collect();
                let train = TrainConfig {
                    seed: derive_seed(member_seed, &[1]),
                    ..cfg.train
                };
                train_rows(store, &sub_rows, &sub_labels, &train)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;

        let votes: Vec<usize> = exec.flat_map_chunks(&unclean_rows, 1024, |chunk| {
            chunk
                .iter()
                .map(|&row| models.iter().filter(|m| m.predict_row(store, row)).count())
                .collect()
        });

        let mut bins: Vec<AgreementBin> = (0..=cfg.k)
            .map(|v| AgreementBin {
                votes: v,
                members: Vec::new(),
                decision: Decision::Undecided,
                audit: None,
            })
            .collect();
        for (id, v) in unclean.iter().zip(&votes) {
            bins[*v].members.push((*id).clone());
        }

        self.history.push(RoundSummary {
            round,
            cleaned_before: self.cleaned.len(),
            uncleaned_before: self.uncleaned.len(),
            bins: bins
                .iter()
                .map(|b| BinSummary {
                    round,
                    votes: b.votes,
                    size: b.members.len(),
                    decision: b.decision,
                    audited_error: None,
                })
                .collect(),
        });
        self.models = models;
        self.bins = bins;
        self.round = round;
        Ok(&self.bins)
    }

    /// Deterministic audit sample of a bin: `audit_sample_size` members, or
    /// the whole bin when smaller.
    pub fn bin_audit_sample(&self, votes: usize) -> Result<Vec<String>> {
        let bin = self.bin(votes)?;
        let seed = derive_seed(self.config.seed, &[self.round as u64, 1_000 + votes as u64]);
        let mut picks = rng::sample_indices(
            &mut rng::seeded(seed),
            bin.members.len(),
            self.config.audit_sample_size,
        );
        picks.sort_unstable();
        Ok(picks.into_iter().map(|i| bin.members[i].clone()).collect())
    }

    /// Sampling plan for an audit session over a bin. The plan's target
    /// value is the label the bin would receive if accepted.
    pub fn bin_audit_plan(&self, votes: usize) -> Result<SamplingPlan> {
        let bin = self.bin(votes)?;
        Ok(SamplingPlan {
            attribute: self.attribute.clone(),
            target_value: self.majority_label(votes),
            sample_ids: self.bin_audit_sample(votes)?,
            min_per_value: self.config.audit_sample_size,
            rng_seed: derive_seed(self.config.seed, &[self.round as u64, 1_000 + votes as u64]),
            generator: GENERATOR_ID.to_string(),
            population: bin.members.len(),
            short_population: bin.members.len() < self.config.audit_sample_size,
        })
    }

    /// Compares audited truth with the bin's majority label. Accepts the bin
    /// (moving every member into the cleaned pool with the majority label)
    /// when the mismatch rate is within target, otherwise marks it for the
    /// next round.
    pub fn audit_bin(
        &mut self,
        votes: usize,
        consensus: &BTreeMap<String, LabelValue>,
    ) -> Result<&AgreementBin> {
        self.audit_bin_inner(votes, consensus, None)
    }

    /// [`audit_bin`](Self::audit_bin) with the consensus of a closed session.
    pub fn audit_bin_with_session(&mut self, votes: usize, session: &AuditSession) -> Result<&AgreementBin> {
        if session.status() != SessionStatus::Closed {
            return Err(Error::SessionNotClosed);
        }
        self.audit_bin_inner(votes, session.consensus(), Some(session.id.clone()))
    }

    fn audit_bin_inner(
        &mut self,
        votes: usize,
        consensus: &BTreeMap<String, LabelValue>,
        session_id: Option<String>,
    ) -> Result<&AgreementBin> {
        self.require_running()?;
        let eligible = self.audit_eligible(votes);
        let target = self.config.target_error;
        let need = self.config.audit_sample_size;
        let label = LabelValue::from_bool(self.majority_label(votes));
        let round = self.round;

        let bin = self.bin(votes)?;
        if bin.decision != Decision::Undecided {
            return Err(Error::BinAlreadyDecided(votes));
        }
        if !eligible {
            return Err(Error::NotEligibleForAudit(votes));
        }
        let members: BTreeSet<&String> = bin.members.iter().collect();
        if let Some(stray) = consensus.keys().find(|id| !members.contains(id)) {
            return Err(Error::SampleNotFromBin(stray.clone()));
        }
        let required = need.min(bin.members.len());
        if consensus.len() < required || consensus.is_empty() {
            return Err(Error::InsufficientSample {
                got: consensus.len(),
                need: required.max(1),
            });
        }
        let n = consensus.len() as u64;
        let mismatches = consensus.values().filter(|v| **v != label).count() as u64;
        let error = mismatches as f64 / n as f64;
        let ci = wilson_interval(mismatches, n, 0.95)?;
        let accepted = error <= target;

        let bin = self.bin_mut(votes)?;
        bin.audit = Some(AuditRecord {
            sample: consensus.keys().cloned().collect(),
            mismatches,
            error,
            ci,
            session_id,
        });
        bin.decision = if accepted {
            Decision::Accepted
        } else {
            Decision::NextRound
        };
        if accepted {
            let members = bin.members.clone();
            for id in &members {
                self.uncleaned.remove(id);
                self.cleaned.insert(
                    id.clone(),
                    CleanedLabel {
                        value: label,
                        source: LabelSource::Accepted { round, votes },
                    },
                );
            }
            self.contributions.push(ErrorContribution {
                size: members.len(),
                error,
            });
        }
        self.sync_summary(votes);
        self.bin(votes)
    }

    /// Moves a small bin into the cleaned pool with hand-assigned labels.
    /// Allowed for undecided bins and for bins that failed their audit.
    pub fn mark_manual(
        &mut self,
        votes: usize,
        labels: &BTreeMap<String, LabelValue>,
    ) -> Result<&AgreementBin> {
        self.require_running()?;
        let threshold = self.config.small_bin_threshold;
        let round = self.round;
        let bin = self.bin(votes)?;
        if !matches!(bin.decision, Decision::Undecided | Decision::NextRound) {
            return Err(Error::BinAlreadyDecided(votes));
        }
        if bin.members.len() > threshold {
            return Err(Error::BinTooLarge {
                size: bin.members.len(),
                threshold,
            });
        }
        let members: BTreeSet<&String> = bin.members.iter().collect();
        if let Some(stray) = labels.keys().find(|id| !members.contains(id)) {
            return Err(Error::SampleNotFromBin(stray.clone()));
        }
        let missing: Vec<String> = bin
            .members
            .iter()
            .filter(|id| !labels.contains_key(*id))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::IncompleteLabels(missing));
        }
        let members = bin.members.clone();
        for id in &members {
            self.uncleaned.remove(id);
            self.cleaned.insert(
                id.clone(),
                CleanedLabel {
                    value: labels[id],
                    source: LabelSource::Manual { round },
                },
            );
        }
        self.contributions.push(ErrorContribution {
            size: members.len(),
            error: 0.0,
        });
        self.bin_mut(votes)?.decision = Decision::ManualLabel;
        self.sync_summary(votes);
        self.bin(votes)
    }

    /// Sends an undecided bin to the next round without an audit.
    pub fn defer_bin(&mut self, votes: usize) -> Result<&AgreementBin> {
        self.require_running()?;
        let bin = self.bin_mut(votes)?;
        if bin.decision != Decision::Undecided {
            return Err(Error::BinAlreadyDecided(votes));
        }
        bin.decision = Decision::NextRound;
        self.sync_summary(votes);
        self.bin(votes)
    }

    fn sync_summary(&mut self, votes: usize) {
        let bin = &self.bins[votes];
        if let Some(summary) = self
            .history
            .last_mut()
            .and_then(|h| h.bins.get_mut(votes))
        {
            summary.decision = bin.decision;
            summary.audited_error = bin.audited_error();
        }
    }

    /// Size-weighted estimated error of the cleaned pool: audited error for
    /// accepted bins, zero for seed and manual labels.
    pub fn estimated_error(&self) -> f64 {
        let total: usize = self.contributions.iter().map(|c| c.size).sum();
        if total == 0 {
            return 0.0;
        }
        self.contributions
            .iter()
            .map(|c| c.size as f64 * c.error)
            .sum::<f64>()
            / total as f64
    }

    pub fn check_convergence(&mut self) -> WorkflowStatus {
        if self.status != WorkflowStatus::Running {
            return self.status;
        }
        let settled = self.bins.iter().all(AgreementBin::is_settled);
        if self.uncleaned.is_empty() {
            self.status = if self.estimated_error() <= self.config.target_error {
                WorkflowStatus::Converged
            } else {
                WorkflowStatus::Exhausted
            };
        } else if self.round >= self.config.max_rounds && settled {
            self.status = WorkflowStatus::Exhausted;
        }
        self.status
    }

    /// Cleaned labels, seed included.
    pub fn labels(&self) -> BTreeMap<String, LabelValue> {
        self.cleaned.iter().map(|(id, l)| (id.clone(), l.value)).collect()
    }

    /// Writes changed cleaned labels into `matrix`, logging each change.
    pub fn apply_to_matrix(
        &self,
        matrix: &mut AnnotationMatrix,
        log: &mut ProvenanceLog,
        source: &str,
    ) -> Result<usize> {
        let mut changed = 0;
        for (id, label) in &self.cleaned {
            if matrix.get(id, &self.attribute)? != label.value {
                matrix.apply_label(log, id, &self.attribute, label.value, source)?;
                changed += 1;
            }
        }
        Ok(changed)
    }

    pub fn summaries(&self) -> Vec<BinSummary> {
        self.history.iter().flat_map(|h| h.bins.iter().cloned()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("workflow state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == STATE_VERSION as u64 => {}
            other => return Err(Error::UnsupportedVersion(format!("{other:?}"))),
        }
        serde_json::from_value(value).map_err(|e| Error::Parse {
            line: 0,
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Source of ground-truth answers for audits and manual labeling.
pub trait Annotator {
    fn label(&mut self, image_id: &str) -> LabelValue;
}

impl<F: FnMut(&str) -> LabelValue> Annotator for F {
    fn label(&mut self, image_id: &str) -> LabelValue {
        self(image_id)
    }
}

/// Handles every bin of the current round with the standard policy:
/// audit eligible bins; label small bins (including ones that failed their
/// audit) by hand; defer the rest.
pub fn settle_round<A: Annotator>(state: &mut WorkflowState, annotator: &mut A) -> Result<()> {
    for votes in 0..state.bins().len() {
        let bin = state.bin(votes)?;
        if bin.is_settled() {
            continue;
        }
        if state.audit_eligible(votes) {
            let sample = state.bin_audit_sample(votes)?;
            let answers: BTreeMap<String, LabelValue> = sample
                .into_iter()
                .map(|id| {
                    let v = annotator.label(&id);
                    (id, v)
                })
                .collect();
            state.audit_bin(votes, &answers)?;
        }
        let bin = state.bin(votes)?;
        let open = matches!(bin.decision, Decision::Undecided | Decision::NextRound);
        if open && bin.members.len() <= state.config.small_bin_threshold {
            let labels: BTreeMap<String, LabelValue> = bin
                .members
                .clone()
                .into_iter()
                .map(|id| {
                    let v = annotator.label(&id);
                    (id, v)
                })
                .collect();
            state.mark_manual(votes, &labels)?;
        } else if state.bin(votes)?.decision == Decision::Undecided {
            state.defer_bin(votes)?;
        }
    }
    Ok(())
}

/// Runs rounds until the workflow leaves RUNNING.
pub fn run_to_completion<A: Annotator>(
    state: &mut WorkflowState,
    store: &EmbeddingStore,
    annotator: &mut A,
    exec: Execution,
) -> Result<WorkflowStatus> {
    while state.check_convergence() == WorkflowStatus::Running {
        state.run_round_with(store, exec)?;
        settle_round(state, annotator)?;
    }
    Ok(state.status())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_1d(n: usize) -> EmbeddingStore {
        // x in [-1, 1], positive iff x > 0
        let mut s = EmbeddingStore::new(2);
        for i in 0..n {
            let x = -1.0 + 2.0 * (i as f64 + 0.5) / n as f64;
            s.insert(&format!("i{i:05}"), "p", &[x, 1.0]).unwrap();
        }
        s
    }

    fn truth(id: &str, n: usize) -> bool {
        let i: usize = id[1..].parse().unwrap();
        (i as f64 + 0.5) / n as f64 > 0.5
    }

    fn setup(n: usize, seed_every: usize) -> (EmbeddingStore, WorkflowState) {
        let store = store_1d(n);
        let mut seed = BTreeMap::new();
        let mut rest = BTreeSet::new();
        for id in store.ids() {
            if id[1..].parse::<usize>().unwrap() % seed_every == 0 {
                seed.insert(id.clone(), LabelValue::from_bool(truth(id, n)));
            } else {
                rest.insert(id.clone());
            }
        }
        let cfg = WorkflowConfig {
            train: TrainConfig {
                learning_rate: 0.5,
                ..Default::default()
            },
            ..Default::default()
        };
        let state = WorkflowState::init("w", "MSO", &seed, rest, cfg).unwrap();
        (store, state)
    }

    #[test]
    fn init_errors() {
        let mut seed = BTreeMap::new();
        seed.insert("x".to_string(), LabelValue::True);
        let overlap: BTreeSet<String> = ["x".to_string()].into();
        let e = WorkflowState::init("w", "A", &seed, overlap, WorkflowConfig::default()).unwrap_err();
        assert_eq!(e.code(), "POOL_OVERLAP");
        assert_eq!(e.ids(), ["x".to_string()]);
        let e = WorkflowState::init("w", "A", &BTreeMap::new(), BTreeSet::new(), WorkflowConfig::default())
            .unwrap_err();
        assert_eq!(e.code(), "EMPTY_SEED");
        let mut inv = BTreeMap::new();
        inv.insert("y".to_string(), LabelValue::InfoNotVisible);
        let e = WorkflowState::init("w", "A", &inv, BTreeSet::new(), WorkflowConfig::default()).unwrap_err();
        assert_eq!(e.code(), "NON_BINARY_SEED");
        let bad = WorkflowConfig { k: 1, ..Default::default() };
        assert!(WorkflowState::init("w", "A", &seed, BTreeSet::new(), bad).is_err());
    }

    #[test]
    fn empty_uncleaned_converges_immediately() {
        let mut seed = BTreeMap::new();
        seed.insert("x".to_string(), LabelValue::True);
        let mut s = WorkflowState::init("w", "A", &seed, BTreeSet::new(), WorkflowConfig::default()).unwrap();
        assert_eq!(s.status(), WorkflowStatus::Converged);
        assert_eq!(s.check_convergence(), WorkflowStatus::Converged);
        assert_eq!(s.round, 0);
    }

    #[test]
    fn round_makes_k_plus_one_bins() {
        let (store, mut s) = setup(2000, 5);
        let before = s.uncleaned().len();
        let bins = s.run_round(&store).unwrap();
        assert_eq!(bins.len(), 4);
        assert_eq!(bins.iter().map(|b| b.members.len()).sum::<usize>(), before);
        assert!(bins.iter().all(|b| b.decision == Decision::Undecided));
        assert_eq!(s.round, 1);
        assert_eq!(s.models().len(), 3);
    }

    #[test]
    fn constant_probes_put_everything_in_top_bin() {
        let (store, _) = setup(100, 5);
        let seed: BTreeMap<String, LabelValue> = store
            .ids()
            .iter()
            .take(20)
            .map(|id| (id.clone(), LabelValue::True))
            .collect();
        let rest: BTreeSet<String> = store.ids().iter().skip(20).cloned().collect();
        let mut s = WorkflowState::init("w", "A", &seed, rest, WorkflowConfig::default()).unwrap();
        let bins = s.run_round(&store).unwrap();
        assert_eq!(bins[3].members.len(), 80);
    }

    #[test]
    fn rounds_are_deterministic() {
        let (store, mut a) = setup(1000, 4);
        let mut b = a.clone();
        a.run_round_with(&store, Execution::Parallel).unwrap();
        b.run_round_with(&store, Execution::Sequential).unwrap();
        assert_eq!(a.bins(), b.bins());
        assert_eq!(a.models(), b.models());
    }

    #[test]
    fn audit_accepts_within_target() {
        let (store, mut s) = setup(2000, 5);
        s.run_round(&store).unwrap();
        let sample = s.bin_audit_sample(3).unwrap();
        assert_eq!(sample.len(), 100);
        // 2 of 100 wrong -> 2% <= 5%
        let answers: BTreeMap<_, _> = sample
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), LabelValue::from_bool(i >= 2)))
            .collect();
        let size = s.bin(3).unwrap().members.len();
        let cleaned = s.cleaned().len();
        let bin = s.audit_bin(3, &answers).unwrap();
        assert_eq!(bin.decision, Decision::Accepted);
        assert_eq!(bin.audited_error(), Some(0.02));
        assert_eq!(s.cleaned().len(), cleaned + size);
        assert!(s.bin(3).unwrap().members.iter().all(|id| s.cleaned()[id].value == LabelValue::True));
        let e = s.audit_bin(3, &answers).unwrap_err();
        assert_eq!(e.code(), "BIN_ALREADY_DECIDED");
    }

    #[test]
    fn audit_rejects_above_target() {
        let (store, mut s) = setup(2000, 5);
        s.run_round(&store).unwrap();
        let sample = s.bin_audit_sample(0).unwrap();
        // 10 of 100 wrong -> 10% > 5%
        let answers: BTreeMap<_, _> = sample
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), LabelValue::from_bool(i < 10)))
            .collect();
        let uncleaned = s.uncleaned().len();
        assert_eq!(s.audit_bin(0, &answers).unwrap().decision, Decision::NextRound);
        assert_eq!(s.uncleaned().len(), uncleaned);
    }

    #[test]
    fn audit_sample_must_come_from_bin() {
        let (store, mut s) = setup(2000, 5);
        s.run_round(&store).unwrap();
        let mut answers: BTreeMap<_, _> = s
            .bin_audit_sample(3)
            .unwrap()
            .into_iter()
            .map(|id| (id, LabelValue::True))
            .collect();
        let outsider = s.bin(0).unwrap().members[0].clone();
        answers.insert(outsider, LabelValue::True);
        assert_eq!(s.audit_bin(3, &answers).unwrap_err().code(), "SAMPLE_NOT_FROM_BIN");
        let few: BTreeMap<_, _> = s.bin(3).unwrap().members[..5]
            .iter()
            .map(|id| (id.clone(), LabelValue::True))
            .collect();
        assert_eq!(s.audit_bin(3, &few).unwrap_err().code(), "INSUFFICIENT_SAMPLE");
    }

    fn state_with_bin(members: usize, threshold: usize) -> WorkflowState {
        let mut seed = BTreeMap::new();
        seed.insert("seed".to_string(), LabelValue::True);
        let rest: BTreeSet<String> = (0..members).map(|i| format!("m{i:05}")).collect();
        let cfg = WorkflowConfig {
            small_bin_threshold: threshold,
            ..Default::default()
        };
        let mut s = WorkflowState::init("w", "A", &seed, rest.clone(), cfg).unwrap();
        s.round = 1;
        s.bins = (0..=3)
            .map(|v| AgreementBin {
                votes: v,
                members: if v == 1 { rest.iter().cloned().collect() } else { vec![] },
                decision: Decision::Undecided,
                audit: None,
            })
            .collect();
        s
    }

    #[test]
    fn whole_small_bin_is_audited() {
        let mut s = state_with_bin(30, 2000);
        s.bins.swap(1, 3);
        s.bins[3].votes = 3;
        s.bins[1].votes = 1;
        assert_eq!(s.bin_audit_sample(3).unwrap().len(), 30);
    }

    #[test]
    fn manual_labeling() {
        let mut s = state_with_bin(40, 2000);
        let labels: BTreeMap<_, _> = s.bin(1).unwrap().members.iter().map(|id| (id.clone(), LabelValue::False)).collect();
        let mut partial = labels.clone();
        let dropped = partial.keys().next().unwrap().clone();
        partial.remove(&dropped);
        match s.mark_manual(1, &partial).unwrap_err() {
            Error::IncompleteLabels(ids) => assert_eq!(ids, vec![dropped]),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.mark_manual(1, &labels).unwrap().decision, Decision::ManualLabel);
        assert!(s.uncleaned().is_empty());
        assert_eq!(s.check_convergence(), WorkflowStatus::Converged);
    }

    #[test]
    fn large_bin_cannot_be_manual() {
        let mut s = state_with_bin(50, 2000);
        s.config.small_bin_threshold = 49;
        let labels: BTreeMap<_, _> = s.bin(1).unwrap().members.iter().map(|id| (id.clone(), LabelValue::False)).collect();
        assert_eq!(s.mark_manual(1, &labels).unwrap_err().code(), "BIN_TOO_LARGE");
    }

    #[test]
    fn mixed_bins_are_not_audit_eligible() {
        let mut s = state_with_bin(10, 2000);
        let answers: BTreeMap<_, _> = s.bin(1).unwrap().members.iter().map(|id| (id.clone(), LabelValue::False)).collect();
        assert_eq!(s.audit_bin(1, &answers).unwrap_err().code(), "NOT_ELIGIBLE_FOR_AUDIT");
        s.config.min_agreement = Some(2);
        assert!(s.audit_eligible(1));
        assert!(!s.audit_eligible(4));
    }

    #[test]
    fn weighted_error_converges() {
        let mut s = state_with_bin(0, 2000);
        s.contributions = vec![
            ErrorContribution { size: 100, error: 0.02 },
            ErrorContribution { size: 100, error: 0.01 },
        ];
        assert!((s.estimated_error() - 0.015).abs() < 1e-12);
        assert_eq!(s.check_convergence(), WorkflowStatus::Converged);
    }

    #[test]
    fn exhausted_at_max_rounds() {
        let mut s = state_with_bin(10, 2000);
        s.config.max_rounds = 1;
        s.defer_bin(1).unwrap();
        assert_eq!(s.check_convergence(), WorkflowStatus::Exhausted);
        assert_eq!(s.uncleaned().len(), 10);
    }

    #[test]
    fn state_file_round_trip() {
        let (store, mut s) = setup(500, 4);
        s.run_round(&store).unwrap();
        let back = WorkflowState::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        let bad = s.to_json().replace("\"version\": 1", "\"version\": 99");
        assert_eq!(WorkflowState::from_json(&bad).unwrap_err().code(), "UNSUPPORTED_VERSION");
    }

    #[test]
    fn simulated_run_converges() {
        let n = 3000;
        let (store, mut s) = setup(n, 10);
        let mut oracle = |id: &str| LabelValue::from_bool(truth(id, n));
        let status = run_to_completion(&mut s, &store, &mut oracle, Execution::default()).unwrap();
        assert_eq!(status, WorkflowStatus::Converged);
        assert_eq!(s.cleaned().len(), n);
        let wrong = s
            .cleaned()
            .iter()
            .filter(|(id, l)| l.value.as_bool() != Some(truth(id, n)))
            .count();
        assert!((wrong as f64) / (n as f64) < 0.05);
    }
}
