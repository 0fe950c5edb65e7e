//! On-disk projects: one directory per project under a data root.
//!
//! ```text
//! <root>/<project>/
//!   project.json          metadata, session origins, guideline text
//!   original.txt          ingested labels (extended format) + sidecar
//!   provenance.log        every label change since ingest
//!   embeddings.txt        optional
//!   pairs.tsv             optional candidate-pair queue
//!   passes/<name>.txt     re-annotation passes for consistency reports
//!   sessions/<id>.tsv     audit sessions
//!   workflows/<id>.json   workflow states
//! ```
//!
//! Current labels are never stored separately: they are the original
//! labels with the provenance log replayed on top.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotation::{
    export_cleaned, ingest_attribute_file, AnnotationMatrix, AttributeFormat, LabelValue, ProvenanceLog,
};
use crate::audit::{error_rates, sampling_plan, AuditSession, ErrorRateReport, Pass, SessionStatus};
use crate::consistency::{disagreement_counts, rank_by_inconsistency, DisagreementReport, DuplicateConflictStats};
use crate::duplicates::{duplicate_inconsistency, find_candidate_pairs_with, CandidatePair, EmbeddingStore, PairQueue, Verdict};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::workflow::{AgreementBin, WorkflowConfig, WorkflowState};

pub const DATA_ROOT_ENV: &str = "LABELFORGE_DATA_ROOT";
const META_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SessionOrigin {
    /// Error-rate audit of one (attribute, original value) stratum.
    Stratum,
    /// Audit of one agreement bin of a workflow round.
    Bin { round: usize, votes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub origin: SessionOrigin,
    pub workflow: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectMeta {
    pub version: u32,
    pub id: String,
    pub created: chrono::DateTime<chrono::Utc>,
    /// Guideline text per attribute, shown to annotators verbatim.
    #[serde(default)]
    pub guidelines: BTreeMap<String, String>,
    #[serde(default)]
    pub sessions: BTreeMap<String, SessionInfo>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectSummary {
    pub id: String,
    pub images: usize,
    pub unusable: usize,
    pub attributes: usize,
    pub edits: usize,
    pub embeddings: bool,
    pub pairs: usize,
    pub sessions: usize,
    pub workflows: usize,
}

/// Resolves the data root: explicit value, else `LABELFORGE_DATA_ROOT`,
/// else `./labelforge-data`.
pub fn data_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("labelforge-data"))
}

fn valid_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("invalid id {id:?}")))
    }
}

pub fn list_projects(root: &Path) -> Result<Vec<String>> {
    if !root.exists() {
        return Ok(Vec::new());
    }
    let mut ids: Vec<String> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("project.json").exists())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    ids.sort();
    Ok(ids)
}

pub struct Project {
    dir: PathBuf,
    meta: ProjectMeta,
    original: AnnotationMatrix,
    labels: AnnotationMatrix,
    log: ProvenanceLog,
    embeddings: Option<EmbeddingStore>,
    pairs: Option<PairQueue>,
    sessions: BTreeMap<String, AuditSession>,
    workflows: BTreeMap<String, WorkflowState>,
}

impl Project {
    /// Ingests an attribute file as a new project.
    pub fn create(root: &Path, id: &str, labels: &Path, format: AttributeFormat) -> Result<Project> {
        valid_id(id)?;
        let dir = root.join(id);
        if dir.join("project.json").exists() {
            return Err(Error::ProjectExists(id.to_string()));
        }
        let original = ingest_attribute_file(labels, format)?;
        for sub in ["passes", "sessions", "workflows"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        export_cleaned(&original, &dir.join("original.txt"))?;
        let project = Project {
            meta: ProjectMeta {
                version: META_VERSION,
                id: id.to_string(),
                created: chrono::Utc::now(),
                guidelines: BTreeMap::new(),
                sessions: BTreeMap::new(),
            },
            labels: original.clone(),
            original,
            log: ProvenanceLog::default(),
            embeddings: None,
            pairs: None,
            sessions: BTreeMap::new(),
            workflows: BTreeMap::new(),
            dir,
        };
        project.save_meta()?;
        Ok(project)
    }

    pub fn open(root: &Path, id: &str) -> Result<Project> {
        valid_id(id)?;
        let dir = root.join(id);
        let meta_path = dir.join("project.json");
        if !meta_path.exists() {
            return Err(Error::UnknownProject(id.to_string()));
        }
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: ProjectMeta = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        if meta.version != META_VERSION {
            return Err(Error::UnsupportedVersion(meta.version.to_string()));
        }
        let original = ingest_attribute_file(&dir.join("original.txt"), AttributeFormat::Extended)?;
        let log_path = dir.join("provenance.log");
        let log = if log_path.exists() {
            ProvenanceLog::load(&log_path)?
        } else {
            ProvenanceLog::default()
        };
        let mut labels = original.clone();
        log.replay(&mut labels)?;

        let pairs_path = dir.join("pairs.tsv");
        let pairs = if pairs_path.exists() {
            let text = fs::read_to_string(&pairs_path).map_err(|e| Error::io(&pairs_path, e))?;
            Some(PairQueue::from_tsv(&text)?)
        } else {
            None
        };
        let mut sessions = BTreeMap::new();
        for sid in meta.sessions.keys() {
            let p = dir.join("sessions").join(format!("{sid}.tsv"));
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            sessions.insert(sid.clone(), AuditSession::from_text(&text)?);
        }
        let mut workflows = BTreeMap::new();
        let wdir = dir.join("workflows");
        if wdir.exists() {
            for entry in fs::read_dir(&wdir).map_err(|e| Error::io(&wdir, e))?.flatten() {
                let p = entry.path();
                if p.extension().is_some_and(|e| e == "json") {
                    let state = WorkflowState::load(&p)?;
                    workflows.insert(state.id.clone(), state);
                }
            }
        }
        Ok(Project {
            dir,
            meta,
            original,
            labels,
            log,
            embeddings: None,
            pairs,
            sessions,
            workflows,
        })
    }

    pub fn id(&self) -> &str {
        &self.meta.id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn meta(&self) -> &ProjectMeta {
        &self.meta
    }

    pub fn labels(&self) -> &AnnotationMatrix {
        &self.labels
    }

    pub fn original(&self) -> &AnnotationMatrix {
        &self.original
    }

    pub fn log(&self) -> &ProvenanceLog {
        &self.log
    }

    pub fn summary(&self) -> ProjectSummary {
        ProjectSummary {
            id: self.meta.id.clone(),
            images: self.labels.n_images(),
            unusable: self.labels.n_images() - self.labels.n_usable(),
            attributes: self.labels.attributes().len(),
            edits: self.log.len(),
            embeddings: self.dir.join("embeddings.txt").exists(),
            pairs: self.pairs.as_ref().map_or(0, |q| q.pairs().len()),
            sessions: self.sessions.len(),
            workflows: self.workflows.len(),
        }
    }

    fn save_meta(&self) -> Result<()> {
        let p = self.dir.join("project.json");
        let text = serde_json::to_string_pretty(&self.meta).expect("metadata serializes");
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    pub fn set_guideline(&mut self, attribute: &str, text: &str) -> Result<()> {
        self.labels.attribute_index(attribute)?;
        self.meta.guidelines.insert(attribute.to_string(), text.to_string());
        self.save_meta()
    }

    pub fn guideline(&self, attribute: &str) -> Option<&str> {
        self.meta.guidelines.get(attribute).map(String::as_str)
    }

    fn persist_log(&self, from: usize) -> Result<()> {
        self.log.append_to_file(&self.dir.join("provenance.log"), from)
    }

    // -- annotation ------------------------------------------------------

    pub fn apply_label(&mut self, image: &str, attribute: &str, value: LabelValue, source: &str) -> Result<()> {
        let from = self.log.len();
        self.labels.apply_label(&mut self.log, image, attribute, value, source)?;
        self.persist_log(from)
    }

    pub fn mark_unusable(&mut self, image: &str, source: &str) -> Result<()> {
        let from = self.log.len();
        self.labels.mark_unusable(&mut self.log, image, source)?;
        self.persist_log(from)
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        export_cleaned(&self.labels, path)
    }

    // -- consistency -----------------------------------------------------

    pub fn import_pass(&mut self, name: &str, path: &Path, format: AttributeFormat) -> Result<()> {
        valid_id(name)?;
        let matrix = ingest_attribute_file(path, format)?;
        export_cleaned(&matrix, &self.dir.join("passes").join(format!("{name}.txt")))
    }

    pub fn pass_matrix(&self, name: &str) -> Result<AnnotationMatrix> {
        valid_id(name)?;
        let p = self.dir.join("passes").join(format!("{name}.txt"));
        if !p.exists() {
            return Err(Error::InvalidArgument(format!("no re-annotation pass named {name:?}")));
        }
        ingest_attribute_file(&p, AttributeFormat::Extended)
    }

    pub fn consistency_report(&self, a: &str, b: &str) -> Result<Vec<DisagreementReport>> {
        disagreement_counts(&self.pass_matrix(a)?, &self.pass_matrix(b)?)
    }

    // -- embeddings and pairs --------------------------------------------

    pub fn import_embeddings(&mut self, path: &Path) -> Result<usize> {
        let store = EmbeddingStore::load(path)?;
        store.save(&self.dir.join("embeddings.txt"))?;
        let n = store.len();
        self.embeddings = Some(store);
        Ok(n)
    }

    pub fn embeddings(&mut self) -> Result<&EmbeddingStore> {
        if self.embeddings.is_none() {
            let p = self.dir.join("embeddings.txt");
            if !p.exists() {
                return Err(Error::InvalidArgument("project has no embeddings".into()));
            }
            self.embeddings = Some(EmbeddingStore::load(&p)?);
        }
        Ok(self.embeddings.as_ref().expect("just loaded"))
    }

    fn save_pairs(&self) -> Result<()> {
        let p = self.dir.join("pairs.tsv");
        let text = self.pairs.as_ref().map(PairQueue::to_tsv).unwrap_or_default();
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    /// Replaces the pair queue with fresh candidates.
    pub fn detect_pairs(&mut self, threshold: f64, exec: Execution) -> Result<usize> {
        let pairs = find_candidate_pairs_with(self.embeddings()?, threshold, exec)?;
        let n = pairs.len();
        self.pairs = Some(PairQueue::new(pairs));
        self.save_pairs()?;
        Ok(n)
    }

    pub fn import_pairs(&mut self, path: &Path) -> Result<usize> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let q = PairQueue::from_tsv(&text)?;
        let n = q.pairs().len();
        self.pairs = Some(q);
        self.save_pairs()?;
        Ok(n)
    }

    pub fn pairs(&self) -> &[CandidatePair] {
        self.pairs.as_ref().map_or(&[], |q| q.pairs())
    }

    fn queue_mut(&mut self) -> Result<&mut PairQueue> {
        self.pairs
            .as_mut()
            .ok_or_else(|| Error::InvalidArgument("project has no candidate pairs".into()))
    }

    pub fn record_verdict(&mut self, pair: u32, verdict: Verdict, reviewer: &str) -> Result<CandidatePair> {
        let result = self.queue_mut()?.record_verdict(pair, verdict, reviewer).cloned();
        // a conflict flags the pair for arbitration, which must persist too
        self.save_pairs()?;
        result
    }

    pub fn arbitrate(&mut self, pair: u32, verdict: Verdict, arbiter: &str) -> Result<CandidatePair> {
        let result = self.queue_mut()?.arbitrate(pair, verdict, arbiter).cloned();
        self.save_pairs()?;
        result
    }

    /// Inconsistency ranking over confirmed pairs of the current labels.
    pub fn pin_report(&self, exclude: &[String]) -> Result<(Vec<DuplicateConflictStats>, Vec<String>)> {
        let (stats, degenerate) = duplicate_inconsistency(self.pairs(), &self.labels)?;
        Ok((rank_by_inconsistency(stats, exclude), degenerate))
    }

    // -- audits ----------------------------------------------------------

    fn next_session_id(&self, prefix: &str) -> String {
        (1..)
            .map(|i| format!("{prefix}{i}"))
            .find(|id| !self.meta.sessions.contains_key(id))
            .expect("unbounded")
    }

    fn save_session(&self, id: &str) -> Result<()> {
        let p = self.dir.join("sessions").join(format!("{id}.tsv"));
        fs::write(&p, self.sessions[id].to_text()).map_err(|e| Error::io(&p, e))
    }

    fn insert_session(&mut self, session: AuditSession, info: SessionInfo) -> Result<&AuditSession> {
        let id = session.id.clone();
        self.sessions.insert(id.clone(), session);
        self.meta.sessions.insert(id.clone(), info);
        self.save_session(&id)?;
        self.save_meta()?;
        Ok(&self.sessions[&id])
    }

    /// Opens an error-rate audit over the stratum `attribute = value` of the
    /// original labels.
    pub fn create_session(
        &mut self,
        id: Option<&str>,
        attribute: &str,
        value: bool,
        min_per_value: usize,
        seed: u64,
    ) -> Result<&AuditSession> {
        let id = match id {
            Some(id) => {
                valid_id(id)?;
                if self.sessions.contains_key(id) {
                    return Err(Error::DuplicateId(id.to_string()));
                }
                id.to_string()
            }
            None => self.next_session_id("s"),
        };
        let plan = sampling_plan(&self.original, attribute, value, min_per_value, seed)?;
        self.insert_session(
            AuditSession::new(id, plan),
            SessionInfo {
                origin: SessionOrigin::Stratum,
                workflow: None,
            },
        )
    }

    /// Opens an audit session over the deterministic sample of a bin.
    pub fn create_bin_session(&mut self, workflow: &str, votes: usize) -> Result<&AuditSession> {
        let state = self.workflow(workflow)?;
        let plan = state.bin_audit_plan(votes)?;
        let round = state.round;
        let id = self.next_session_id(&format!("{workflow}-r{round}-v{votes}-"));
        self.insert_session(
            AuditSession::new(id, plan),
            SessionInfo {
                origin: SessionOrigin::Bin { round, votes },
                workflow: Some(workflow.to_string()),
            },
        )
    }

    pub fn session(&self, id: &str) -> Result<&AuditSession> {
        self.sessions.get(id).ok_or_else(|| Error::UnknownSession(id.to_string()))
    }

    pub fn sessions(&self) -> impl Iterator<Item = &AuditSession> {
        self.sessions.values()
    }

    pub fn session_info(&self, id: &str) -> Result<&SessionInfo> {
        self.meta.sessions.get(id).ok_or_else(|| Error::UnknownSession(id.to_string()))
    }

    fn with_session<T>(&mut self, id: &str, f: impl FnOnce(&mut AuditSession) -> Result<T>) -> Result<T> {
        let session = self
            .sessions
            .get_mut(id)
            .ok_or_else(|| Error::UnknownSession(id.to_string()))?;
        let out = f(session)?;
        self.save_session(id)?;
        Ok(out)
    }

    pub fn bind_annotator(&mut self, session: &str, annotator: &str, pass: Pass) -> Result<()> {
        self.with_session(session, |s| s.bind(annotator, pass))
    }

    pub fn record_audit_label(
        &mut self,
        session: &str,
        pass: Pass,
        annotator: &str,
        image: &str,
        value: LabelValue,
    ) -> Result<()> {
        self.with_session(session, |s| s.record_label(pass, annotator, image, value))
    }

    pub fn start_reconciliation(&mut self, session: &str) -> Result<Vec<String>> {
        self.with_session(session, |s| s.start_reconciliation())
    }

    pub fn resolve(&mut self, session: &str, image: &str, value: LabelValue) -> Result<()> {
        self.with_session(session, |s| s.resolve(image, value))
    }

    pub fn close_session(&mut self, session: &str) -> Result<()> {
        self.with_session(session, |s| s.close())
    }

    /// Error rates from closed stratum sessions, optionally for one attribute.
    pub fn error_report(&self, attribute: Option<&str>) -> Result<Vec<ErrorRateReport>> {
        let sessions: Vec<&AuditSession> = self
            .sessions
            .values()
            .filter(|s| s.status() == SessionStatus::Closed)
            .filter(|s| self.meta.sessions[&s.id].origin == SessionOrigin::Stratum)
            .filter(|s| attribute.is_none_or(|a| s.plan.attribute == a))
            .collect();
        error_rates(&sessions, &self.original)
    }

    // -- workflows -------------------------------------------------------

    fn save_workflow(&self, id: &str) -> Result<()> {
        self.workflows[id].save(&self.dir.join("workflows").join(format!("{id}.json")))
    }

    /// Consensus labels of closed stratum sessions for `attribute`,
    /// binary values only: the usual seed for a workflow.
    pub fn audited_labels(&self, attribute: &str) -> BTreeMap<String, LabelValue> {
        self.sessions
            .values()
            .filter(|s| s.status() == SessionStatus::Closed && s.plan.attribute == attribute)
            .flat_map(|s| s.consensus().iter())
            .filter(|(_, v)| v.is_binary())
            .map(|(k, v)| (k.clone(), *v))
            .collect()
    }

    /// Starts a workflow. The uncleaned pool is every usable image with an
    /// embedding that is not in the seed.
    pub fn create_workflow(
        &mut self,
        id: &str,
        attribute: &str,
        seed: &BTreeMap<String, LabelValue>,
        config: WorkflowConfig,
    ) -> Result<&WorkflowState> {
        valid_id(id)?;
        if self.workflows.contains_key(id) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        self.labels.attribute_index(attribute)?;
        self.embeddings()?;
        let store = self.embeddings.as_ref().expect("loaded above");
        let usable: BTreeSet<&str> = self.labels.usable_images().map(|(_, r)| r.image_id.as_str()).collect();
        let uncleaned: BTreeSet<String> = store
            .ids()
            .iter()
            .filter(|id| usable.contains(id.as_str()) && !seed.contains_key(*id))
            .cloned()
            .collect();
        let state = WorkflowState::init(id, attribute, seed, uncleaned, config)?;
        self.workflows.insert(id.to_string(), state);
        self.save_workflow(id)?;
        Ok(&self.workflows[id])
    }

    pub fn workflow(&self, id: &str) -> Result<&WorkflowState> {
        self.workflows.get(id).ok_or_else(|| Error::UnknownWorkflow(id.to_string()))
    }

    pub fn workflows(&self) -> impl Iterator<Item = &WorkflowState> {
        self.workflows.values()
    }

    fn with_workflow<T>(&mut self, id: &str, f: impl FnOnce(&mut WorkflowState, &EmbeddingStore) -> Result<T>) -> Result<T> {
        if !self.workflows.contains_key(id) {
            return Err(Error::UnknownWorkflow(id.to_string()));
        }
        // embeddings are only needed for rounds; load lazily but tolerate absence
        let _ = self.embeddings();
        let empty = EmbeddingStore::new(1);
        let store = self.embeddings.as_ref().unwrap_or(&empty);
        let state = self.workflows.get_mut(id).expect("checked above");
        let out = f(state, store)?;
        self.save_workflow(id)?;
        Ok(out)
    }

    pub fn run_round(&mut self, id: &str, exec: Execution) -> Result<Vec<AgreementBin>> {
        self.with_workflow(id, |w, store| Ok(w.run_round_with(store, exec)?.to_vec()))
    }

    pub fn audit_bin(&mut self, id: &str, votes: usize, consensus: &BTreeMap<String, LabelValue>) -> Result<AgreementBin> {
        self.with_workflow(id, |w, _| w.audit_bin(votes, consensus).cloned())
    }

    pub fn audit_bin_with_session(&mut self, id: &str, votes: usize, session: &str) -> Result<AgreementBin> {
        let session = self.session(session)?.clone();
        self.with_workflow(id, |w, _| w.audit_bin_with_session(votes, &session).cloned())
    }

    pub fn mark_manual(&mut self, id: &str, votes: usize, labels: &BTreeMap<String, LabelValue>) -> Result<AgreementBin> {
        self.with_workflow(id, |w, _| w.mark_manual(votes, labels).cloned())
    }

    pub fn defer_bin(&mut self, id: &str, votes: usize) -> Result<AgreementBin> {
        self.with_workflow(id, |w, _| w.defer_bin(votes).cloned())
    }

    pub fn check_convergence(&mut self, id: &str) -> Result<crate::workflow::WorkflowStatus> {
        self.with_workflow(id, |w, _| Ok(w.check_convergence()))
    }

    /// Writes a workflow's cleaned labels into the project labels.
    pub fn apply_workflow(&mut self, id: &str) -> Result<usize> {
        let state = self.workflow(id)?.clone();
        let from = self.log.len();
        let n = state.apply_to_matrix(&mut self.labels, &mut self.log, &format!("workflow:{id}"))?;
        self.persist_log(from)?;
        Ok(n)
    }
}

/// Parses `image_id value` lines (value in 1/-1/0 or true/false).
pub fn parse_label_list(text: &str) -> Result<BTreeMap<String, LabelValue>> {
    let mut out = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let (Some(id), Some(value), None) = (tokens.next(), tokens.next(), tokens.next()) else {
            return Err(Error::Parse {
                line: idx + 1,
                message: "expected `image_id value`".into(),
            });
        };
        let value: LabelValue = value.parse().map_err(|_| Error::BadValue {
            line: idx + 1,
            column: 2,
            token: value.to_string(),
        })?;
        if out.insert(id.to_string(), value).is_some() {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LABELS: &str = "4\nMSO Male\na.jpg 1 -1\nb.jpg -1 -1\nc.jpg 1 1\nd.jpg -1 1\n";

    fn setup() -> (tempfile::TempDir, Project) {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("attrs.txt");
        fs::write(&src, LABELS).unwrap();
        let p = Project::create(&dir.path().join("root"), "demo", &src, AttributeFormat::CelebaOriginal).unwrap();
        (dir, p)
    }

    #[test]
    fn create_and_reopen() {
        let (dir, mut p) = setup();
        let root = dir.path().join("root");
        p.apply_label("a.jpg", "MSO", LabelValue::InfoNotVisible, "alice").unwrap();
        p.mark_unusable("d.jpg", "alice").unwrap();
        let q = Project::open(&root, "demo").unwrap();
        assert!(q.labels().labels_equal(p.labels()));
        assert_eq!(q.labels().get("a.jpg", "MSO").unwrap(), LabelValue::InfoNotVisible);
        assert_eq!(q.original().get("a.jpg", "MSO").unwrap(), LabelValue::True);
        assert_eq!(list_projects(&root).unwrap(), vec!["demo".to_string()]);
        let e = Project::create(&root, "demo", &dir.path().join("attrs.txt"), AttributeFormat::CelebaOriginal);
        assert_eq!(e.err().unwrap().code(), "PROJECT_EXISTS");
        assert_eq!(Project::open(&root, "nope").err().unwrap().code(), "UNKNOWN_PROJECT");
        assert!(Project::open(&root, "../etc").is_err());
    }

    #[test]
    fn session_persists() {
        let (dir, mut p) = setup();
        let id = p.create_session(None, "MSO", true, 10, 3).unwrap().id.clone();
        assert_eq!(id, "s1");
        p.record_audit_label(&id, Pass::A, "alice", "a.jpg", LabelValue::True).unwrap();
        let q = Project::open(&dir.path().join("root"), "demo").unwrap();
        assert_eq!(q.session(&id).unwrap().pass(Pass::A).len(), 1);
    }

    #[test]
    fn label_list() {
        let m = parse_label_list("a 1\nb -1\n# c\nc 0\n").unwrap();
        assert_eq!(m["c"], LabelValue::InfoNotVisible);
        assert_eq!(parse_label_list("a 1\na 1").unwrap_err().code(), "DUPLICATE_ID");
        assert_eq!(parse_label_list("a 7").unwrap_err().code(), "BAD_VALUE");
    }
}
