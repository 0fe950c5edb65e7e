//! HTTP/JSON service over a data root. Every mutating endpoint maps to one
//! `Project` operation; projects are opened lazily and each one is guarded
//! by its own mutex, so mutations on a project are serialized.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use labelforge::annotation::AttributeFormat;
use labelforge::audit::{AuditSession, Pass, SessionStatus};
use labelforge::duplicates::{CandidatePair, Verdict};
use labelforge::lease::{LeaseTable, DEFAULT_LEASE_SECONDS};
use labelforge::project::{list_projects, Project, SessionInfo};
use labelforge::report::{render, ReportFormat, Row};
use labelforge::workflow::{AgreementBin, Decision, WorkflowConfig, WorkflowState};
use labelforge::{Error, ErrorKind, Execution, LabelValue};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_root: PathBuf,
    /// Directory served under `/images` for the annotation UI.
    pub images: Option<PathBuf>,
    pub lease: chrono::Duration,
    pub exec: Execution,
}

impl ServiceConfig {
    pub fn new(data_root: PathBuf) -> Self {
        ServiceConfig {
            data_root,
            images: None,
            lease: chrono::Duration::seconds(DEFAULT_LEASE_SECONDS),
            exec: Execution::default(),
        }
    }
}

struct Inner {
    config: ServiceConfig,
    projects: Mutex<HashMap<String, Arc<Mutex<Project>>>>,
    leases: Mutex<LeaseTable>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        let leases = LeaseTable::new(config.lease);
        AppState(Arc::new(Inner {
            config,
            projects: Mutex::new(HashMap::new()),
            leases: Mutex::new(leases),
        }))
    }

    fn project(&self, id: &str) -> Result<Arc<Mutex<Project>>, ApiError> {
        let mut projects = self.0.projects.lock().expect("project table poisoned");
        if let Some(p) = projects.get(id) {
            return Ok(p.clone());
        }
        let p = Arc::new(Mutex::new(Project::open(&self.0.config.data_root, id)?));
        projects.insert(id.to_string(), p.clone());
        Ok(p)
    }

    fn with_project<T>(&self, id: &str, f: impl FnOnce(&mut Project) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let p = self.project(id)?;
        let mut guard = p.lock().expect("project poisoned");
        f(&mut guard)
    }
}

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0.kind() {
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Conflict => StatusCode::CONFLICT,
            ErrorKind::Validation => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::Io => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = json!({
            "error": self.0.code(),
            "message": self.0.to_string(),
            "ids": self.0.ids(),
        });
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_value(s: &str) -> Result<LabelValue, Error> {
    s.parse::<LabelValue>()
        .map_err(|_| Error::InvalidArgument(format!("unknown label value {s:?}")))
}

fn parse_values(map: &BTreeMap<String, String>) -> Result<BTreeMap<String, LabelValue>, Error> {
    map.iter().map(|(k, v)| Ok((k.clone(), parse_value(v)?))).collect()
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/projects", get(list_projects_h).post(create_project))
        .route("/projects/{p}", get(project_summary))
        .route("/projects/{p}/annotations/next", get(next_item))
        .route("/projects/{p}/annotations", post(post_annotation))
        .route("/projects/{p}/pairs", get(list_pairs).post(post_verdict))
        .route("/projects/{p}/audit/sessions", get(list_sessions).post(create_session))
        .route("/projects/{p}/audit/sessions/{s}", get(get_session))
        .route("/projects/{p}/audit/sessions/{s}/labels", post(post_audit_label))
        .route("/projects/{p}/audit/sessions/{s}/reconcile", post(reconcile))
        .route("/projects/{p}/audit/sessions/{s}/resolve", post(resolve))
        .route("/projects/{p}/audit/sessions/{s}/close", post(close_session))
        .route("/projects/{p}/workflow", post(create_workflow))
        .route("/projects/{p}/workflow/{w}/status", get(workflow_status))
        .route("/projects/{p}/workflow/{w}/round", post(workflow_round))
        .route("/projects/{p}/workflow/{w}/check", post(workflow_check))
        .route("/projects/{p}/workflow/{w}/apply", post(workflow_apply))
        .route("/projects/{p}/workflow/{w}/bins/{v}/sample", get(bin_sample))
        .route("/projects/{p}/workflow/{w}/bins/{v}/audit", post(bin_audit))
        .route("/projects/{p}/workflow/{w}/bins/{v}/manual", post(bin_manual))
        .route("/projects/{p}/workflow/{w}/bins/{v}/defer", post(bin_defer))
        .route("/projects/{p}/reports/{kind}", get(report));
    let mut app = Router::new().nest("/api/v1", api);
    if let Some(images) = &state.0.config.images {
        app = app.nest_service("/images", ServeDir::new(images));
    }
    app.with_state(state)
}

pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(config)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

// -- projects ------------------------------------------------------------

async fn list_projects_h(State(st): State<AppState>) -> ApiResult<Json<Value>> {
    let ids = list_projects(&st.0.config.data_root)?;
    let mut out = Vec::new();
    for id in ids {
        out.push(serde_json::to_value(st.with_project(&id, |p| Ok(p.summary()))?).expect("summary serializes"));
    }
    Ok(Json(Value::Array(out)))
}

#[derive(Deserialize)]
struct CreateProject {
    id: String,
    labels: PathBuf,
    #[serde(default = "default_format")]
    format: String,
}

fn default_format() -> String {
    "celeba".into()
}

async fn create_project(State(st): State<AppState>, Json(body): Json<CreateProject>) -> ApiResult<Response> {
    let format: AttributeFormat = body.format.parse()?;
    let project = Project::create(&st.0.config.data_root, &body.id, &body.labels, format)?;
    let summary = project.summary();
    st.0.projects
        .lock()
        .expect("project table poisoned")
        .insert(body.id.clone(), Arc::new(Mutex::new(project)));
    Ok((StatusCode::CREATED, Json(summary)).into_response())
}

async fn project_summary(State(st): State<AppState>, Path(p): Path<String>) -> ApiResult<Json<Value>> {
    st.with_project(&p, |p| Ok(Json(serde_json::to_value(p.summary()).expect("summary serializes"))))
}

// -- queues --------------------------------------------------------------

enum QueueRef {
    Audit { session: String, pass: Pass },
    Pairs,
}

fn parse_queue(q: &str) -> Result<QueueRef, Error> {
    if q == "pairs" {
        return Ok(QueueRef::Pairs);
    }
    let parts: Vec<&str> = q.split(':').collect();
    match parts.as_slice() {
        ["audit", session, pass] => {
            let pass = match *pass {
                "a" => Pass::A,
                "b" => Pass::B,
                other => return Err(Error::InvalidArgument(format!("unknown pass {other:?}"))),
            };
            Ok(QueueRef::Audit {
                session: session.to_string(),
                pass,
            })
        }
        _ => Err(Error::InvalidArgument(format!(
            "queue must be `pairs` or `audit:<session>:<a|b>`, got {q:?}"
        ))),
    }
}

fn audit_queue(session: &str, pass: Pass) -> String {
    format!("audit:{session}:{pass}")
}

fn lease_key(project: &str, queue: &str) -> String {
    format!("{project}/{queue}")
}

#[derive(Deserialize)]
struct NextQuery {
    queue: String,
    annotator: String,
}

async fn next_item(
    State(st): State<AppState>,
    Path(p): Path<String>,
    Query(q): Query<NextQuery>,
) -> ApiResult<Response> {
    let queue = parse_queue(&q.queue)?;
    let key = lease_key(&p, &q.queue);
    let now = Utc::now();
    st.with_project(&p, |project| {
        let mut leases = st.0.leases.lock().expect("lease table poisoned");
        match queue {
            QueueRef::Audit { session, pass } => {
                if project.session(&session)?.status() != SessionStatus::Open {
                    return Ok(StatusCode::NO_CONTENT.into_response());
                }
                project.bind_annotator(&session, &q.annotator, pass)?;
                let s = project.session(&session)?;
                let Some(lease) = leases.next(&key, &q.annotator, s.unlabeled(pass), now) else {
                    return Ok(StatusCode::NO_CONTENT.into_response());
                };
                let attribute = s.plan.attribute.clone();
                Ok(Json(json!({
                    "queue": q.queue,
                    "item": lease.item,
                    "image_url": format!("/images/{}", lease.item),
                    "attribute": attribute,
                    "guideline": project.guideline(&attribute),
                    "pass": pass,
                    "expires_at": lease.expires_at,
                }))
                .into_response())
            }
            QueueRef::Pairs => {
                let pending: Vec<String> = project
                    .pairs()
                    .iter()
                    .filter(|c| c.verdict == Verdict::Pending)
                    .map(|c| c.pair_id.to_string())
                    .collect();
                let Some(lease) = leases.next(&key, &q.annotator, pending.iter().map(String::as_str), now) else {
                    return Ok(StatusCode::NO_CONTENT.into_response());
                };
                let id: u32 = lease.item.parse().expect("pair ids are numeric");
                let pair = project.pairs().iter().find(|c| c.pair_id == id).cloned();
                Ok(Json(json!({
                    "queue": q.queue,
                    "item": lease.item,
                    "pair": pair,
                    "expires_at": lease.expires_at,
                }))
                .into_response())
            }
        }
    })
}

#[derive(Deserialize)]
struct AnnotationBody {
    image_id: String,
    attribute: Option<String>,
    /// `1`, `-1`, `0` (or true/false/info_not_visible), or `unusable`.
    value: String,
    annotator: String,
}

async fn post_annotation(
    State(st): State<AppState>,
    Path(p): Path<String>,
    Json(body): Json<AnnotationBody>,
) -> ApiResult<Json<Value>> {
    st.with_project(&p, |project| {
        if body.value.eq_ignore_ascii_case("unusable") {
            project.mark_unusable(&body.image_id, &body.annotator)?;
        } else {
            let attribute = body
                .attribute
                .as_deref()
                .ok_or_else(|| Error::InvalidArgument("attribute is required".into()))?;
            project.apply_label(&body.image_id, attribute, parse_value(&body.value)?, &body.annotator)?;
        }
        let entry = project.log().entries().last().cloned();
        Ok(Json(json!({ "applied": entry })))
    })
}

// -- pairs ---------------------------------------------------------------

#[derive(Deserialize)]
struct PairsQuery {
    #[serde(default)]
    status: Option<String>,
}

async fn list_pairs(
    State(st): State<AppState>,
    Path(p): Path<String>,
    Query(q): Query<PairsQuery>,
) -> ApiResult<Json<Vec<CandidatePair>>> {
    st.with_project(&p, |project| {
        let keep = |c: &CandidatePair| match q.status.as_deref() {
            None | Some("all") => Ok(true),
            Some("pending") => Ok(c.verdict == Verdict::Pending),
            Some("arbitration") => Ok(c.arbitration),
            Some("confirmed") => Ok(c.is_confirmed()),
            Some(other) => Err(Error::InvalidArgument(format!("unknown pair status {other:?}"))),
        };
        let mut out = Vec::new();
        for c in project.pairs() {
            if keep(c)? {
                out.push(c.clone());
            }
        }
        Ok(Json(out))
    })
}

#[derive(Deserialize)]
struct VerdictBody {
    pair_id: u32,
    verdict: String,
    reviewer: String,
    /// Final ruling on a pair flagged for arbitration.
    #[serde(default)]
    arbitrate: bool,
}

async fn post_verdict(
    State(st): State<AppState>,
    Path(p): Path<String>,
    Json(body): Json<VerdictBody>,
) -> ApiResult<Json<CandidatePair>> {
    let verdict: Verdict = body.verdict.parse()?;
    let key = lease_key(&p, "pairs");
    let item = body.pair_id.to_string();
    st.with_project(&p, |project| {
        let mut leases = st.0.leases.lock().expect("lease table poisoned");
        leases.check(&key, &item, &body.reviewer, Utc::now())?;
        let result = if body.arbitrate {
            project.arbitrate(body.pair_id, verdict, &body.reviewer)
        } else {
            project.record_verdict(body.pair_id, verdict, &body.reviewer)
        };
        if !matches!(result, Err(Error::UnknownPair(_))) {
            leases.complete(&key, &item);
        }
        Ok(Json(result?))
    })
}

// -- audit sessions ------------------------------------------------------

#[derive(Serialize)]
struct SessionView {
    id: String,
    attribute: String,
    value: LabelValue,
    status: String,
    info: SessionInfo,
    population: usize,
    sample_size: usize,
    labeled_a: usize,
    labeled_b: usize,
    /// While OPEN: only the requesting annotator's own pass.
    #[serde(skip_serializing_if = "Option::is_none")]
    own_pass: Option<Pass>,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<BTreeMap<String, LabelValue>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pass_a: Option<BTreeMap<String, LabelValue>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pass_b: Option<BTreeMap<String, LabelValue>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    consensus: Option<BTreeMap<String, LabelValue>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    unresolved: Option<Vec<String>>,
}

fn session_view(s: &AuditSession, info: &SessionInfo, annotator: Option<&str>) -> SessionView {
    let open = s.status() == SessionStatus::Open;
    let own = annotator.and_then(|a| s.binding(a));
    SessionView {
        id: s.id.clone(),
        attribute: s.plan.attribute.clone(),
        value: LabelValue::from_bool(s.plan.target_value),
        status: s.status().to_string(),
        info: info.clone(),
        population: s.plan.population,
        sample_size: s.plan.sample_ids.len(),
        labeled_a: s.pass(Pass::A).len(),
        labeled_b: s.pass(Pass::B).len(),
        own_pass: if open { own } else { None },
        labels: if open { own.map(|p| s.pass(p).clone()) } else { None },
        pass_a: (!open).then(|| s.pass(Pass::A).clone()),
        pass_b: (!open).then(|| s.pass(Pass::B).clone()),
        consensus: (!open).then(|| s.consensus().clone()),
        unresolved: (s.status() == SessionStatus::Reconciling).then(|| s.unresolved()),
    }
}

#[derive(Deserialize)]
struct SessionQuery {
    annotator: Option<String>,
}

async fn list_sessions(State(st): State<AppState>, Path(p): Path<String>) -> ApiResult<Json<Vec<SessionView>>> {
    st.with_project(&p, |project| {
        let mut out = Vec::new();
        for s in project.sessions() {
            out.push(session_view(s, project.session_info(&s.id)?, None));
        }
        Ok(Json(out))
    })
}

async fn get_session(
    State(st): State<AppState>,
    Path((p, s)): Path<(String, String)>,
    Query(q): Query<SessionQuery>,
) -> ApiResult<Json<SessionView>> {
    st.with_project(&p, |project| {
        Ok(Json(session_view(
            project.session(&s)?,
            project.session_info(&s)?,
            q.annotator.as_deref(),
        )))
    })
}

#[derive(Deserialize)]
struct CreateSession {
    id: Option<String>,
    attribute: Option<String>,
    value: Option<bool>,
    #[serde(default = "default_min_per_value")]
    min_per_value: usize,
    #[serde(default)]
    seed: u64,
    /// Audit a workflow bin instead of an attribute stratum.
    workflow: Option<String>,
    votes: Option<usize>,
}

fn default_min_per_value() -> usize {
    labelforge::audit::DEFAULT_MIN_PER_VALUE
}

async fn create_session(
    State(st): State<AppState>,
    Path(p): Path<String>,
    Json(body): Json<CreateSession>,
) -> ApiResult<Response> {
    st.with_project(&p, |project| {
        let id = match (&body.workflow, body.votes, &body.attribute, body.value) {
            (Some(w), Some(v), None, None) => project.create_bin_session(w, v)?.id.clone(),
            (None, None, Some(a), Some(value)) => project
                .create_session(body.id.as_deref(), a, value, body.min_per_value, body.seed)?
                .id
                .clone(),
            _ => {
                return Err(Error::InvalidArgument(
                    "give either attribute and value, or workflow and votes".into(),
                )
                .into())
            }
        };
        let view = session_view(project.session(&id)?, project.session_info(&id)?, None);
        Ok((StatusCode::CREATED, Json(view)).into_response())
    })
}

#[derive(Deserialize)]
struct AuditLabelBody {
    annotator: String,
    pass: Pass,
    image_id: String,
    value: String,
}

async fn post_audit_label(
    State(st): State<AppState>,
    Path((p, s)): Path<(String, String)>,
    Json(body): Json<AuditLabelBody>,
) -> ApiResult<Json<Value>> {
    let value = parse_value(&body.value)?;
    let key = lease_key(&p, &audit_queue(&s, body.pass));
    st.with_project(&p, |project| {
        let mut leases = st.0.leases.lock().expect("lease table poisoned");
        leases.check(&key, &body.image_id, &body.annotator, Utc::now())?;
        project.record_audit_label(&s, body.pass, &body.annotator, &body.image_id, value)?;
        leases.complete(&key, &body.image_id);
        let remaining = project.session(&s)?.unlabeled(body.pass).count();
        // only the caller's own pass is echoed back
        Ok(Json(json!({
            "session": s,
            "pass": body.pass,
            "image_id": body.image_id,
            "value": value,
            "remaining": remaining,
        })))
    })
}

async fn reconcile(State(st): State<AppState>, Path((p, s)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    st.with_project(&p, |project| {
        let disagreements = project.start_reconciliation(&s)?;
        Ok(Json(json!({ "session": s, "disagreements": disagreements })))
    })
}

#[derive(Deserialize)]
struct ResolveBody {
    image_id: String,
    value: String,
}

async fn resolve(
    State(st): State<AppState>,
    Path((p, s)): Path<(String, String)>,
    Json(body): Json<ResolveBody>,
) -> ApiResult<Json<Value>> {
    let value = parse_value(&body.value)?;
    st.with_project(&p, |project| {
        project.resolve(&s, &body.image_id, value)?;
        Ok(Json(json!({ "session": s, "unresolved": project.session(&s)?.unresolved() })))
    })
}

async fn close_session(State(st): State<AppState>, Path((p, s)): Path<(String, String)>) -> ApiResult<Json<SessionView>> {
    st.with_project(&p, |project| {
        project.close_session(&s)?;
        Ok(Json(session_view(project.session(&s)?, project.session_info(&s)?, None)))
    })
}

// -- workflows -----------------------------------------------------------

#[derive(Serialize)]
struct BinView {
    votes: usize,
    size: usize,
    decision: Decision,
    majority_label: LabelValue,
    audit_eligible: bool,
    audited_error: Option<f64>,
    ci: Option<(f64, f64)>,
}

fn bin_view(w: &WorkflowState, b: &AgreementBin) -> BinView {
    BinView {
        votes: b.votes,
        size: b.members.len(),
        decision: b.decision,
        majority_label: LabelValue::from_bool(w.majority_label(b.votes)),
        audit_eligible: w.audit_eligible(b.votes),
        audited_error: b.audited_error(),
        ci: b.audit.as_ref().map(|a| a.ci),
    }
}

fn workflow_view(w: &WorkflowState) -> Value {
    json!({
        "id": w.id,
        "attribute": w.attribute,
        "status": w.status(),
        "round": w.round,
        "cleaned": w.cleaned().len(),
        "uncleaned": w.uncleaned().len(),
        "estimated_error": w.estimated_error(),
        "target_error": w.config.target_error,
        "max_rounds": w.config.max_rounds,
        "bins": w.bins().iter().map(|b| bin_view(w, b)).collect::<Vec<_>>(),
        "history": w.summaries(),
    })
}

#[derive(Deserialize)]
struct CreateWorkflow {
    id: String,
    attribute: String,
    /// Seed labels; defaults to the consensus of closed audits of the attribute.
    seed: Option<BTreeMap<String, String>>,
    #[serde(default)]
    config: WorkflowConfig,
}

async fn create_workflow(
    State(st): State<AppState>,
    Path(p): Path<String>,
    Json(body): Json<CreateWorkflow>,
) -> ApiResult<Response> {
    st.with_project(&p, |project| {
        let seed = match &body.seed {
            Some(map) => parse_values(map)?,
            None => project.audited_labels(&body.attribute),
        };
        let w = project.create_workflow(&body.id, &body.attribute, &seed, body.config.clone())?;
        Ok((StatusCode::CREATED, Json(workflow_view(w))).into_response())
    })
}

async fn workflow_status(State(st): State<AppState>, Path((p, w)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    st.with_project(&p, |project| Ok(Json(workflow_view(project.workflow(&w)?))))
}

async fn workflow_round(State(st): State<AppState>, Path((p, w)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let exec = st.0.config.exec;
    st.with_project(&p, |project| {
        project.run_round(&w, exec)?;
        Ok(Json(workflow_view(project.workflow(&w)?)))
    })
}

async fn workflow_check(State(st): State<AppState>, Path((p, w)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    st.with_project(&p, |project| {
        project.check_convergence(&w)?;
        Ok(Json(workflow_view(project.workflow(&w)?)))
    })
}

async fn workflow_apply(State(st): State<AppState>, Path((p, w)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    st.with_project(&p, |project| {
        let changed = project.apply_workflow(&w)?;
        Ok(Json(json!({ "workflow": w, "changed": changed })))
    })
}

async fn bin_sample(
    State(st): State<AppState>,
    Path((p, w, v)): Path<(String, String, usize)>,
) -> ApiResult<Json<Value>> {
    st.with_project(&p, |project| {
        let ids = project.workflow(&w)?.bin_audit_sample(v)?;
        Ok(Json(json!({ "votes": v, "sample": ids })))
    })
}

#[derive(Deserialize)]
struct BinAuditBody {
    consensus: Option<BTreeMap<String, String>>,
    session: Option<String>,
}

async fn bin_audit(
    State(st): State<AppState>,
    Path((p, w, v)): Path<(String, String, usize)>,
    Json(body): Json<BinAuditBody>,
) -> ApiResult<Json<Value>> {
    st.with_project(&p, |project| {
        match (&body.consensus, &body.session) {
            (Some(map), None) => project.audit_bin(&w, v, &parse_values(map)?)?,
            (None, Some(s)) => project.audit_bin_with_session(&w, v, s)?,
            _ => return Err(Error::InvalidArgument("give either consensus or session".into()).into()),
        };
        let state = project.workflow(&w)?;
        Ok(Json(serde_json::to_value(bin_view(state, state.bin(v)?)).expect("bin serializes")))
    })
}

#[derive(Deserialize)]
struct ManualBody {
    labels: BTreeMap<String, String>,
}

async fn bin_manual(
    State(st): State<AppState>,
    Path((p, w, v)): Path<(String, String, usize)>,
    Json(body): Json<ManualBody>,
) -> ApiResult<Json<Value>> {
    st.with_project(&p, |project| {
        project.mark_manual(&w, v, &parse_values(&body.labels)?)?;
        let state = project.workflow(&w)?;
        Ok(Json(serde_json::to_value(bin_view(state, state.bin(v)?)).expect("bin serializes")))
    })
}

async fn bin_defer(
    State(st): State<AppState>,
    Path((p, w, v)): Path<(String, String, usize)>,
) -> ApiResult<Json<Value>> {
    st.with_project(&p, |project| {
        project.defer_bin(&w, v)?;
        let state = project.workflow(&w)?;
        Ok(Json(serde_json::to_value(bin_view(state, state.bin(v)?)).expect("bin serializes")))
    })
}

// -- reports -------------------------------------------------------------

#[derive(Deserialize)]
struct ReportQuery {
    format: Option<String>,
    a: Option<String>,
    b: Option<String>,
    /// Comma-separated attributes left out of the pin report.
    exclude: Option<String>,
    attribute: Option<String>,
}

fn report_response<T: Row + Serialize>(rows: &[T], format: Option<&str>, extra: Value) -> Result<Response, Error> {
    match format {
        None | Some("json") => {
            let mut body = json!({ "rows": rows });
            if let (Value::Object(b), Value::Object(e)) = (&mut body, extra) {
                b.extend(e);
            }
            Ok(Json(body).into_response())
        }
        Some(f) => {
            let format: ReportFormat = f.parse()?;
            let ctype = match format {
                ReportFormat::Table => "text/tab-separated-values",
                ReportFormat::JsonLines => "application/x-ndjson",
            };
            Ok(([(header::CONTENT_TYPE, ctype)], render(rows, format)).into_response())
        }
    }
}

async fn report(
    State(st): State<AppState>,
    Path((p, kind)): Path<(String, String)>,
    Query(q): Query<ReportQuery>,
) -> ApiResult<Response> {
    st.with_project(&p, |project| {
        let format = q.format.as_deref();
        let response = match kind.as_str() {
            "consistency" => {
                let a = q.a.as_deref().unwrap_or("a");
                let b = q.b.as_deref().unwrap_or("b");
                report_response(&project.consistency_report(a, b)?, format, json!({}))?
            }
            "pin" => {
                let exclude: Vec<String> = q
                    .exclude
                    .as_deref()
                    .map(|e| e.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect())
                    .unwrap_or_default();
                let (rows, degenerate) = project.pin_report(&exclude)?;
                report_response(&rows, format, json!({ "degenerate": degenerate }))?
            }
            "errors" => report_response(&project.error_report(q.attribute.as_deref())?, format, json!({}))?,
            other => return Err(Error::InvalidArgument(format!("unknown report {other:?}")).into()),
        };
        Ok(response)
    })
}
