mod common;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::{confirmed_project, ok, Fixture};
use labelforge_cli::server::{router, AppState, ServiceConfig};

fn app(f: &Fixture) -> Router {
    router(AppState::new(ServiceConfig::new(f.root())))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, None).await
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, Method::POST, uri, Some(body)).await
}

const P: &str = "/api/v1/projects/demo";

/// Project with an open audit session `s1` over A=1 (four images).
fn audit_project(f: &Fixture) {
    confirmed_project(f);
    ok(&f.root(), &["audit", "create", "--project", "demo", "--attribute", "A", "--value", "true", "--min-per-value", "10"]);
}

#[tokio::test]
async fn create_and_list_projects() {
    let f = Fixture::new();
    let app = app(&f);
    let labels = f.path("attrs.txt");
    let (s, v) = post(&app, "/api/v1/projects", json!({ "id": "demo", "labels": labels })).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    assert_eq!(v["images"], 8);
    let (s, v) = post(&app, "/api/v1/projects", json!({ "id": "demo", "labels": labels })).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"], "PROJECT_EXISTS");
    let (s, v) = get(&app, "/api/v1/projects").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v.as_array().unwrap().len(), 1);
    let (s, v) = get(&app, "/api/v1/projects/missing").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "UNKNOWN_PROJECT");
}

#[tokio::test]
async fn verdicts_are_idempotent_and_conflicts_409() {
    let f = Fixture::new();
    confirmed_project(&f);
    let app = app(&f);
    let uri = format!("{P}/pairs");
    let body = json!({ "pair_id": 0, "verdict": "DUPLICATE", "reviewer": "r1" });
    assert_eq!(post(&app, &uri, body.clone()).await.0, StatusCode::OK);
    assert_eq!(post(&app, &uri, body).await.0, StatusCode::OK);
    let (s, v) = post(&app, &uri, json!({ "pair_id": 0, "verdict": "NEAR_DUPLICATE_REJECTED", "reviewer": "r2" })).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"], "VERDICT_CONFLICT");
    let (_, v) = get(&app, &format!("{uri}?status=arbitration")).await;
    assert_eq!(v.as_array().unwrap().len(), 1);
    let (s, v) = post(&app, &uri, json!({ "pair_id": 0, "verdict": "REJECTED", "reviewer": "lead", "arbitrate": true })).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["verdict"], "NEAR_DUPLICATE_REJECTED");
    assert_eq!(post(&app, &uri, json!({ "pair_id": 99, "verdict": "DUPLICATE", "reviewer": "r1" })).await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, &format!("{uri}?status=bogus")).await.0, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn empty_queue_is_204() {
    let f = Fixture::new();
    confirmed_project(&f);
    let app = app(&f);
    // every pair already has a verdict
    let (s, v) = get(&app, &format!("{P}/annotations/next?queue=pairs&annotator=alice")).await;
    assert_eq!(s, StatusCode::NO_CONTENT, "{v}");
    let (s, _) = get(&app, &format!("{P}/annotations/next?queue=nonsense&annotator=alice")).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn leases_are_exclusive() {
    let f = Fixture::new();
    audit_project(&f);
    let app = app(&f);
    let next = |who: &str| format!("{P}/annotations/next?queue=audit:s1:a&annotator={who}");
    let (s, first) = get(&app, &next("alice")).await;
    assert_eq!(s, StatusCode::OK, "{first}");
    let item = first["item"].as_str().unwrap().to_string();
    // alice asking again gets the same item
    assert_eq!(get(&app, &next("alice")).await.1["item"], item.as_str());

    // carol is not bound to pass a yet, but alice holds the lease
    let label = |who: &str, image: &str| json!({ "annotator": who, "pass": "a", "image_id": image, "value": "1" });
    let (s, v) = post(&app, &format!("{P}/audit/sessions/s1/labels"), label("carol", &item)).await;
    assert_eq!(s, StatusCode::CONFLICT, "{v}");
    assert_eq!(v["error"], "LEASE_NOT_HELD");

    let (s, v) = post(&app, &format!("{P}/audit/sessions/s1/labels"), label("alice", &item)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["remaining"], 3);
    let (_, second) = get(&app, &next("alice")).await;
    assert_ne!(second["item"], item.as_str());
}

#[tokio::test]
async fn passes_stay_independent_while_open() {
    let f = Fixture::new();
    audit_project(&f);
    let app = app(&f);
    let labels_uri = format!("{P}/audit/sessions/s1/labels");
    let ids = ["000001.jpg", "000002.jpg", "000005.jpg", "000006.jpg"];
    for id in ids {
        let (s, v) = post(&app, &labels_uri, json!({ "annotator": "alice", "pass": "a", "image_id": id, "value": "1" })).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        assert!(v.get("pass_b").is_none());
    }
    let b_value = |id: &str| if id == "000002.jpg" { "-1" } else { "1" };
    for id in &ids[..2] {
        post(&app, &labels_uri, json!({ "annotator": "bob", "pass": "b", "image_id": id, "value": b_value(id) })).await;
    }
    // alice is bound to pass a
    let (s, v) = post(&app, &labels_uri, json!({ "annotator": "alice", "pass": "b", "image_id": "000005.jpg", "value": "1" })).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"], "ANNOTATOR_BOUND");

    let (s, v) = get(&app, &format!("{P}/audit/sessions/s1?annotator=bob")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["own_pass"], "b");
    assert_eq!(v["labels"].as_object().unwrap().len(), 2);
    assert!(v.get("pass_a").is_none() && v.get("consensus").is_none(), "{v}");
    let text = v.to_string();
    assert!(!text.contains("\"000005.jpg\""), "pass a leaked: {text}");

    // reconciliation before pass b is complete is refused
    let (s, v) = post(&app, &format!("{P}/audit/sessions/s1/reconcile"), json!({})).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"], "PASSES_INCOMPLETE");
    for id in &ids[2..] {
        post(&app, &labels_uri, json!({ "annotator": "bob", "pass": "b", "image_id": id, "value": "1" })).await;
    }
    let (s, v) = post(&app, &format!("{P}/audit/sessions/s1/reconcile"), json!({})).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["disagreements"], json!(["000002.jpg"]));

    let (s, v) = post(&app, &format!("{P}/audit/sessions/s1/close"), json!({})).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"], "UNRESOLVED_DISAGREEMENTS");
    assert_eq!(v["ids"], json!(["000002.jpg"]));

    let (s, _) = post(&app, &format!("{P}/audit/sessions/s1/resolve"), json!({ "image_id": "000002.jpg", "value": "1" })).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(post(&app, &format!("{P}/audit/sessions/s1/close"), json!({})).await.0, StatusCode::OK);

    let (_, v) = get(&app, &format!("{P}/audit/sessions/s1")).await;
    assert_eq!(v["status"], "CLOSED");
    assert_eq!(v["pass_b"]["000002.jpg"], "FALSE");
    assert_eq!(v["consensus"]["000002.jpg"], "TRUE");
    // no more work once closed
    let (s, _) = get(&app, &format!("{P}/annotations/next?queue=audit:s1:a&annotator=alice")).await;
    assert_eq!(s, StatusCode::NO_CONTENT);

    let (s, v) = get(&app, &format!("{P}/reports/errors")).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["rows"][0]["positive"]["errors"], 0);
}

#[tokio::test]
async fn annotations_and_reports() {
    let f = Fixture::new();
    confirmed_project(&f);
    let app = app(&f);
    let uri = format!("{P}/annotations");
    let (s, v) = post(&app, &uri, json!({ "image_id": "000003.jpg", "attribute": "B", "value": "-1", "annotator": "alice" })).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["applied"]["source"], "alice");
    let (s, _) = post(&app, &uri, json!({ "image_id": "000008.jpg", "value": "unusable", "annotator": "alice" })).await;
    assert_eq!(s, StatusCode::OK);
    let (s, v) = post(&app, &uri, json!({ "image_id": "nope.jpg", "attribute": "B", "value": "1", "annotator": "alice" })).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "UNKNOWN_IMAGE");

    let (s, v) = get(&app, &format!("{P}/reports/pin?exclude=Blurry")).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let names: Vec<&str> = v["rows"].as_array().unwrap().iter().map(|r| r["attribute"].as_str().unwrap()).collect();
    assert!(!names.contains(&"Blurry"));
}
