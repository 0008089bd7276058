use std::path::{Path, PathBuf};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rfbn_core::features::{Feature, FeatureTable, FeatureVector, N_FEATURES};
use rfbn_core::lightcurve::{fold, load_manifest, load_unlabeled_manifest, read_lightcurve, Band};
use rfbn_core::pipeline::{read_labels, replay, OutlierConfig, RunStore};
use rfbn_core::synthetic::write_curve_fixture;
use rfbn_triage::{router, ServiceConfig, TOKEN_HEADER};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    _dir: tempfile::TempDir,
    runs: PathBuf,
    train_run: String,
    score_run: String,
    /// Object whose period feature was made invalid before scoring.
    no_period: String,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let fx = write_curve_fixture(&dir.path().join("fx"), 12, 60, 21).unwrap();
    let runs = dir.path().join("runs");
    let store = RunStore::open(&runs).unwrap();
    let mut cfg = OutlierConfig::default();
    cfg.forest.n_trees = 60;
    let training = FeatureTable::from_manifest(&load_manifest(&fx.training_manifest).unwrap(), &Default::default()).unwrap();
    let train = store.train(&training, None, &cfg).unwrap();
    let mut survey =
        FeatureTable::from_manifest(&load_unlabeled_manifest(&fx.survey_manifest).unwrap(), &Default::default()).unwrap();
    let row = &mut survey.rows[4];
    let bits = row.features.mask_bits() & !(1 << Feature::Period as usize);
    row.features = FeatureVector::from_parts(*row.features.values(), bits);
    let no_period = row.object_id.clone();
    let input = dir.path().join("survey-features.csv");
    survey.write_path(&input).unwrap();
    let (score, _) = store.score(&train.run_id, &input, Band::Blue).unwrap();
    Fixture {
        runs,
        train_run: train.run_id,
        score_run: score.run_id,
        no_period,
        _dir: dir,
    }
}

fn app(runs: &Path, token: Option<&str>) -> Router {
    router(&ServiceConfig {
        runs_dir: runs.to_path_buf(),
        token: token.map(str::to_string),
    })
    .unwrap()
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    call_with(app, method, uri, body, None).await
}

async fn call_with(app: &Router, method: &str, uri: &str, body: Option<Value>, token: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(TOKEN_HEADER, t);
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&b).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

fn ranks(page: &Value) -> Vec<u64> {
    page["candidates"].as_array().unwrap().iter().map(|c| c["rank"].as_u64().unwrap()).collect()
}

fn ids(page: &Value) -> Vec<String> {
    page["candidates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["object_id"].as_str().unwrap().to_string())
        .collect()
}

async fn label(app: &Router, run: &str, id: &str, decision: &str) -> StatusCode {
    let uri = format!("/runs/{run}/candidates/{id}/label");
    call(app, "POST", &uri, Some(json!({ "decision": decision, "reviewer": "ana" }))).await.0
}

async fn wait_for(app: &Router, job: &str) -> Value {
    for _ in 0..600 {
        let (s, v) = call(app, "GET", &format!("/jobs/{job}"), None).await;
        assert_eq!(s, StatusCode::OK);
        if v["status"] == "done" || v["status"] == "failed" {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("job {job} did not finish");
}

#[tokio::test]
async fn lists_runs() {
    let fx = fixture();
    let app = app(&fx.runs, None);
    let (s, v) = call(&app, "GET", "/runs", None).await;
    assert_eq!(s, StatusCode::OK);
    let listed: Vec<&str> = v.as_array().unwrap().iter().map(|r| r["run_id"].as_str().unwrap()).collect();
    assert_eq!(listed, [fx.train_run.as_str(), fx.score_run.as_str()]);
    assert_eq!(v[1]["kind"], "score");
}

#[tokio::test]
async fn paginates_in_rank_order() {
    let fx = fixture();
    let app = app(&fx.runs, None);
    let base = format!("/runs/{}/candidates", fx.score_run);
    let (s, p1) = call(&app, "GET", &format!("{base}?page=1&size=7"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ranks(&p1), (1..=7).collect::<Vec<_>>());
    assert_eq!(p1["total"], 60);
    let (_, p2) = call(&app, "GET", &format!("{base}?page=2&size=7"), None).await;
    assert_eq!(ranks(&p2), (8..=14).collect::<Vec<_>>());
    let (_, last) = call(&app, "GET", &format!("{base}?page=9&size=7"), None).await;
    assert_eq!(ranks(&last), (57..=60).collect::<Vec<_>>());
    let (s, beyond) = call(&app, "GET", &format!("{base}?page=50&size=7"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(ranks(&beyond).is_empty());
    assert_eq!(beyond["total"], 60);
    let (_, default) = call(&app, "GET", &base, None).await;
    assert_eq!(ranks(&default), (1..=50).collect::<Vec<_>>());
    for bad in ["page=0", "size=0", "size=100000", "filter=bogus"] {
        let (s, v) = call(&app, "GET", &format!("{base}?{bad}"), None).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{bad}");
        assert_eq!(v["error"], "bad_request");
    }
    let (s, v) = call(&app, "GET", "/runs/score-000000000000/candidates", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "not_found");
}

#[tokio::test]
async fn labels_are_read_back_and_newest_wins() {
    let fx = fixture();
    let app = app(&fx.runs, None);
    let base = format!("/runs/{}/candidates", fx.score_run);
    let (_, top) = call(&app, "GET", &format!("{base}?size=10"), None).await;
    let top = ids(&top);
    for id in &top[..10] {
        assert_eq!(label(&app, &fx.score_run, id, "artifact:streak").await, StatusCode::CREATED);
    }
    let (_, unrev) = call(&app, "GET", &format!("{base}?filter=unreviewed&size=5"), None).await;
    assert_eq!(ranks(&unrev), (11..=15).collect::<Vec<_>>());
    assert_eq!(unrev["total"], 50);

    assert_eq!(label(&app, &fx.score_run, &top[0], "interesting").await, StatusCode::CREATED);
    assert_eq!(label(&app, &fx.score_run, &top[1], "skip").await, StatusCode::CREATED);
    let (_, arts) = call(&app, "GET", &format!("{base}?filter=artifact:streak"), None).await;
    assert_eq!(ids(&arts), top[2..10]);
    let (_, one) = call(&app, "GET", &format!("{base}?size=1"), None).await;
    assert_eq!(one["candidates"][0]["triage_label"], "interesting");
    let (_, detail) = call(&app, "GET", &format!("{base}/{}", top[2]), None).await;
    assert_eq!(detail["candidate"]["triage_label"], "artifact:streak");

    let (s, v) = call(&app, "POST", &format!("{base}/{}/label", top[3]), Some(json!({ "decision": "artifact:" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["message"].as_str().unwrap().contains("non-empty"));
    for body in [json!({ "decision": "maybe" }), json!({ "reviewer": "x" }), json!({ "decision": "interesting", "object_id": "other" })] {
        let (s, _) = call(&app, "POST", &format!("{base}/{}/label", top[3]), Some(body.clone())).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
    }
    assert_eq!(label(&app, &fx.score_run, "nobody", "interesting").await, StatusCode::NOT_FOUND);
    assert_eq!(label(&app, "score-000000000000", &top[0], "interesting").await, StatusCode::NOT_FOUND);

    let store = RunStore::open(&fx.runs).unwrap();
    let log = read_labels(&store.labels_path(&fx.score_run).unwrap()).unwrap();
    assert_eq!(log.len(), 12);
    assert!(log.iter().all(|l| l.reviewer == "ana" && l.run_id == fx.score_run));
    let state = replay(&log);
    let (_, all) = call(&app, "GET", &format!("{base}?size=100"), None).await;
    for c in all["candidates"].as_array().unwrap() {
        let expected = state.get(c["object_id"].as_str().unwrap()).map_or("unreviewed".to_string(), |s| s.to_string());
        assert_eq!(c["triage_label"], expected.as_str());
    }
}

#[tokio::test]
async fn detail_carries_curve_fold_and_votes() {
    let fx = fixture();
    let app = app(&fx.runs, None);
    let store = RunStore::open(&fx.runs).unwrap();
    let (_, cands) = store.candidates(&fx.score_run).unwrap();
    let c = cands.iter().find(|c| c.period.is_some()).unwrap();
    let (s, v) = call(&app, "GET", &format!("/runs/{}/candidates/{}", fx.score_run, c.object_id), None).await;
    assert_eq!(s, StatusCode::OK);
    let lc = read_lightcurve(c.path.as_ref().unwrap(), &c.object_id, c.band).unwrap();
    let folded = fold(&lc, c.period.unwrap(), None).unwrap();
    let phases: Vec<f64> = serde_json::from_value(v["folded"]["phases"].clone()).unwrap();
    assert_eq!(phases, folded.phases);
    let times: Vec<f64> = serde_json::from_value(v["curve"]["times"].clone()).unwrap();
    assert_eq!(times, lc.times());
    assert_eq!(v["invalid_period"], false);
    let votes: Vec<f64> = serde_json::from_value(v["candidate"]["votes"].clone()).unwrap();
    assert!((votes.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(v["candidate"]["features"].as_object().unwrap().len(), N_FEATURES);
    assert_eq!(v["candidate"]["score"].as_f64().unwrap(), c.score);

    let (s, v) = call(&app, "GET", &format!("/runs/{}/candidates/{}", fx.score_run, fx.no_period), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["invalid_period"], true);
    assert!(v["folded"].is_null());
    assert!(!v["curve"]["times"].as_array().unwrap().is_empty());

    let gone = cands.iter().find(|x| x.object_id != c.object_id).unwrap();
    let path = gone.path.clone().unwrap();
    std::fs::remove_file(&path).unwrap();
    let (s, v) = call(&app, "GET", &format!("/runs/{}/candidates/{}", fx.score_run, gone.object_id), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(v["message"].as_str().unwrap().contains(&*path.to_string_lossy()));
    let (s, _) = call(&app, "GET", &format!("/runs/{}/candidates/nobody", fx.score_run), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn token_is_required_when_configured() {
    let fx = fixture();
    let app = app(&fx.runs, Some("s3cret"));
    let (s, v) = call(&app, "GET", "/runs", None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert_eq!(v["error"], "unauthorized");
    let (s, _) = call_with(&app, "GET", "/runs", None, Some("wrong")).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = call_with(&app, "GET", "/runs", None, Some("s3cret")).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn retrain_jobs_run_one_at_a_time() {
    let fx = fixture();
    let app = app(&fx.runs, None);
    let base = format!("/runs/{}/candidates", fx.score_run);
    let (_, page) = call(&app, "GET", &format!("{base}?size=20"), None).await;
    let top = ids(&page);
    for id in &top[..10] {
        label(&app, &fx.score_run, id, "artifact:blob").await;
    }
    for id in &top[10..13] {
        label(&app, &fx.score_run, id, "artifact:tiny").await;
    }
    let retrain = format!("/runs/{}/retrain", fx.score_run);

    let (s, v) = call(&app, "POST", &retrain, Some(json!({ "groups": ["blob", "tiny"] }))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(v["message"].as_str().unwrap().contains("`tiny` has 3"), "{v}");
    let (s, v) = call(&app, "POST", &retrain, Some(json!({ "groups": ["ghost"] }))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(v["message"].as_str().unwrap().contains("`ghost` has 0"));
    let (s, _) = call(&app, "POST", &retrain, Some(json!({ "groups": [] }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", &retrain, Some(json!({}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", &format!("/runs/{}/retrain", fx.train_run), Some(json!({ "groups": ["blob"] }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, first) = call(&app, "POST", &retrain, Some(json!({ "groups": ["blob"] }))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(first["status"], "queued");
    let (_, second) = call(&app, "POST", &retrain, Some(json!({ "groups": ["blob"] }))).await;
    let (_, now) = call(&app, "GET", &format!("/jobs/{}", second["job_id"].as_str().unwrap()), None).await;
    assert_ne!(now["status"], "done");

    let a = wait_for(&app, first["job_id"].as_str().unwrap()).await;
    let b = wait_for(&app, second["job_id"].as_str().unwrap()).await;
    assert_eq!(a["status"], "done", "{a}");
    assert_eq!(b["status"], "done", "{b}");
    assert!(b["started_at"].as_str().unwrap() >= a["finished_at"].as_str().unwrap());
    assert_eq!(a["iteration"], 1);

    let store = RunStore::open(&fx.runs).unwrap();
    let old = store.info(&fx.score_run).unwrap();
    let new = store.info(a["result_run"].as_str().unwrap()).unwrap();
    assert_eq!(new.classes.len(), old.classes.len() + 1);
    assert_eq!(new.parent.as_deref(), Some(fx.score_run.as_str()));
    let (s, page) = call(&app, "GET", &format!("/runs/{}/candidates?size=5", new.run_id), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ranks(&page), [1, 2, 3, 4, 5]);
    let (s, _) = call(&app, "GET", "/jobs/job-999", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn reads_survive_restart_and_never_touch_candidates() {
    let fx = fixture();
    let csv = RunStore::open(&fx.runs).unwrap().run_dir(&fx.score_run).unwrap().join("candidates.csv");
    let before = std::fs::read(&csv).unwrap();
    let first = app(&fx.runs, None);
    let (_, page) = call(&first, "GET", &format!("/runs/{}/candidates?size=3", fx.score_run), None).await;
    let top = ids(&page);
    label(&first, &fx.score_run, &top[0], "known:sine").await;
    label(&first, &fx.score_run, &top[1], "interesting").await;
    let uris = [
        "/runs".to_string(),
        format!("/runs/{}/candidates?size=100", fx.score_run),
        format!("/runs/{}/candidates?filter=known", fx.score_run),
        format!("/runs/{}/candidates/{}", fx.score_run, top[0]),
    ];
    let mut seen = Vec::new();
    for u in &uris {
        seen.push(call(&first, "GET", u, None).await);
    }
    drop(first);
    let second = app(&fx.runs, None);
    for (u, expected) in uris.iter().zip(&seen) {
        assert_eq!(&call(&second, "GET", u, None).await, expected, "{u}");
    }
    assert_eq!(std::fs::read(&csv).unwrap(), before);
}
