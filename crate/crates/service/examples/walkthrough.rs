//! One round of the interactive loop driven through the HTTP API, in
//! process: train, paint corrections, finetune, compare.
//!
//! A tiny network and a few epochs per stage keep it to a minute or two,
//! so the error rates it prints say little about the method.
//!
//! cargo run --release -p dial-service --example walkthrough -- [workdir]

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use dial_core::dial::{generate_corpus, CorpusSpec, DialConfig, Workspace};
use dial_core::dmmn::DmmnConfig;
use dial_service::app::{router, App};
use dial_service::backend::EngineBackend;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(r: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let body = body.map_or_else(Body::empty, |v| Body::from(v.to_string()));
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .body(body)
        .unwrap();
    let resp = r.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (
        status,
        resp.into_body()
            .collect()
            .await
            .unwrap()
            .to_bytes()
            .to_vec(),
    )
}

async fn json(r: &Router, method: &str, uri: &str, body: Option<Value>) -> Value {
    let (status, bytes) = call(r, method, uri, body).await;
    let v: Value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    println!("{method} {uri} -> {status}");
    v
}

async fn wait(r: &Router, job: &Value) {
    let uri = format!("/jobs/{}", job["job_id"]);
    let mut shown = 0;
    loop {
        let (_, bytes) = call(r, "GET", &uri, None).await;
        let j: Value = serde_json::from_slice(&bytes).unwrap();
        let log = j["log"].as_array().cloned().unwrap_or_default();
        for line in log.iter().skip(shown) {
            println!("    {}", line.as_str().unwrap_or_default());
        }
        shown = log.len();
        match j["status"].as_str() {
            Some("done") => return,
            Some("failed") => panic!("job failed: {}", j["error"]),
            _ => tokio::time::sleep(Duration::from_millis(200)).await,
        }
    }
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::path::PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "walkthrough-ws".into()),
    );
    if dir.exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    let corpus = generate_corpus(&CorpusSpec {
        train_cases: 2,
        test_cases: 2,
        slide_size: 1024,
        ..CorpusSpec::new(3)
    })?;
    let mut cfg = DialConfig::new(DmmnConfig::tiny(3), 3);
    cfg.initial.epochs = 4;
    cfg.finetune.epochs = 2;
    cfg.initial.batch_size = 1;
    cfg.finetune.batch_size = 1;
    let ws = Workspace::create(&dir, cfg, &corpus)?;
    let app = App::open(ws, Arc::new(EngineBackend))?;
    let r = router(app);

    let slides = json(&r, "GET", "/slides", None).await;
    let train_id = slides
        .as_array()
        .unwrap()
        .iter()
        .find(|s| s["split"] == "train")
        .map(|s| s["slide_id"].as_str().unwrap().to_string())
        .unwrap();
    println!("  first training slide: {train_id}");

    let job = json(&r, "POST", "/rounds/train", None).await;
    wait(&r, &job).await;
    let current = json(&r, "GET", "/rounds/current", None).await;
    println!(
        "  status {} active {} next round {}",
        current["state"]["status"], current["state"]["active"], current["next_round"]
    );

    // A cartilage brush stroke and a necrosis polygon, then undo the brush.
    let strokes = json!({ "strokes": [
        { "type": "brush", "class_id": 5, "brush_radius": 12.0, "points": [[100.0, 100.0], [300.0, 120.0]] },
        { "type": "polygon", "class_id": 2, "points": [[500.0, 500.0], [700.0, 520.0], [620.0, 700.0]] }
    ]});
    let ack = json(
        &r,
        "POST",
        &format!("/corrections/{train_id}"),
        Some(strokes),
    )
    .await;
    println!("  {ack}");
    json(
        &r,
        "POST",
        &format!("/corrections/{train_id}"),
        Some(json!({ "undo": [ack["ids"][0]] })),
    )
    .await;

    let (status, png) = call(
        &r,
        "GET",
        &format!("/slides/{train_id}/overlay/1/2/0/0?alpha=0.6"),
        None,
    )
    .await;
    println!("  round-1 overlay tile: {status}, {} bytes", png.len());
    std::fs::write(dir.join("overlay-round1.png"), png)?;

    let job = json(
        &r,
        "POST",
        "/rounds/finetune",
        Some(json!({ "weighting": "double" })),
    )
    .await;
    wait(&r, &job).await;

    let job = json(&r, "POST", "/assess", None).await;
    wait(&r, &job).await;
    let report = json(&r, "GET", "/assess/report", None).await;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
