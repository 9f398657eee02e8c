mod common;

use axum::http::StatusCode;
use common::{brush, FakeBackend, Harness};
use dial_core::dial::{RoundStatus, Workspace};
use dial_core::{LabelMask, Palette, RgbImage};
use serde_json::json;

#[tokio::test]
async fn slides_tiles_and_bounds() {
    let h = Harness::new(FakeBackend::instant());
    let slides = h.send("GET", "/slides", None).await.json();
    let slides = slides.as_array().unwrap();
    assert_eq!(
        slides.len(),
        h.app.workspace().corpus().train.len() + h.app.workspace().corpus().test.len()
    );
    assert!(slides.iter().any(|s| s["split"] == "test"));

    let id = h.train_slide();
    let meta = h.send("GET", &format!("/slides/{id}/meta"), None).await;
    assert_eq!(meta.status, StatusCode::OK);
    assert_eq!(meta.json()["manifest"]["tile_size"], 256);

    let tile = h
        .send("GET", &format!("/slides/{id}/tile/0/0/0"), None)
        .await;
    assert_eq!(tile.status, StatusCode::OK);
    assert_eq!(tile.headers["content-type"], "image/png");
    let img = RgbImage::decode_png(&tile.body).unwrap();
    assert_eq!(img.dims(), (256, 256));

    // 1024 px at 5x is 256 px: one tile.
    assert_eq!(
        h.send("GET", &format!("/slides/{id}/tile/2/0/1"), None)
            .await
            .status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        h.send("GET", &format!("/slides/{id}/tile/0/4/0"), None)
            .await
            .status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        h.send("GET", &format!("/slides/{id}/tile/3/0/0"), None)
            .await
            .status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        h.send("GET", "/slides/nope/tile/0/0/0", None).await.status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        h.send("GET", "/slides/nope/meta", None).await.status,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn train_is_exclusive_and_moves_the_round() {
    let (backend, gate) = FakeBackend::gated();
    let h = Harness::new(backend);
    let cur = h.send("GET", "/rounds/current", None).await.json();
    assert_eq!(cur["state"]["status"], "awaiting_training");
    assert_eq!(cur["busy"], false);

    let r = h.send("POST", "/rounds/train", None).await;
    assert_eq!(r.status, StatusCode::ACCEPTED);
    let job = r.job_id();
    assert_eq!(
        h.send("POST", "/rounds/train", None).await.status,
        StatusCode::CONFLICT
    );
    assert_eq!(
        h.send(
            "POST",
            "/rounds/finetune",
            Some(json!({"weighting": "double"}))
        )
        .await
        .status,
        StatusCode::CONFLICT
    );
    assert_eq!(
        h.send("GET", "/rounds/current", None).await.json()["busy"],
        true
    );

    gate.send(true).unwrap();
    let done = h.wait_job(job).await;
    assert_eq!(done.status, dial_service::jobs::JobStatus::Done);
    let cur = h.send("GET", "/rounds/current", None).await.json();
    assert_eq!(cur["state"]["status"], "awaiting_correction");
    assert_eq!(cur["state"]["active"], "Model1");
    assert_eq!(cur["next_round"], 1);
    assert_eq!(
        h.send("POST", "/rounds/train", None).await.status,
        StatusCode::CONFLICT
    );

    let jobs = h.send("GET", "/jobs", None).await.json();
    assert_eq!(jobs.as_array().unwrap().len(), 1);
    assert_eq!(
        h.send("GET", &format!("/jobs/{job}"), None).await.json()["kind"],
        "train"
    );
    assert_eq!(
        h.send("GET", "/jobs/99", None).await.status,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn failed_training_leaves_state_alone() {
    let (backend, gate) = FakeBackend::gated();
    let h = Harness::new(backend);
    let job = h.send("POST", "/rounds/train", None).await.job_id();
    gate.send(false).unwrap();
    let j = h.wait_job(job).await;
    assert_eq!(j.status, dial_service::jobs::JobStatus::Failed);
    assert!(j.error.is_some());
    assert_eq!(h.app.state().status, RoundStatus::AwaitingTraining);
    assert_eq!(
        h.send("POST", "/rounds/train", None).await.status,
        StatusCode::ACCEPTED
    );
}

async fn trained() -> Harness {
    let h = Harness::new(FakeBackend::instant());
    let job = h.send("POST", "/rounds/train", None).await.job_id();
    h.wait_job(job).await;
    h
}

#[tokio::test]
async fn correction_errors() {
    let h = Harness::new(FakeBackend::instant());
    let id = h.train_slide();
    let body = json!({ "strokes": [brush(1, 10.0, 10.0, 3.0)] });
    // Nothing to correct before the first model exists.
    assert_eq!(
        h.send("POST", &format!("/corrections/{id}"), Some(body.clone()))
            .await
            .status,
        StatusCode::CONFLICT
    );
    let job = h.send("POST", "/rounds/train", None).await.job_id();
    h.wait_job(job).await;

    assert_eq!(
        h.send("POST", "/corrections/nope", Some(body.clone()))
            .await
            .status,
        StatusCode::NOT_FOUND
    );
    let test = h.test_slide();
    assert_eq!(
        h.send("POST", &format!("/corrections/{test}"), Some(body.clone()))
            .await
            .status,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    for bad in [
        json!({ "strokes": [brush(9, 1.0, 1.0, 1.0)] }),
        json!({ "strokes": [{ "type": "polygon", "class_id": 1, "points": [[0, 0], [5, 5]] }] }),
        json!({ "strokes": [{ "type": "brush", "class_id": 1, "brush_radius": -1, "points": [[0, 0]] }] }),
        json!({ "strokes": [{ "type": "lasso", "class_id": 1, "points": [[0, 0]] }] }),
        json!({ "strokes": [] }),
        json!({ "undo": [42] }),
    ] {
        let r = h
            .send("POST", &format!("/corrections/{id}"), Some(bad.clone()))
            .await;
        assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY, "{bad}");
    }
    let r = h
        .send_raw("POST", &format!("/corrections/{id}"), "{not json")
        .await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);

    let ok = h
        .send("POST", &format!("/corrections/{id}"), Some(body))
        .await;
    assert_eq!(ok.status, StatusCode::OK);
    assert_eq!(ok.json()["ids"], json!([0]));
    assert_eq!(ok.json()["round"], 1);
}

#[tokio::test]
async fn strokes_undo_and_listing() {
    let h = trained().await;
    let id = h.train_slide();
    let uri = format!("/corrections/{id}");
    let a = h
        .send(
            "POST",
            &uri,
            Some(json!({ "strokes": [brush(1, 5.0, 5.0, 2.0), brush(2, 50.0, 50.0, 2.0)] })),
        )
        .await;
    assert_eq!(a.json()["ids"], json!([0, 1]));
    let b = h.send("POST", &uri, Some(json!({ "undo": [0] }))).await;
    assert_eq!(b.status, StatusCode::OK);
    let listed = h.send("GET", &uri, None).await.json();
    let strokes = listed["strokes"].as_array().unwrap();
    assert_eq!(strokes.len(), 1);
    assert_eq!(strokes[0]["id"], 1);
    assert_eq!(strokes[0]["stroke"]["class_id"], 2);
    // Undoing twice is rejected.
    assert_eq!(
        h.send("POST", &uri, Some(json!({ "undo": [0] })))
            .await
            .status,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    let cur = h.send("GET", "/rounds/current", None).await.json();
    assert_eq!(cur["strokes"][&id], 1);
}

#[tokio::test]
async fn overlay_etag_and_stroke_round_trip() {
    let h = trained().await;
    let id = h.train_slide();
    let uri = format!("/slides/{id}/overlay/1/0/0/0?alpha=1");
    let first = h.send("GET", &uri, None).await;
    assert_eq!(first.status, StatusCode::OK);
    let etag = first.headers["etag"].to_str().unwrap().to_string();
    let again = h
        .send_with("GET", &uri, None, &[("if-none-match", &etag)])
        .await;
    assert_eq!(again.status, StatusCode::NOT_MODIFIED);
    assert!(again.body.is_empty());

    // A class-5 disk at (100, 120) shows up in the round-1 overlay at 20x.
    let r = h
        .send(
            "POST",
            &format!("/corrections/{id}"),
            Some(json!({ "strokes": [brush(5, 100.0, 120.0, 4.0)] })),
        )
        .await;
    assert_eq!(r.status, StatusCode::OK);
    let after = h
        .send_with("GET", &uri, None, &[("if-none-match", &etag)])
        .await;
    assert_eq!(after.status, StatusCode::OK);
    assert_ne!(after.headers["etag"].to_str().unwrap(), etag);
    let img = RgbImage::decode_png(&after.body).unwrap();
    let cartilage = Palette::default().0[5];
    assert_eq!(img.pixel(100, 120), cartilage);
    assert_eq!(img.pixel(104, 120), cartilage);
    let before = RgbImage::decode_png(&first.body).unwrap();
    assert_eq!(img.pixel(105, 120), before.pixel(105, 120));

    // Different alpha is a different resource.
    let half = h
        .send(
            "GET",
            &format!("/slides/{id}/overlay/1/0/0/0?alpha=0.5"),
            None,
        )
        .await;
    assert_ne!(half.headers["etag"], after.headers["etag"]);
    assert_eq!(
        h.send(
            "GET",
            &format!("/slides/{id}/overlay/1/0/0/0?alpha=2"),
            None
        )
        .await
        .status,
        StatusCode::UNPROCESSABLE_ENTITY
    );

    // Predictions and round 0 are served; future rounds are not.
    assert_eq!(
        h.send("GET", &format!("/slides/{id}/overlay/pred/1/0/0"), None)
            .await
            .status,
        StatusCode::OK
    );
    assert_eq!(
        h.send("GET", &format!("/slides/{id}/overlay/0/0/0/0"), None)
            .await
            .status,
        StatusCode::OK
    );
    assert_eq!(
        h.send("GET", &format!("/slides/{id}/overlay/2/0/0/0"), None)
            .await
            .status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        h.send("GET", &format!("/slides/{id}/overlay/x/0/0/0"), None)
            .await
            .status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        h.send("GET", &format!("/slides/{id}/overlay/1/0/9/0"), None)
            .await
            .status,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn prediction_overlay_needs_a_model() {
    let h = Harness::new(FakeBackend::instant());
    let id = h.train_slide();
    assert_eq!(
        h.send("GET", &format!("/slides/{id}/overlay/pred/0/0/0"), None)
            .await
            .status,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn finetune_writes_round_masks() {
    let h = trained().await;
    let id = h.train_slide();
    assert_eq!(
        h.send(
            "POST",
            "/rounds/finetune",
            Some(json!({"weighting": "double"}))
        )
        .await
        .status,
        StatusCode::CONFLICT
    );
    assert_eq!(
        h.send(
            "POST",
            "/rounds/finetune",
            Some(json!({"weighting": "triple"}))
        )
        .await
        .status,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    let square = json!({ "type": "polygon", "class_id": 2, "points": [[10, 10], [20, 10], [20, 20], [10, 20]] });
    h.send(
        "POST",
        &format!("/corrections/{id}"),
        Some(json!({ "strokes": [square] })),
    )
    .await;
    let r = h
        .send(
            "POST",
            "/rounds/finetune",
            Some(json!({"weighting": "single"})),
        )
        .await;
    assert_eq!(r.status, StatusCode::ACCEPTED);
    h.wait_job(r.job_id()).await;

    let ws = h.app.workspace();
    let mask = LabelMask::load(&ws.mask_path(&id, 1), &id).unwrap();
    assert_eq!(mask.round, 1);
    assert_eq!(mask.labeled_count(), 100);
    assert_eq!(mask.class_counts()[2], 100);
    // Slides without strokes get no mask for the round.
    let other = &ws.corpus().train[1].slide_id;
    assert!(!ws.mask_path(other, 1).exists());

    let st = h.app.state();
    assert_eq!(st.round_index, 1);
    assert_eq!(st.active.as_deref(), Some("Model2"));
    assert_eq!(st.corrections.len(), 1);
    assert_eq!(st.corrections[0].pixels(), 100);
    let cur = h.send("GET", "/rounds/current", None).await.json();
    assert_eq!(cur["next_round"], 2);
    assert_eq!(cur["strokes"], json!({}));

    // The round-1 overlay now comes from disk, and round 2 is open.
    assert_eq!(
        h.send("GET", &format!("/slides/{id}/overlay/2/0/0/0"), None)
            .await
            .status,
        StatusCode::OK
    );
}

#[tokio::test]
async fn sibling_finetune_from_the_previous_round() {
    let h = trained().await;
    let id = h.train_slide();
    h.send(
        "POST",
        &format!("/corrections/{id}"),
        Some(json!({ "strokes": [brush(1, 30.0, 30.0, 5.0)] })),
    )
    .await;
    let a = h
        .send(
            "POST",
            "/rounds/finetune",
            Some(json!({"weighting": "single", "tag": "Model2a"})),
        )
        .await;
    h.wait_job(a.job_id()).await;
    let b = h
        .send(
            "POST",
            "/rounds/finetune",
            Some(json!({"weighting": "double", "parent": "Model1", "tag": "Model2b"})),
        )
        .await;
    assert_eq!(b.status, StatusCode::ACCEPTED);
    h.wait_job(b.job_id()).await;
    let st = h.app.state();
    let tags: Vec<_> = st.models.iter().map(|m| m.tag.as_str()).collect();
    assert_eq!(tags, ["Model1", "Model2a", "Model2b"]);
    assert_eq!(
        st.model("Model2b").unwrap().parent.as_deref(),
        Some("Model1")
    );
    assert_eq!(st.round_index, 1);

    // Model2a is from round 1, so it cannot sibling another round-1 model.
    let c = h
        .send(
            "POST",
            "/rounds/finetune",
            Some(json!({"weighting": "double", "parent": "Model2a"})),
        )
        .await;
    assert_eq!(c.status, StatusCode::CONFLICT);
    let d = h
        .send(
            "POST",
            "/rounds/finetune",
            Some(json!({"weighting": "double", "parent": "Model1", "tag": "Model2a"})),
        )
        .await;
    assert_eq!(d.status, StatusCode::CONFLICT);
    let e = h
        .send(
            "POST",
            "/rounds/finetune",
            Some(json!({"weighting": "double", "parent": "Nope"})),
        )
        .await;
    assert_eq!(e.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn satisfy_rules() {
    let h = trained().await;
    let id = h.train_slide();
    let uri = format!("/corrections/{id}");
    h.send(
        "POST",
        &uri,
        Some(json!({ "strokes": [brush(1, 30.0, 30.0, 5.0)] })),
    )
    .await;
    assert_eq!(
        h.send("POST", "/rounds/satisfy", None).await.status,
        StatusCode::CONFLICT
    );
    h.send("POST", &uri, Some(json!({ "undo": [0] }))).await;
    let r = h.send("POST", "/rounds/satisfy", None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["status"], "satisfied");
    assert_eq!(
        h.send("POST", "/rounds/satisfy", None).await.status,
        StatusCode::CONFLICT
    );
    assert_eq!(
        h.send(
            "POST",
            &uri,
            Some(json!({ "strokes": [brush(1, 3.0, 3.0, 1.0)] }))
        )
        .await
        .status,
        StatusCode::CONFLICT
    );
    // Satisfaction is persisted.
    let ws = Workspace::open(h.dir.path()).unwrap();
    assert_eq!(ws.load_state().unwrap().status, RoundStatus::Satisfied);
}

#[tokio::test]
async fn assessment_report() {
    let h = Harness::new(FakeBackend::instant());
    assert_eq!(
        h.send("GET", "/assess/report", None).await.status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        h.send("POST", "/assess", None).await.status,
        StatusCode::CONFLICT
    );
    let job = h.send("POST", "/rounds/train", None).await.job_id();
    h.wait_job(job).await;
    let r = h.send("POST", "/assess", None).await;
    assert_eq!(r.status, StatusCode::ACCEPTED);
    h.wait_job(r.job_id()).await;
    let rep = h.send("GET", "/assess/report", None).await;
    assert_eq!(rep.status, StatusCode::OK);
    assert_eq!(rep.json()["comparison"]["rows"][0]["model_id"], "Model1");
}
