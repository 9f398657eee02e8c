#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use axum::body::Body;
use axum::http::{HeaderMap, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use tower::ServiceExt;

use dial_core::dial::{
    generate_corpus, write_atomic, CorpusSpec, CorrectionPolicy, DataPart, DialConfig,
    FinetuneOptions, ModelEntry, Progress, RoundState, RoundStatus, Workspace,
};
use dial_core::dmmn::TrainHistory;
use dial_core::inference::SegmentationMap;
use dial_core::patch::LossWeights;
use dial_core::{DialError, LabelRaster, Result};

use dial_service::app::{router, App};
use dial_service::backend::Backend;
use dial_service::jobs::Job;

/// Copies a once-generated small corpus into `dir`.
pub fn small_workspace(dir: &Path) -> Workspace {
    static TEMPLATE: OnceLock<PathBuf> = OnceLock::new();
    let src = TEMPLATE.get_or_init(|| {
        let root =
            std::env::temp_dir().join(format!("dial-service-template-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&root);
        let spec = CorpusSpec {
            train_cases: 2,
            test_cases: 1,
            slide_size: 1024,
            ..CorpusSpec::new(5)
        };
        Workspace::create(
            &root,
            DialConfig::test_scale(5),
            &generate_corpus(&spec).unwrap(),
        )
        .unwrap();
        root
    });
    copy_dir(src, dir);
    Workspace::open(dir).unwrap()
}

fn copy_dir(src: &Path, dst: &Path) {
    std::fs::create_dir_all(dst).unwrap();
    for e in std::fs::read_dir(src).unwrap() {
        let e = e.unwrap();
        let to = dst.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &to);
        } else {
            std::fs::copy(e.path(), to).unwrap();
        }
    }
}

/// Stands in for training. Each call blocks until the test releases it,
/// then either fails or records a model whose predictions are all class 0.
pub struct FakeBackend {
    gate: Option<Mutex<Receiver<bool>>>,
}

impl FakeBackend {
    pub fn instant() -> Arc<FakeBackend> {
        Arc::new(FakeBackend { gate: None })
    }

    pub fn gated() -> (Arc<FakeBackend>, Sender<bool>) {
        let (tx, rx) = channel();
        (
            Arc::new(FakeBackend {
                gate: Some(Mutex::new(rx)),
            }),
            tx,
        )
    }

    fn wait(&self) -> Result<()> {
        match &self.gate {
            None => Ok(()),
            Some(rx) => match rx.lock().unwrap().recv_timeout(Duration::from_secs(30)) {
                Ok(true) => Ok(()),
                _ => Err(DialError::InvalidConfig("released with failure".into())),
            },
        }
    }
}

fn entry(state: &RoundState, tag: String, round: usize, parent: Option<&ModelEntry>) -> ModelEntry {
    let hash = format!("{:064x}", state.models.len() + 1);
    let mut lineage = parent.map(|p| p.lineage.clone()).unwrap_or_default();
    lineage.push(hash.clone());
    let mut composition = parent.map(|p| p.composition.clone()).unwrap_or_default();
    composition.push(DataPart {
        round,
        policy: None,
    });
    ModelEntry {
        tag,
        hash,
        parent: parent.map(|p| p.tag.clone()),
        parent_hash: parent.map(|p| p.hash.clone()),
        round,
        policy: None,
        learning_rate: 0.0,
        epochs: 0,
        composition,
        round_patches: 0,
        round_counts: [0; 7],
        cumulative_counts: [0; 7],
        weights: LossWeights::uniform(),
        train_patches: 0,
        val_patches: 0,
        val_cases: Vec::new(),
        history: TrainHistory::default(),
        lineage,
    }
}

fn write_predictions(ws: &Workspace, m: &ModelEntry) -> Result<()> {
    for s in &ws.corpus().train {
        let (w, h) = ws.slide_dims(&s.slide_id)?;
        let map = SegmentationMap::new(
            s.slide_id.clone(),
            m.hash.clone(),
            LabelRaster::new(w, h, 0),
        )?;
        let path = ws.prediction_path(&m.tag, &s.slide_id);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        map.save(&path)?;
    }
    Ok(())
}

fn commit(ws: &Workspace, mut state: RoundState, m: ModelEntry) -> Result<RoundState> {
    write_predictions(ws, &m)?;
    state.lineage = m.lineage.clone();
    state.active = Some(m.tag.clone());
    state.round_index = m.round;
    state.status = RoundStatus::AwaitingCorrection;
    state.pending = None;
    state.models.push(m);
    ws.save_state(&state)?;
    Ok(state)
}

impl Backend for FakeBackend {
    fn initial(
        &self,
        ws: &Workspace,
        state: RoundState,
        progress: &mut Progress,
    ) -> Result<RoundState> {
        progress(0.5, "fake training");
        self.wait()?;
        state.check_status(RoundStatus::AwaitingTraining, "train")?;
        let m = entry(&state, "Model1".into(), 0, None);
        commit(ws, state, m)
    }

    fn finetune(
        &self,
        ws: &Workspace,
        state: RoundState,
        _policy: CorrectionPolicy,
        opts: &FinetuneOptions,
        progress: &mut Progress,
    ) -> Result<RoundState> {
        progress(0.5, "fake finetuning");
        self.wait()?;
        let (k, parent) = match (state.pending, &opts.parent) {
            (Some(k), p) => (k, p.clone().or(state.active.clone()).unwrap()),
            (None, Some(p)) => (state.round_index, p.clone()),
            (None, None) => return Err(DialError::RoundState("nothing to finetune on".into())),
        };
        let parent = state.require_model(&parent)?.clone();
        if parent.round + 1 != k {
            return Err(DialError::RoundState("parent from the wrong round".into()));
        }
        let tag = opts.tag.clone().unwrap_or_else(|| state.fresh_tag(k));
        let m = entry(&state, tag, k, Some(&parent));
        commit(ws, state, m)
    }

    fn assess(&self, ws: &Workspace, state: &RoundState, _progress: &mut Progress) -> Result<()> {
        let rows: Vec<_> = state
            .models
            .iter()
            .map(|m| serde_json::json!({ "model_id": m.tag, "model_hash": m.hash, "error_rate": 0.1 }))
            .collect();
        write_atomic(
            &ws.root().join("reports").join("comparison.json"),
            serde_json::to_string(&serde_json::json!({ "rows": rows }))
                .unwrap()
                .as_bytes(),
        )
    }
}

pub struct Harness {
    pub app: Arc<App>,
    pub router: Router,
    pub dir: tempfile::TempDir,
}

impl Harness {
    pub fn new(backend: Arc<FakeBackend>) -> Harness {
        let dir = tempfile::tempdir().unwrap();
        let ws = small_workspace(dir.path());
        Harness::open(dir, ws, backend)
    }

    pub fn open(dir: tempfile::TempDir, ws: Workspace, backend: Arc<FakeBackend>) -> Harness {
        let app = App::open(ws, backend).unwrap();
        Harness {
            router: router(Arc::clone(&app)),
            app,
            dir,
        }
    }

    pub fn train_slide(&self) -> String {
        self.app.workspace().corpus().train[0].slide_id.clone()
    }

    pub fn test_slide(&self) -> String {
        self.app.workspace().corpus().test[0].slide_id.clone()
    }

    pub async fn send(&self, method: &str, uri: &str, body: Option<serde_json::Value>) -> Reply {
        self.send_with(method, uri, body, &[]).await
    }

    pub async fn send_with(
        &self,
        method: &str,
        uri: &str,
        body: Option<serde_json::Value>,
        headers: &[(&str, &str)],
    ) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        let resp = self
            .router
            .clone()
            .oneshot(req.body(body).unwrap())
            .await
            .unwrap();
        let status = resp.status();
        let headers = resp.headers().clone();
        let body = resp
            .into_body()
            .collect()
            .await
            .unwrap()
            .to_bytes()
            .to_vec();
        Reply {
            status,
            headers,
            body,
        }
    }

    pub async fn send_raw(&self, method: &str, uri: &str, body: &str) -> Reply {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(Body::from(body.to_string()))
            .unwrap();
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let headers = resp.headers().clone();
        let body = resp
            .into_body()
            .collect()
            .await
            .unwrap()
            .to_bytes()
            .to_vec();
        Reply {
            status,
            headers,
            body,
        }
    }

    pub async fn wait_job(&self, id: u64) -> Job {
        for _ in 0..3000 {
            let j = self.app.jobs().get(id).unwrap();
            if j.status.is_terminal() {
                return j;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        panic!("job {id} never finished");
    }
}

#[derive(Debug)]
pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| {
            panic!("{e}: {}", String::from_utf8_lossy(&self.body));
        })
    }

    pub fn job_id(&self) -> u64 {
        self.json()["job_id"].as_u64().unwrap()
    }
}

pub fn brush(class_id: u8, x: f64, y: f64, r: f64) -> serde_json::Value {
    serde_json::json!({ "type": "brush", "class_id": class_id, "brush_radius": r, "points": [[x, y]] })
}
