//! Review-service fixtures shared by the service tests and the acceptance target.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use attnbench::attention::AttentionKind;
use attnbench::gradcam::{overlay_file_name, write_panel_index, Panel, PanelEntry};
use attnbench_cli::review::{router, ReviewState};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use tower::ServiceExt;

/// `n` panels of four overlays each; image files hold their own name as bytes.
pub fn panel_fixture(dir: &Path, n: usize) -> PathBuf {
    let panels: Vec<Panel> = (0..n)
        .map(|i| {
            let id = format!("sample_{i:02}");
            let entries = AttentionKind::ALL
                .iter()
                .enumerate()
                .map(|(k, kind)| PanelEntry {
                    model: kind.label().into(),
                    file: overlay_file_name(&id, kind.label()),
                    probability: 0.5 + 0.1 * k as f64,
                    class: i % 2,
                })
                .collect();
            Panel { sample_id: id.clone(), class: i % 2, input: overlay_file_name(&id, "input"), entries }
        })
        .collect();
    for p in &panels {
        for f in p.entries.iter().map(|e| &e.file).chain([&p.input]) {
            std::fs::write(dir.join(f), f.as_bytes()).unwrap();
        }
    }
    let index = dir.join("panels.jsonl");
    write_panel_index(&panels, &index).unwrap();
    index
}

pub fn app(index: &Path, store: &Path, visible: bool) -> Router {
    router(ReviewState::open(index, store, 17, visible).unwrap())
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<serde_json::Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let res = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

pub async fn json(app: &Router, uri: &str) -> serde_json::Value {
    let (status, body) = call(app, "GET", uri, None).await;
    assert_eq!(status, StatusCode::OK, "{uri}");
    serde_json::from_slice(&body).unwrap()
}

pub fn choice(panel: usize, slot: Option<usize>, reviewer: &str) -> serde_json::Value {
    serde_json::json!({ "panel_id": panel, "slot": slot, "description": format!("covers the lesion, panel {panel}"), "reviewer_id": reviewer })
}

/// Model label behind `slot` of `panel`, read from the persisted permutation
/// and the panel index rather than through the service.
pub fn truth(store_dir: &Path, index: &Path, panel: usize, slot: usize) -> String {
    let blinding: serde_json::Value = serde_json::from_slice(&std::fs::read(store_dir.join("blinding.json")).unwrap()).unwrap();
    let entry = blinding["panels"][panel.to_string()][slot].as_u64().unwrap() as usize;
    let line = std::fs::read_to_string(index).unwrap().lines().nth(panel - 1).unwrap().to_string();
    let p: serde_json::Value = serde_json::from_str(&line).unwrap();
    p["entries"][entry]["model"].as_str().unwrap().to_string()
}
