//! Blinded review: panels are served with their overlays in a seeded,
//! persisted slot order, and reviewers' choices are resolved back to model
//! labels only on export.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use attnbench::gradcam::{panel_dir, read_panel_index, Panel};
use attnbench::nn::seeded_rng;
use attnbench::train::derive_seed;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub const EXPORT_HEADER: &str = "Column (#),Best Model,Description,Reviewer";
/// Export label for a "none of the models" choice.
pub const NO_MODEL: &str = "None";
const BLINDING_STREAM: u64 = 4;

/// Panel ids are 1-based positions in the panel index.
pub type PanelId = usize;

/// Slot order of one panel: `order[slot]` is the index into the panel's entries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blinding {
    pub seed: u64,
    pub panels: BTreeMap<PanelId, Vec<usize>>,
}

impl Blinding {
    pub fn generate(panels: &[Panel], seed: u64) -> Self {
        let panels = panels
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let id = i + 1;
                let mut order: Vec<usize> = (0..p.entries.len()).collect();
                order.shuffle(&mut seeded_rng(derive_seed(seed, BLINDING_STREAM, id as u64)));
                (id, order)
            })
            .collect();
        Self { seed, panels }
    }

    /// Loads the persisted permutation next to the store, or creates and
    /// persists a fresh one. A stored permutation that does not fit the
    /// panels is an error rather than silently replaced.
    pub fn load_or_create(path: &Path, panels: &[Panel], seed: u64) -> anyhow::Result<Self> {
        if path.exists() {
            let b: Self = serde_json::from_slice(&fs::read(path)?)?;
            let fits = b.panels.len() == panels.len()
                && panels.iter().enumerate().all(|(i, p)| {
                    b.panels.get(&(i + 1)).is_some_and(|o| {
                        let mut s = o.clone();
                        s.sort_unstable();
                        s == (0..p.entries.len()).collect::<Vec<_>>()
                    })
                });
            anyhow::ensure!(fits, "{} does not match the panel index", path.display());
            return Ok(b);
        }
        let b = Self::generate(panels, seed);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(&b)? + "\n")?;
        Ok(b)
    }
}

/// One stored choice. `slot` is `None` for "none of the models".
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub panel_id: PanelId,
    pub slot: Option<usize>,
    pub description: String,
    pub reviewer_id: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// Append-only JSON Lines file of [`ReviewRecord`]s.
pub struct ChoiceStore {
    file: File,
    records: Vec<ReviewRecord>,
    answered: HashSet<(String, PanelId)>,
}

impl ChoiceStore {
    pub fn open(path: &Path) -> anyhow::Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut records = Vec::new();
        if path.exists() {
            for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let r: ReviewRecord = serde_json::from_str(&line)
                    .map_err(|e| anyhow::anyhow!("{} line {}: {e}", path.display(), n + 1))?;
                records.push(r);
            }
        }
        let answered = records.iter().map(|r| (r.reviewer_id.clone(), r.panel_id)).collect();
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file, records, answered })
    }

    pub fn records(&self) -> &[ReviewRecord] {
        &self.records
    }

    /// Appends and flushes; `false` if this reviewer already answered the panel.
    pub fn append(&mut self, record: ReviewRecord) -> anyhow::Result<bool> {
        if !self.answered.insert((record.reviewer_id.clone(), record.panel_id)) {
            return Ok(false);
        }
        writeln!(self.file, "{}", serde_json::to_string(&record)?)?;
        self.file.sync_data()?;
        self.records.push(record);
        Ok(true)
    }
}

/// Survey table: one row per record, ordered by panel, then by arrival.
pub fn export_csv(records: &[ReviewRecord], panels: &[Panel], blinding: &Blinding) -> anyhow::Result<String> {
    let mut rows: Vec<&ReviewRecord> = records.iter().collect();
    rows.sort_by_key(|r| r.panel_id);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EXPORT_HEADER.split(','))?;
    for r in rows {
        let label = resolve(r, panels, blinding)?;
        w.write_record([r.panel_id.to_string(), label, r.description.clone(), r.reviewer_id.clone()])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// The model label behind a stored slot.
pub fn resolve(r: &ReviewRecord, panels: &[Panel], blinding: &Blinding) -> anyhow::Result<String> {
    let Some(slot) = r.slot else { return Ok(NO_MODEL.to_string()) };
    let panel = panels.get(r.panel_id.wrapping_sub(1));
    let entry = blinding.panels.get(&r.panel_id).and_then(|o| o.get(slot)).and_then(|&e| panel?.entries.get(e));
    entry
        .map(|e| e.model.clone())
        .ok_or_else(|| anyhow::anyhow!("panel {} slot {slot} cannot be resolved", r.panel_id))
}

pub struct ReviewState {
    panels: Vec<Panel>,
    blinding: Blinding,
    image_dir: PathBuf,
    visible_probabilities: bool,
    store: Mutex<ChoiceStore>,
}

impl ReviewState {
    /// Reads the panel index, loads or creates `<store dir>/blinding.json`
    /// and replays the choice store.
    pub fn open(panel_index: &Path, store: &Path, seed: u64, visible_probabilities: bool) -> anyhow::Result<Self> {
        let panels = read_panel_index(panel_index)?;
        let blinding_path = store.parent().unwrap_or(Path::new(".")).join("blinding.json");
        let blinding = Blinding::load_or_create(&blinding_path, &panels, seed)?;
        Ok(Self {
            panels,
            blinding,
            image_dir: panel_dir(panel_index),
            visible_probabilities,
            store: Mutex::new(ChoiceStore::open(store)?),
        })
    }

    fn view(&self, id: PanelId) -> Option<PanelView> {
        let panel = self.panels.get(id.checked_sub(1)?)?;
        let order = &self.blinding.panels[&id];
        let slots = order
            .iter()
            .enumerate()
            .map(|(slot, &e)| SlotView {
                slot,
                label: format!("Model {}", slot + 1),
                image_url: format!("/v1/panels/{id}/slots/{slot}/image"),
                probability: self.visible_probabilities.then_some(panel.entries[e].probability),
            })
            .collect();
        Some(PanelView { id, image_url: format!("/v1/panels/{id}/image"), slots })
    }

    fn image_path(&self, id: PanelId, slot: Option<usize>) -> Option<PathBuf> {
        let panel = self.panels.get(id.checked_sub(1)?)?;
        let file = match slot {
            None => &panel.input,
            Some(s) => &panel.entries[*self.blinding.panels[&id].get(s)?].file,
        };
        Some(self.image_dir.join(file))
    }
}

/// What a client sees of a panel: no model names, no file names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelView {
    pub id: PanelId,
    /// The unannotated input image.
    pub image_url: String,
    pub slots: Vec<SlotView>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotView {
    pub slot: usize,
    pub label: String,
    pub image_url: String,
    /// Present only when `review.visible_probabilities` is set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct ChoiceRequest {
    pub panel_id: PanelId,
    /// `null` selects "none of the models".
    pub slot: Option<usize>,
    pub description: String,
    pub reviewer_id: String,
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: message.into() })).into_response()
}

type Shared = Arc<ReviewState>;

async fn list_panels(State(s): State<Shared>) -> Json<Vec<PanelView>> {
    Json((1..=s.panels.len()).filter_map(|id| s.view(id)).collect())
}

async fn one_panel(State(s): State<Shared>, UrlPath(id): UrlPath<PanelId>) -> Response {
    match s.view(id) {
        Some(v) => Json(v).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no panel {id}")),
    }
}

fn png(path: Option<PathBuf>) -> Response {
    let Some(path) = path else { return error(StatusCode::NOT_FOUND, "no such image") };
    match fs::read(&path) {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(e) => {
            log::error!("{}: {e}", path.display());
            error(StatusCode::INTERNAL_SERVER_ERROR, "image unavailable")
        }
    }
}

async fn input_image(State(s): State<Shared>, UrlPath(id): UrlPath<PanelId>) -> Response {
    png(s.image_path(id, None))
}

async fn slot_image(State(s): State<Shared>, UrlPath((id, slot)): UrlPath<(PanelId, usize)>) -> Response {
    png(s.image_path(id, Some(slot)))
}

async fn submit(State(s): State<Shared>, Json(req): Json<ChoiceRequest>) -> Response {
    let Some(panel) = req.panel_id.checked_sub(1).and_then(|i| s.panels.get(i)) else {
        return error(StatusCode::NOT_FOUND, format!("no panel {}", req.panel_id));
    };
    if req.slot.is_some_and(|slot| slot >= panel.entries.len()) {
        return error(StatusCode::UNPROCESSABLE_ENTITY, format!("panel {} has {} slots", req.panel_id, panel.entries.len()));
    }
    if req.description.trim().is_empty() {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "description must not be empty");
    }
    if req.reviewer_id.trim().is_empty() {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "reviewer_id must not be empty");
    }
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let record = ReviewRecord {
        panel_id: req.panel_id,
        slot: req.slot,
        description: req.description,
        reviewer_id: req.reviewer_id,
        timestamp,
    };
    let mut store = s.store.lock().expect("store lock");
    match store.append(record.clone()) {
        Ok(true) => (StatusCode::CREATED, Json(record)).into_response(),
        Ok(false) => error(
            StatusCode::CONFLICT,
            format!("reviewer {} already answered panel {}", record.reviewer_id, record.panel_id),
        ),
        Err(e) => {
            log::error!("store append failed: {e}");
            error(StatusCode::INTERNAL_SERVER_ERROR, "could not save the choice")
        }
    }
}

async fn export(State(s): State<Shared>) -> Response {
    let store = s.store.lock().expect("store lock");
    match export_csv(store.records(), &s.panels, &s.blinding) {
        Ok(csv) => ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn router(state: ReviewState) -> Router {
    Router::new()
        .route("/v1/panels", get(list_panels))
        .route("/v1/panels/{id}", get(one_panel))
        .route("/v1/panels/{id}/image", get(input_image))
        .route("/v1/panels/{id}/slots/{slot}/image", get(slot_image))
        .route("/v1/choices", post(submit))
        .route("/v1/export", get(export))
        .with_state(Arc::new(state))
}

pub async fn serve(state: ReviewState, port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    log::info!("review service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
