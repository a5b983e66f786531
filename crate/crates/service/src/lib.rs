//! Read-only HTTP API over an aggregate store.
//!
//! | route | answer |
//! |---|---|
//! | `GET /api/manifest` | weeks with dates, levels, metrics, feature registry |
//! | `GET /api/layer?level&metric&week` | one value per region, `null` when map-suppressed |
//! | `POST /api/selection` | union time series, statewide baseline, focus-week detail |
//! | `GET /api/geography?level` | GeoJSON |
//!
//! Every route answers 503 while no store is loaded.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use regionrisk::aggregate::Metric;
use regionrisk::geography::Level;
use regionrisk::store::AggregateStore;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub mod audit;
mod error;
pub mod wire;

pub use error::ApiError;
use wire::{
    histograms, top_importance, DecompositionBody, Detail, LayerBody, ManifestBody, SelectionBody, SelectionRequest,
    SeriesPoint, TOP_CHANGES, TOP_IMPORTANCE,
};

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Shared handler state. `None` means the store failed to load.
#[derive(Debug, Clone, Default)]
pub struct AppState {
    store: Option<Arc<AggregateStore>>,
}

impl AppState {
    pub fn new(store: AggregateStore) -> Self {
        Self {
            store: Some(Arc::new(store)),
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Loads `dir`, logging and serving 503 if it is unreadable.
    pub fn from_dir(dir: &Path) -> Self {
        match AggregateStore::load(dir) {
            Ok(s) => Self::new(s),
            Err(e) => {
                tracing::warn!(store = %dir.display(), error = %e, "store not loaded");
                Self::empty()
            }
        }
    }

    pub fn store(&self) -> Option<&AggregateStore> {
        self.store.as_deref()
    }

    fn require(&self) -> Result<&AggregateStore, ApiError> {
        self.store().ok_or_else(ApiError::unavailable)
    }
}

impl From<Arc<AggregateStore>> for AppState {
    fn from(store: Arc<AggregateStore>) -> Self {
        Self { store: Some(store) }
    }
}

/// CORS for the dashboard. An empty list allows any origin.
pub fn cors(origins: &[String]) -> CorsLayer {
    let allow = if origins.is_empty() {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    CorsLayer::new()
        .allow_origin(allow)
        .allow_methods(tower_http::cors::Any)
        .allow_headers(tower_http::cors::Any)
}

pub fn router(state: AppState, origins: &[String]) -> Router {
    Router::new()
        .route("/api/manifest", get(manifest))
        .route("/api/layer", get(layer))
        .route("/api/selection", post(selection))
        .route("/api/geography", get(geography))
        .with_state(state)
        .layer(cors(origins))
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, state: AppState, origins: &[String]) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state, origins))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn param<'a>(q: &'a HashMap<String, String>, name: &str) -> Result<&'a str, ApiError> {
    q.get(name)
        .map(String::as_str)
        .ok_or_else(|| ApiError::bad_request(format!("missing query parameter {name}")))
}

fn parse_level(s: &str) -> Result<Level, ApiError> {
    s.parse().map_err(|_| ApiError::bad_request(format!("unknown level {s:?}")))
}

fn parse_metric(s: &str) -> Result<Metric, ApiError> {
    s.parse().map_err(|_| ApiError::bad_request(format!("unknown metric {s:?}")))
}

fn check_week(store: &AggregateStore, week: u32) -> Result<(), ApiError> {
    if week >= store.n_weeks() {
        return Err(ApiError::not_found(format!("week {week} outside 0..{}", store.n_weeks())));
    }
    Ok(())
}

async fn manifest(State(state): State<AppState>) -> ApiResult<ManifestBody> {
    Ok(Json(ManifestBody::new(state.require()?)))
}

async fn layer(State(state): State<AppState>, Query(q): Query<HashMap<String, String>>) -> ApiResult<LayerBody> {
    let store = state.require()?;
    let level = parse_level(param(&q, "level")?)?;
    let metric = parse_metric(param(&q, "metric")?)?;
    let week: u32 = param(&q, "week")?
        .parse()
        .map_err(|_| ApiError::bad_request("week must be a non-negative integer"))?;
    check_week(store, week)?;
    Ok(Json(LayerBody {
        level,
        metric: metric.to_string(),
        week,
        regions: store.layer(level, metric, week)?,
    }))
}

async fn geography(
    State(state): State<AppState>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<serde_json::Value> {
    let store = state.require()?;
    let level = q.get("level").map(|s| parse_level(s)).transpose()?;
    Ok(Json(store.geography.to_geojson(level)))
}

async fn selection(State(state): State<AppState>, body: Bytes) -> ApiResult<SelectionBody> {
    let store = state.require()?;
    let req: SelectionRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid selection: {e}")))?;
    if req.region_ids.is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "region_ids is empty"));
    }
    let level = parse_level(&req.level)?;
    let metric = parse_metric(&req.metric)?;
    let range = req.week_range;
    if range.start >= range.end {
        return Err(ApiError::bad_request("week_range must be non-empty"));
    }
    check_week(store, range.end - 1)?;
    let focus = req.focus_week.unwrap_or(range.end - 1);
    check_week(store, focus)?;

    let series = store.selection(level, &req.region_ids, range.start..range.end)?;
    let statewide = store.statewide[range.start as usize..range.end as usize]
        .iter()
        .map(|a| SeriesPoint::new(a, metric))
        .collect();
    let detail = detail(store, level, &req.region_ids, metric, focus)?;
    Ok(Json(SelectionBody {
        level,
        region_ids: req.region_ids,
        metric: metric.to_string(),
        week_range: range,
        focus_week: focus,
        series: series.iter().map(|a| SeriesPoint::new(a, metric)).collect(),
        statewide,
        detail,
    }))
}

fn detail(store: &AggregateStore, level: Level, ids: &[String], metric: Metric, week: u32) -> Result<Detail, ApiError> {
    let first = week.saturating_sub(1);
    let both = store.selection(level, ids, first..week + 1)?;
    let cur = both.last().expect("focus week present");
    let (mut top_changes, mut decomposition, mut trend_text) = (None, None, None);
    if week > 0 {
        top_changes = Some(store.top_changes(level, ids, week, TOP_CHANGES)?);
        if both.iter().all(|a| a.revealed()) {
            let d = store.decompose_change(level, ids, metric, week)?;
            let body = DecompositionBody::new(&d);
            if !body.components_suppressed {
                trend_text = Some(regionrisk::aggregate::render_trend_text(&d));
            }
            decomposition = Some(body);
        }
    }
    Ok(Detail {
        week,
        n_patients: cur.revealed().then_some(cur.n_patients),
        importance: top_importance(cur, TOP_IMPORTANCE),
        histograms: histograms(store, cur),
        top_changes,
        decomposition,
        trend_text,
    })
}
