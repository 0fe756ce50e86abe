use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use twinscope_core::data::quantile_sorted;
use twinscope_core::explain::{explain_instance, pdp, Explanation, PdpCurve, SurrogateConfig};
use twinscope_core::features::{Feature, PatientFeatures, NUM_FEATURES};
use twinscope_core::learners::Predictor;
use twinscope_core::reconcile::RuleRevision;
use twinscope_core::rules::{DecisionTable, TableDecision};
use twinscope_core::twin::{parse_timestamp, HistoryPoint, Observation, TwinState};

use crate::error::ApiError;
use crate::state::{patient_seed, revision_id, AppState, LoadedModel, RulesSnapshot, Verdict};

type Shared = Arc<AppState>;
type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Shared) -> Router {
    let protected = Router::new()
        .route("/patients", post(create_patient))
        .route("/patients/{id}", get(get_patient))
        .route("/patients/{id}/observations", post(add_observation))
        .route("/patients/{id}/history", get(history))
        .route("/assess", post(assess))
        .route("/pdp", get(get_pdp))
        .route("/features", get(features))
        .route("/rules", get(rules))
        .route("/revisions", get(revisions))
        .route("/revisions/{id}/review", post(review))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/health", get(health))
        .merge(protected)
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(state)
}

async fn require_token(State(state): State<Shared>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError::unauthorized().into_response();
        }
    }
    next.run(req).await
}

/// Parses a JSON body. Malformed JSON is a 400; well-formed JSON of the
/// wrong shape is a 422.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| {
        if e.is_data() {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", e.to_string())
        } else {
            ApiError::bad_request(format!("malformed JSON: {e}"))
        }
    })
}

fn number(field: &str, v: &Value) -> ApiResult<f64> {
    v.as_f64()
        .ok_or_else(|| ApiError::validation(field, format!("{field} must be a finite number, got {v}")))
}

/// Validates a `{feature: number}` object.
fn feature_map(prefix: &str, v: &Value) -> ApiResult<Vec<(Feature, f64)>> {
    let obj: &Map<String, Value> = v
        .as_object()
        .ok_or_else(|| ApiError::validation(prefix, format!("{prefix} must be an object of feature values")))?;
    let mut out = Vec::with_capacity(obj.len());
    for (k, val) in obj {
        let field = format!("{prefix}.{k}");
        let f: Feature = k.parse().map_err(|e: twinscope_core::features::UnknownFeature| {
            ApiError::validation(field.as_str(), e.to_string())
        })?;
        let x = number(&field, val)?;
        PatientFeatures::check_value(f, x).map_err(|e| ApiError::validation(field.as_str(), e.to_string()))?;
        out.push((f, x));
    }
    Ok(out)
}

fn complete_features(prefix: &str, v: &Value) -> ApiResult<PatientFeatures> {
    let values = feature_map(prefix, v)?;
    let mut dense = [f64::NAN; NUM_FEATURES];
    for (f, x) in values {
        dense[f.index()] = x;
    }
    if let Some(f) = Feature::ALL.iter().find(|f| dense[f.index()].is_nan()) {
        return Err(ApiError::validation(format!("{prefix}.{f}"), format!("{f} is required")));
    }
    Ok(PatientFeatures::from_vector(&dense))
}

fn timestamp(v: &Option<String>) -> ApiResult<chrono::DateTime<Utc>> {
    match v {
        Some(t) => parse_timestamp(t).map_err(|e| ApiError::validation("observed_at", e)),
        None => Ok(Utc::now()),
    }
}

#[derive(Serialize)]
struct Health<'a> {
    status: &'static str,
    model_version: Option<&'a str>,
    rules_version: String,
    service_version: &'static str,
}

async fn health(State(state): State<Shared>) -> Response {
    Json(Health {
        status: "ok",
        model_version: state.model_version(),
        rules_version: state.rules().version.clone(),
        service_version: env!("CARGO_PKG_VERSION"),
    })
    .into_response()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreatePatient {
    id: String,
    baseline: Value,
    observed_at: Option<String>,
    source: Option<String>,
}

async fn create_patient(State(state): State<Shared>, body: Bytes) -> ApiResult<(StatusCode, Json<TwinState>)> {
    let req: CreatePatient = parse_body(&body)?;
    let baseline = complete_features("baseline", &req.baseline)?;
    let at = timestamp(&req.observed_at)?;
    let source = req.source.unwrap_or_else(|| "baseline".to_string());
    let st = state.twins.write().create_twin(&req.id, &baseline, at, &source)?;
    Ok((StatusCode::CREATED, Json(st)))
}

async fn get_patient(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<TwinState>> {
    Ok(Json(state.twins.read().state(&id)?.clone()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewObservation {
    feature: String,
    value: Value,
    observed_at: Option<String>,
    source: Option<String>,
}

async fn add_observation(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<TwinState>> {
    let req: NewObservation = parse_body(&body)?;
    let feature: Feature = req
        .feature
        .parse()
        .map_err(|e: twinscope_core::features::UnknownFeature| ApiError::validation("feature", e.to_string()))?;
    let value = number("value", &req.value)?;
    PatientFeatures::check_value(feature, value).map_err(|e| ApiError::validation("value", e.to_string()))?;
    let obs = Observation {
        patient_id: id,
        feature,
        value,
        observed_at: timestamp(&req.observed_at)?,
        source: req.source.unwrap_or_default(),
    };
    Ok(Json(state.twins.write().record_observation(&obs)?))
}

#[derive(Serialize)]
struct History {
    patient_id: String,
    feature: Feature,
    points: Vec<HistoryPoint>,
}

fn feature_param(q: &HashMap<String, String>) -> ApiResult<Feature> {
    let name = q
        .get("feature")
        .ok_or_else(|| ApiError::bad_request("query parameter `feature` is required").with_field("feature"))?;
    name.parse()
        .map_err(|e: twinscope_core::features::UnknownFeature| ApiError::validation("feature", e.to_string()))
}

async fn history(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<History>> {
    let feature = feature_param(&q)?;
    let points = state.twins.read().history(&id, feature)?;
    Ok(Json(History {
        patient_id: id,
        feature,
        points,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AssessRequest {
    patient_id: Option<String>,
    features: Option<Value>,
    overrides: Option<Value>,
    seed: Option<u64>,
}

/// The combined rules, model and explanation answer for one feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentResponse {
    pub patient_id: Option<String>,
    pub features: PatientFeatures,
    pub risk_probability: f64,
    pub rule_decision: TableDecision,
    pub explanation: Explanation,
    pub model_version: String,
    pub rules_version: String,
    pub seed: u64,
}

/// Scores `features` against one model and one rules generation.
pub fn assess_features(
    model: &LoadedModel,
    rules: &RulesSnapshot,
    surrogate: &SurrogateConfig,
    patient_id: Option<String>,
    features: PatientFeatures,
    seed: u64,
) -> ApiResult<AssessmentResponse> {
    let rule_decision = rules.table.evaluate(&features)?;
    let cfg = SurrogateConfig { seed, ..*surrogate };
    let explanation = explain_instance(&model.file.model, &features, &model.file.training_stats, &cfg)?;
    Ok(AssessmentResponse {
        patient_id,
        features,
        risk_probability: model.file.model.predict_proba(&features),
        rule_decision,
        explanation,
        model_version: model.version.clone(),
        rules_version: rules.version.clone(),
        seed,
    })
}

async fn assess(State(state): State<Shared>, body: Bytes) -> ApiResult<Json<AssessmentResponse>> {
    let req: AssessRequest = parse_body(&body)?;
    let overrides = match &req.overrides {
        Some(v) => feature_map("overrides", v)?,
        None => Vec::new(),
    };
    let (patient_id, mut features) = match (req.patient_id, &req.features) {
        (Some(id), None) => {
            let snap = state.twins.read().snapshot_features(&id)?;
            (Some(id), snap)
        }
        (None, Some(v)) => (None, complete_features("features", v)?),
        _ => return Err(ApiError::validation("patient_id", "give exactly one of patient_id and features")),
    };
    state.model()?;
    for (f, x) in overrides {
        features.set(f, x);
    }
    let seed = req
        .seed
        .unwrap_or_else(|| patient_id.as_deref().map(patient_seed).unwrap_or(0));
    let rules = state.rules();
    let st = state.clone();
    let resp = tokio::task::spawn_blocking(move || {
        let model = st.model.as_ref().expect("checked above");
        assess_features(model, &rules, &st.surrogate, patient_id, features, seed)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(resp))
}

async fn get_pdp(State(state): State<Shared>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Json<PdpCurve>> {
    let feature = feature_param(&q)?;
    let grid_size = match q.get("grid_size") {
        Some(s) => s
            .parse::<usize>()
            .ok()
            .filter(|&g| (2..=1000).contains(&g))
            .ok_or_else(|| ApiError::validation("grid_size", "grid_size must be an integer in 2..=1000"))?,
        None => state.reconcile.grid_size,
    };
    state.model()?;
    if state.background.is_none() {
        return Err(ApiError::unavailable("no background dataset loaded"));
    }
    let clip = state.reconcile.clip;
    let st = state.clone();
    let curve = tokio::task::spawn_blocking(move || {
        let model = &st.model.as_ref().expect("checked above").file.model;
        pdp(model, st.background.as_ref().expect("checked above"), feature, grid_size, clip)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(curve))
}

#[derive(Serialize)]
struct FeatureRange {
    name: Feature,
    binary: bool,
    low: f64,
    high: f64,
    median: f64,
}

/// Slider ranges: the background's clip percentiles, or the training
/// min/max when no background is loaded.
async fn features(State(state): State<Shared>) -> ApiResult<Json<Vec<FeatureRange>>> {
    let (lo, hi) = state.reconcile.clip;
    let out = Feature::ALL
        .iter()
        .map(|&f| {
            if let Some(ds) = &state.background {
                let mut v: Vec<f64> = ds.records().iter().filter_map(|r| r.features.get(f)).collect();
                v.sort_by(f64::total_cmp);
                Ok(FeatureRange {
                    name: f,
                    binary: f.is_binary(),
                    low: quantile_sorted(&v, lo / 100.0),
                    high: quantile_sorted(&v, hi / 100.0),
                    median: quantile_sorted(&v, 0.5),
                })
            } else {
                let c = state.model()?.file.training_stats.get(f);
                Ok(FeatureRange {
                    name: f,
                    binary: f.is_binary(),
                    low: c.min,
                    high: c.max,
                    median: c.median,
                })
            }
        })
        .collect::<ApiResult<Vec<_>>>()?;
    Ok(Json(out))
}

#[derive(Serialize)]
struct Rules<'a> {
    name: &'a str,
    rules_version: &'a str,
    text: &'a str,
    table: &'a DecisionTable,
}

async fn rules(State(state): State<Shared>) -> Response {
    let snap = state.rules();
    Json(Rules {
        name: &snap.table.name,
        rules_version: &snap.version,
        text: &snap.text,
        table: &snap.table,
    })
    .into_response()
}

#[derive(Serialize)]
struct Pending<'a> {
    id: String,
    summary: String,
    revision: &'a RuleRevision,
}

async fn revisions(State(state): State<Shared>) -> Response {
    let book = state.revisions.lock();
    let list: Vec<Pending> = book
        .pending
        .iter()
        .map(|(&n, r)| Pending {
            id: revision_id(n),
            summary: r.to_string(),
            revision: r,
        })
        .collect();
    Json(list).into_response()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReviewRequest {
    verdict: String,
    reviewer: String,
}

#[derive(Serialize)]
struct ReviewResponse {
    id: String,
    verdict: Verdict,
    reviewer: String,
    rules_version: String,
}

async fn review(State(state): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<ReviewResponse>> {
    let req: ReviewRequest = parse_body(&body)?;
    let verdict = match req.verdict.as_str() {
        "accept" => Verdict::Accept,
        "reject" => Verdict::Reject,
        other => {
            return Err(ApiError::validation(
                "verdict",
                format!("verdict must be `accept` or `reject`, got `{other}`"),
            ))
        }
    };
    let reviewer = req.reviewer.trim();
    if reviewer.is_empty() {
        return Err(ApiError::validation("reviewer", "reviewer is required"));
    }
    let rec = state.review(&id, verdict, reviewer, Utc::now())?;
    Ok(Json(ReviewResponse {
        id: rec.id,
        verdict: rec.verdict,
        reviewer: rec.reviewer,
        rules_version: rec.rules_version_after,
    }))
}
