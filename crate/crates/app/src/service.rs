//! HTTP service: `POST /recommend`, `POST /predict`, `GET /config`, `GET /model`.
//!
//! Every body carries `"schema": "v1"`. Validation failures answer 400 with one entry per
//! offending field; a carbohydrate amount that does not match the selected model's meal
//! awareness answers 409.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use bolus_core::advisor::{recommend_bolus, BolusRecommendation, DoseRecord};
use bolus_core::ars::estimate_ars_cost;
use bolus_core::pg::{MealClass, WINDOW};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{AppConfig, SCHEMA};
use crate::error::{AppError, AppResult};
use crate::models::{ModelInfo, ModelSet, NamedModel};

/// Loaded models and configuration, shared read-only across requests.
#[derive(Debug)]
pub struct ServiceState {
    pub config: AppConfig,
    pub models: ModelSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        FieldError {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub schema: String,
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
}

pub enum ApiError {
    Validation(Vec<FieldError>),
    MealAwareness { meal_aware: bool },
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::Validation(fields) => (
                StatusCode::BAD_REQUEST,
                ErrorBody {
                    schema: SCHEMA.into(),
                    error: "validation".into(),
                    message: fields
                        .iter()
                        .map(|f| format!("{}: {}", f.field, f.message))
                        .collect::<Vec<_>>()
                        .join("; "),
                    fields,
                },
            ),
            ApiError::MealAwareness { meal_aware } => (
                StatusCode::CONFLICT,
                ErrorBody {
                    schema: SCHEMA.into(),
                    error: "meal_awareness_mismatch".into(),
                    message: if meal_aware {
                        "the selected model is meal-aware and needs carbs".into()
                    } else {
                        "the selected model is meal-free; omit carbs".into()
                    },
                    fields: vec![FieldError::new(
                        "carbs",
                        if meal_aware { "required" } else { "not accepted" },
                    )],
                },
            ),
            ApiError::Internal(message) => (
                StatusCode::INTERNAL_SERVER_ERROR,
                ErrorBody {
                    schema: SCHEMA.into(),
                    error: "internal".into(),
                    message,
                    fields: Vec::new(),
                },
            ),
        };
        json_response(status, &body)
    }
}

fn json_response<T: Serialize>(status: StatusCode, body: &T) -> Response {
    let bytes = serde_json::to_vec(body).expect("response serializes");
    (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::Validation(vec![FieldError::new("body", e.to_string())]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendRequest {
    #[serde(default)]
    pub schema: Option<String>,
    pub window: Vec<f64>,
    #[serde(default)]
    pub carbs: Option<f64>,
    #[serde(default)]
    pub meal_class: Option<MealClass>,
    #[serde(default)]
    pub history: Vec<DoseRecord>,
    /// Seconds on the same clock as `history`; required when a history is given.
    #[serde(default)]
    pub now: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub schema: String,
    pub model: String,
    pub meal_class: MealClass,
    pub seed: u64,
    pub recommendation: BolusRecommendation<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    #[serde(default)]
    pub schema: Option<String>,
    pub window: Vec<f64>,
    pub u: f64,
    #[serde(default)]
    pub carbs: Option<f64>,
    #[serde(default)]
    pub meal_class: Option<MealClass>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedPoint {
    pub minutes: f64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub value: f64,
    pub mc_std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub schema: String,
    pub model: String,
    pub meal_class: MealClass,
    pub u: f64,
    pub points: Vec<PredictedPoint>,
    /// Reference trajectory of the cost, one value per point.
    pub target: Vec<f64>,
    pub cost: CostSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelResponse {
    pub schema: String,
    pub models: Vec<ModelInfo>,
}

/// Checks shared by both POST bodies; returns the selected model.
fn common_checks<'a>(
    state: &'a ServiceState,
    schema: &Option<String>,
    window: &[f64],
    carbs: Option<f64>,
    meal_class: Option<MealClass>,
    errors: &mut Vec<FieldError>,
) -> Option<&'a NamedModel> {
    if let Some(s) = schema {
        if s != SCHEMA {
            errors.push(FieldError::new("schema", format!("expected \"{SCHEMA}\", got \"{s}\"")));
        }
    }
    if window.len() != WINDOW {
        errors.push(FieldError::new(
            "window",
            format!("expected {WINDOW} glucose values, got {}", window.len()),
        ));
    }
    for (k, g) in window.iter().enumerate() {
        if !(*g > 10.0 && *g < 600.0) {
            errors.push(FieldError::new(
                format!("window[{k}]"),
                format!("glucose {g} outside (10, 600) mg/dL"),
            ));
        }
    }
    if let Some(c) = carbs {
        if !(c >= 0.0 && c.is_finite()) {
            errors.push(FieldError::new("carbs", format!("must be >= 0, got {c}")));
        }
    }
    match state.models.select(meal_class) {
        Ok(m) => Some(m),
        Err(msg) => {
            errors.push(FieldError::new("meal_class", msg));
            None
        }
    }
}

fn check_awareness(model: &NamedModel, carbs: Option<f64>) -> Result<(), ApiError> {
    if model.predictor.meal_aware != carbs.is_some() {
        return Err(ApiError::MealAwareness {
            meal_aware: model.predictor.meal_aware,
        });
    }
    Ok(())
}

pub fn handle_recommend(state: &ServiceState, req: &RecommendRequest) -> Result<RecommendResponse, ApiError> {
    let mut errors = Vec::new();
    let model = common_checks(state, &req.schema, &req.window, req.carbs, req.meal_class, &mut errors);
    if !req.history.is_empty() && req.now.is_none() {
        errors.push(FieldError::new("now", "required when history is given"));
    }
    let now = req.now.unwrap_or(0.0);
    if !now.is_finite() {
        errors.push(FieldError::new("now", "must be finite"));
    }
    for (k, d) in req.history.iter().enumerate() {
        if !(d.units >= 0.0 && d.units.is_finite()) {
            errors.push(FieldError::new(format!("history[{k}].units"), "must be >= 0"));
        }
        if !d.time.is_finite() || d.time > now {
            errors.push(FieldError::new(format!("history[{k}].time"), "must not be later than now"));
        }
    }
    let Some(model) = model.filter(|_| errors.is_empty()) else {
        return Err(ApiError::Validation(errors));
    };
    check_awareness(model, req.carbs)?;
    let seed = req.seed.unwrap_or(state.config.seed);
    let recommendation = recommend_bolus(
        &model.predictor,
        &req.window,
        req.carbs,
        &state.config.advisor,
        &req.history,
        now,
        seed,
    )
    .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(RecommendResponse {
        schema: SCHEMA.into(),
        model: model.name.clone(),
        meal_class: model.predictor.meal_class,
        seed,
        recommendation,
    })
}

pub fn handle_predict(state: &ServiceState, req: &PredictRequest) -> Result<PredictResponse, ApiError> {
    let mut errors = Vec::new();
    let model = common_checks(state, &req.schema, &req.window, req.carbs, req.meal_class, &mut errors);
    let u_max = state.config.advisor.cost.u_max;
    if !(req.u >= 0.0 && req.u <= u_max) {
        errors.push(FieldError::new("u", format!("must lie in [0, {u_max}], got {}", req.u)));
    }
    let Some(model) = model.filter(|_| errors.is_empty()) else {
        return Err(ApiError::Validation(errors));
    };
    check_awareness(model, req.carbs)?;
    let traj = model
        .predictor
        .predict_trajectory(&req.window, req.u, req.carbs)
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    let seed = req.seed.unwrap_or(state.config.seed);
    let cost_cfg = &state.config.advisor.cost;
    let estimate = estimate_ars_cost(&traj, cost_cfg, &mut ChaCha8Rng::seed_from_u64(seed))
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    let points = traj
        .means
        .iter()
        .zip(&traj.variances)
        .enumerate()
        .map(|(k, (&mean, &variance))| PredictedPoint {
            minutes: (k + 1) as f64 * traj.spacing_minutes,
            mean,
            variance,
        })
        .collect();
    Ok(PredictResponse {
        schema: SCHEMA.into(),
        model: model.name.clone(),
        meal_class: model.predictor.meal_class,
        u: req.u,
        points,
        target: state.config.advisor.cost.target.clone(),
        cost: CostSummary {
            value: estimate.value + cost_cfg.input_weight * req.u * req.u,
            mc_std_error: estimate.mc_std_error,
        },
    })
}

async fn post_json<Req, Resp>(
    state: Arc<ServiceState>,
    body: Bytes,
    handler: fn(&ServiceState, &Req) -> Result<Resp, ApiError>,
) -> Response
where
    Req: DeserializeOwned + Send + 'static,
    Resp: Serialize + Send + 'static,
{
    let req: Req = match parse_body(&body) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    let outcome = tokio::task::spawn_blocking(move || handler(&state, &req)).await;
    match outcome {
        Ok(Ok(resp)) => json_response(StatusCode::OK, &resp),
        Ok(Err(e)) => e.into_response(),
        Err(e) => ApiError::Internal(e.to_string()).into_response(),
    }
}

async fn recommend(State(state): State<Arc<ServiceState>>, body: Bytes) -> Response {
    post_json(state, body, handle_recommend).await
}

async fn predict(State(state): State<Arc<ServiceState>>, body: Bytes) -> Response {
    post_json(state, body, handle_predict).await
}

async fn config(State(state): State<Arc<ServiceState>>) -> Response {
    json_response(StatusCode::OK, &state.config)
}

async fn model(State(state): State<Arc<ServiceState>>) -> Response {
    json_response(
        StatusCode::OK,
        &ModelResponse {
            schema: SCHEMA.into(),
            models: state.models.metadata(),
        },
    )
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/recommend", post(recommend))
        .route("/predict", post(predict))
        .route("/config", get(config))
        .route("/model", get(model))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub fn serve(addr: SocketAddr, state: ServiceState) -> AppResult<()> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| AppError::runtime(format!("bind {addr}: {e}")))?;
        log::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(Arc::new(state)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| AppError::runtime(format!("server: {e}")))
    })
}
