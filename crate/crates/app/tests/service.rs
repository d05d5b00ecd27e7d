mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use bolus_app::models::{save_model, ModelSet, NamedModel};
use bolus_app::service::{router, ErrorBody, PredictResponse, RecommendResponse, ServiceState};
use bolus_app::AppConfig;
use bolus_core::pg::{MealClass, PgPredictor};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn build_app(models: Vec<(&str, PgPredictor<f64>)>) -> Router {
    let mut set = ModelSet::default();
    for (name, predictor) in models {
        set.insert(NamedModel {
            name: name.into(),
            predictor,
        })
        .unwrap();
    }
    router(Arc::new(ServiceState {
        config: AppConfig::default(),
        models: set,
    }))
}

fn meal_free_app() -> Router {
    let f = common::fixture();
    build_app(vec![
        ("breakfast", f.free.breakfast.clone()),
        ("lunch_dinner", f.free.lunch_dinner.clone()),
    ])
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

const WINDOW: [f64; 8] = [118.0, 119.0, 121.0, 120.0, 122.0, 124.0, 125.0, 127.0];

#[tokio::test]
async fn recommend_is_byte_identical_for_a_fixed_seed() {
    let app = meal_free_app();
    let body = json!({"schema": "v1", "window": WINDOW, "meal_class": "breakfast", "seed": 11});
    let (s1, b1) = call(&app, "POST", "/recommend", Some(body.clone())).await;
    let (s2, b2) = call(&app, "POST", "/recommend", Some(body)).await;
    assert_eq!(s1, StatusCode::OK);
    assert_eq!(s2, StatusCode::OK);
    assert_eq!(b1, b2);
    let resp: RecommendResponse = serde_json::from_slice(&b1).unwrap();
    assert_eq!(resp.schema, "v1");
    assert_eq!(resp.meal_class, MealClass::Breakfast);
    assert_eq!(resp.recommendation.trajectory_at_solution.means.len(), 8);
    let r = &resp.recommendation;
    assert!(r.raw_bolus >= 0.0 && r.raw_bolus <= 15.0);
    assert_eq!(r.final_bolus, (r.raw_bolus - r.iob).max(0.0));
}

#[tokio::test]
async fn predict_returns_eight_mean_variance_pairs() {
    let app = meal_free_app();
    let body = json!({"window": WINDOW, "u": 0.0, "meal_class": "lunch_dinner"});
    let (status, bytes) = call(&app, "POST", "/predict", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    let resp: PredictResponse = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(resp.points.len(), 8);
    assert_eq!(resp.target.len(), 8);
    for (k, p) in resp.points.iter().enumerate() {
        assert_eq!(p.minutes, 15.0 * (k + 1) as f64);
        assert!(p.mean.is_finite() && p.variance >= 0.0);
    }
    assert!(resp.cost.value.is_finite());
}

#[tokio::test]
async fn huge_insulin_on_board_clamps_to_zero() {
    let app = meal_free_app();
    let body = json!({
        "window": WINDOW,
        "meal_class": "breakfast",
        "history": [{"time": 0.0, "units": 100.0}],
        "now": 600.0,
        "seed": 3
    });
    let (status, bytes) = call(&app, "POST", "/recommend", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    let resp: RecommendResponse = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(resp.recommendation.final_bolus, 0.0);
    assert!(resp.recommendation.iob > 95.0);
}

#[tokio::test]
async fn validation_errors_name_the_fields() {
    let app = meal_free_app();
    let body = json!({"schema": "v2", "window": &WINDOW[..7], "meal_class": "breakfast"});
    let (status, bytes) = call(&app, "POST", "/recommend", Some(body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let err: ErrorBody = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(err.error, "validation");
    let fields: Vec<&str> = err.fields.iter().map(|f| f.field.as_str()).collect();
    assert!(fields.contains(&"window") && fields.contains(&"schema"), "{fields:?}");
    assert!(err.fields.iter().any(|f| f.message.contains('8')));

    // two models loaded and no class given
    let (status, bytes) = call(&app, "POST", "/predict", Some(json!({"window": WINDOW, "u": 1.0}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let err: ErrorBody = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(err.fields[0].field, "meal_class");

    let body = json!({"window": WINDOW, "u": 99.0, "meal_class": "breakfast"});
    let (status, bytes) = call(&app, "POST", "/predict", Some(body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let err: ErrorBody = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(err.fields[0].field, "u");

    let body = json!({"window": WINDOW, "meal_class": "breakfast", "history": [{"time": 0.0, "units": 1.0}]});
    let (status, bytes) = call(&app, "POST", "/recommend", Some(body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let err: ErrorBody = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(err.fields[0].field, "now");

    let (status, bytes) = call(&app, "POST", "/recommend", Some(json!({"window": "x"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let err: ErrorBody = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(err.fields[0].field, "body");
}

#[tokio::test]
async fn meal_awareness_mismatch_is_a_conflict() {
    let app = meal_free_app();
    let body = json!({"window": WINDOW, "meal_class": "breakfast", "carbs": 50.0});
    let (status, bytes) = call(&app, "POST", "/recommend", Some(body)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let err: ErrorBody = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(err.error, "meal_awareness_mismatch");

    let f = common::fixture();
    let aware = build_app(vec![("b", f.aware.breakfast.clone())]);
    let (status, _) = call(&aware, "POST", "/predict", Some(json!({"window": WINDOW, "u": 2.0}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let body = json!({"window": WINDOW, "u": 2.0, "carbs": 45.0});
    let (status, _) = call(&aware, "POST", "/predict", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn config_and_model_metadata() {
    let app = meal_free_app();
    let (status, bytes) = call(&app, "GET", "/config", None).await;
    assert_eq!(status, StatusCode::OK);
    let cfg: AppConfig = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(cfg, AppConfig::default());

    let (status, bytes) = call(&app, "GET", "/model", None).await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(v["schema"], "v1");
    let models = v["models"].as_array().unwrap();
    assert_eq!(models.len(), 2);
    assert_eq!(models[0]["meal_aware"], false);
    assert_eq!(models[0]["input_dim"], 9);
    assert_eq!(models[0]["training_samples"], 7);
    assert_eq!(models[0]["steps"].as_array().unwrap().len(), 8);
}

#[tokio::test]
async fn saved_and_reloaded_model_predicts_the_same() {
    let f = common::fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = save_model(dir.path(), MealClass::Breakfast, &f.aware.breakfast).unwrap();
    let reloaded = ModelSet::load(&[path]).unwrap();
    let original = build_app(vec![("breakfast", f.aware.breakfast.clone())]);
    let loaded = build_app(vec![("breakfast", reloaded.models[0].predictor.clone())]);
    for u in [0.0, 2.5, 7.0, 15.0] {
        let body = json!({"window": WINDOW, "u": u, "carbs": 50.0});
        let (_, a) = call(&original, "POST", "/predict", Some(body.clone())).await;
        let (_, b) = call(&loaded, "POST", "/predict", Some(body)).await;
        let a: PredictResponse = serde_json::from_slice(&a).unwrap();
        let b: PredictResponse = serde_json::from_slice(&b).unwrap();
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!((p.mean - q.mean).abs() <= 1e-10 * p.mean.abs().max(1.0));
            assert!((p.variance - q.variance).abs() <= 1e-10 * p.variance.abs().max(1.0));
        }
    }
}

#[tokio::test]
async fn concurrent_requests_agree() {
    let app = meal_free_app();
    let body = json!({"window": WINDOW, "meal_class": "lunch_dinner", "seed": 5});
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let app = app.clone();
            let body = body.clone();
            tokio::spawn(async move { call(&app, "POST", "/recommend", Some(body)).await })
        })
        .collect();
    let mut bodies = Vec::new();
    for h in handles {
        let (status, bytes) = h.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        bodies.push(bytes);
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}
