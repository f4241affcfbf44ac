use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use opingraph_core::graph::GraphFile;
use opingraph_core::OpinionGraph;
use opingraph_service::http::router;
use opingraph_service::*;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = axum::body::to_bytes(response.into_body(), usize::MAX).await.unwrap();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

#[tokio::test]
async fn full_collection_round() {
    let app = router(Arc::new(SurveyStore::in_memory(StoreConfig::default())));
    assert_eq!(call(&app, "GET", "/health", None).await, (StatusCode::OK, json!("ok")));

    let survey = json!({
        "id": "s", "title": "election",
        "questions": [{"id": "q", "prompt": "Who and why?", "seeds": ["a", "b", "c", "d"]}]
    });
    let (status, body) = call(&app, "POST", "/surveys", Some(survey.clone())).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["questions"][0]["sample_size"], 6);
    assert_eq!(call(&app, "POST", "/surveys", Some(survey)).await.0, StatusCode::CONFLICT);
    assert_eq!(call(&app, "GET", "/surveys/s", None).await.1["title"], "election");
    assert_eq!(call(&app, "GET", "/surveys/x", None).await.0, StatusCode::NOT_FOUND);

    let base = "/surveys/s/questions/q";
    let (status, body) = call(&app, "POST", &format!("{base}/responses"), Some(json!({"respondent": "amy", "text": "mine"}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["status"], "recorded");
    let (status, body) = call(&app, "POST", &format!("{base}/responses"), Some(json!({"respondent": "ben"}))).await;
    assert_eq!((status, body["status"].clone()), (StatusCode::CREATED, json!("deferred")));
    let (status, _) = call(&app, "POST", &format!("{base}/responses"), Some(json!({"respondent": "cat", "text": ""}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, sample) = call(&app, "GET", &format!("{base}/sample?respondent=amy&k=3"), None).await;
    assert_eq!(status, StatusCode::OK);
    let items = sample["items"].as_array().unwrap();
    assert_eq!(items.len(), 3);
    let selections: Vec<Value> = items
        .iter()
        .enumerate()
        .map(|(k, i)| json!({"id": i["id"], "similar": k == 0}))
        .collect();
    let judgment = json!({"ticket": sample["ticket"], "selections": selections});
    let (status, out) = call(&app, "POST", &format!("{base}/judgments"), Some(judgment.clone())).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!((out["positive"].clone(), out["negative"].clone()), (json!(1), json!(2)));
    assert_eq!(call(&app, "POST", &format!("{base}/judgments"), Some(judgment)).await.0, StatusCode::CONFLICT);

    let (status, graph) = call(&app, "GET", &format!("{base}/graph"), None).await;
    assert_eq!(status, StatusCode::OK);
    let file: GraphFile = serde_json::from_value(graph).unwrap();
    let g = OpinionGraph::from_file(file).unwrap();
    assert_eq!((g.n(), g.m()), (5, 3));

    let (_, balanced) = call(&app, "GET", &format!("{base}/graph?neutralize=true&seed=3"), None).await;
    let g = OpinionGraph::from_file(serde_json::from_value(balanced).unwrap()).unwrap();
    assert_eq!(g.m(), 2);
    assert_eq!(call(&app, "GET", &format!("{base}/sample?respondent=zed"), None).await.0, StatusCode::NOT_FOUND);
}
