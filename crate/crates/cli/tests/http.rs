use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;
use vesselunits::fixtures::crossing_and_branch;
use vesselunits::pipeline::{run_image, ClusterParams, KernelCache, RunParams};
use vesselunits::report::Manifest;
use vesselunits_cli::server::{router, AppState, PatchList};

fn params() -> RunParams {
    RunParams {
        defaults: ClusterParams {
            h: Some(7),
            ..ClusterParams::default()
        },
        overrides: Default::default(),
    }
}

fn app() -> Router {
    let f = crossing_and_branch();
    let state = AppState::new(f.image, f.seg, params(), KernelCache::new(None)).unwrap();
    router(Arc::new(state))
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &Router, uri: &str, body: &str) -> (StatusCode, Vec<u8>) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_owned()))
        .unwrap();
    send(app, req).await
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

const PNG_MAGIC: &[u8] = b"\x89PNG";

#[tokio::test]
async fn lists_patches_with_effective_params() {
    let app = app();
    let (status, body) = get(&app, "/patches").await;
    assert_eq!(status, StatusCode::OK);
    let list: PatchList = serde_json::from_slice(&body).unwrap();
    assert_eq!((list.width, list.height), (120, 60));
    assert_eq!(list.patches.len(), 2);
    assert!(list.patches.iter().all(|p| p.params.h == Some(7) && p.rect.is_some()));
}

#[tokio::test]
async fn serves_patch_crops() {
    let app = app();
    for layer in ["", "?layer=seg"] {
        let (status, body) = get(&app, &format!("/patch/0/image{layer}")).await;
        assert_eq!(status, StatusCode::OK);
        assert!(body.starts_with(PNG_MAGIC));
    }
    assert_eq!(get(&app, "/patch/99/image").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/patch/0/image?layer=rgb").await.0, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn clusters_the_crossing_into_two_vessels() {
    let app = app();
    for id in 0..2 {
        let (status, body) = post(&app, &format!("/patch/{id}/cluster"), "{}").await;
        assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
        let reply = json(&body);
        assert_eq!(reply["summary"]["n_clusters"], 2, "patch {id}");
        assert_eq!(reply["points"].as_array().unwrap().len(), reply["summary"]["n_points"].as_u64().unwrap() as usize);
    }
}

#[tokio::test]
async fn identical_requests_give_identical_bytes() {
    let app = app();
    let body = r#"{"sigma2": 0.2, "epsilon": 0.2}"#;
    let a = post(&app, "/patch/0/cluster", body).await;
    let b = post(&app, "/patch/0/cluster", body).await;
    assert_eq!(a.0, StatusCode::OK);
    assert_eq!(a, b);
}

#[tokio::test]
async fn rejects_bad_parameters_with_422() {
    let app = app();
    for (body, field) in [
        (r#"{"epsilon": 1.5}"#, Some("epsilon")),
        (r#"{"epsilon": 0}"#, Some("epsilon")),
        (r#"{"sigma2": -1}"#, Some("sigma2")),
        (r#"{"colour": 1}"#, None),
        ("not json", None),
    ] {
        let (status, bytes) = post(&app, "/patch/0/cluster", body).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
        let err = json(&bytes);
        assert!(err["error"].is_string(), "{body}");
        if let Some(field) = field {
            assert_eq!(err["field"], field, "{body}");
        }
    }
    assert_eq!(post(&app, "/patch/7/cluster", "{}").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn replies_agree_with_the_manifest() {
    let f = crossing_and_branch();
    let run = run_image(&f.image, &f.seg, &params(), &KernelCache::new(None)).unwrap();
    let manifest = json(Manifest::new("i", "s", params().defaults, Default::default(), &run, |_| vec![]).to_json().as_bytes());

    let app = app();
    for patch in manifest["patches"].as_array().unwrap() {
        let id = patch["id"].as_u64().unwrap();
        let (_, body) = post(&app, &format!("/patch/{id}/cluster"), "{}").await;
        assert_eq!(json(&body)["summary"], patch["summary"], "patch {id}");
    }
}

#[tokio::test]
async fn previews_kernels() {
    let app = app();
    let (status, body) = get(&app, "/kernel/preview?H=5&sigma=0.1&n=20000&scale=2").await;
    assert_eq!(status, StatusCode::OK);
    assert!(body.starts_with(PNG_MAGIC));

    for (query, field) in [("sigma=-1", "sigma"), ("n=100000000", "n"), ("H=1000", "H"), ("scale=0", "scale")] {
        let (status, bytes) = get(&app, &format!("/kernel/preview?{query}")).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{query}");
        assert_eq!(json(&bytes)["field"], field, "{query}");
    }
}
