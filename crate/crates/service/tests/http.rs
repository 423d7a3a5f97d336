use std::io::Cursor;

use axum::body::{Body, Bytes};
use axum::http::{header, HeaderMap, Method, Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use http_body_util::BodyExt;
use lsm_core::driver::{run_task, SolverConfig, TaskInputs};
use lsm_core::io::{decode_mask_png, decode_png, encode_mask_png, encode_png, Polylines};
use lsm_core::synthetic::{iou, two_color_disk, two_color_split};
use lsm_core::Grid;
use lsm_service::{app, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

const W: usize = 128;
const H: usize = 96;

fn service() -> Router {
    app(ServiceConfig::default()).unwrap()
}

struct Reply {
    status: StatusCode,
    headers: HeaderMap,
    body: Bytes,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|_| panic!("not JSON: {:?}", self.body))
    }
}

async fn send(app: &Router, req: Request<Body>) -> Reply {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes();
    Reply { status, headers, body }
}

async fn post_png(app: &Router, png: Vec<u8>) -> Reply {
    let req = Request::post("/sessions").header(header::CONTENT_TYPE, "image/png").body(Body::from(png)).unwrap();
    send(app, req).await
}

async fn create(app: &Router, image: &Grid) -> String {
    let reply = post_png(app, encode_png(image).unwrap()).await;
    assert_eq!(reply.status, StatusCode::CREATED);
    reply.json()["session_id"].as_str().unwrap().to_owned()
}

async fn scribble(app: &Router, id: &str, batch: &Value, if_match: Option<&str>) -> Reply {
    let mut req = Request::post(format!("/sessions/{id}/scribbles")).header(header::CONTENT_TYPE, "application/json");
    if let Some(rev) = if_match {
        req = req.header(header::IF_MATCH, rev);
    }
    send(app, req.body(Body::from(batch.to_string())).unwrap()).await
}

async fn get(app: &Router, uri: &str) -> Reply {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

fn mask_of(reply: &Reply) -> Vec<u8> {
    BASE64.decode(reply.json()["mask"].as_str().unwrap()).unwrap()
}

fn split_fixture() -> (Grid, Grid) {
    two_color_split(W, H).unwrap()
}

fn disk_fixture() -> (Grid, Grid) {
    two_color_disk(W, H, 64.0, 48.0, 28.0).unwrap()
}

fn split_fg() -> Value {
    json!([[16, 48], [32, 48]])
}

fn split_bg() -> Value {
    json!([[96, 48], [112, 48]])
}

fn split_fg2() -> Value {
    json!([[20, 10], [20, 80]])
}

/// Mask a cold solve produces for the accumulated scribble set.
fn cold_mask(image: &Grid, batch: &Value) -> Vec<u8> {
    let polylines: Polylines = serde_json::from_value(batch.clone()).unwrap();
    let mut scribbles = polylines.rasterize(W, H).unwrap();
    for pts in [&mut scribbles.foreground, &mut scribbles.background] {
        pts.sort_unstable();
        pts.dedup();
    }
    // the service sees the image after 8-bit PNG quantization
    let image = decode_png(&encode_png(image).unwrap()).unwrap();
    let result = run_task(&TaskInputs::InteractiveSeg { image, scribbles }, &SolverConfig::default()).unwrap();
    encode_mask_png(&result.mask().unwrap()).unwrap()
}

#[tokio::test]
async fn create_session_validates_the_upload() {
    let app = service();
    let (img, _) = split_fixture();
    let png = encode_png(&img).unwrap();

    let ok = post_png(&app, png.clone()).await;
    assert_eq!(ok.status, StatusCode::CREATED);
    let body = ok.json();
    let id = body["session_id"].as_str().unwrap();
    assert!(!id.is_empty());
    assert_eq!((body["width"].as_u64(), body["height"].as_u64()), (Some(W as u64), Some(H as u64)));
    assert_eq!(ok.headers[header::LOCATION], format!("/sessions/{id}").as_str());

    assert_eq!(post_png(&app, png[..png.len() / 2].to_vec()).await.status, StatusCode::BAD_REQUEST);
    assert_eq!(post_png(&app, b"definitely not a png".to_vec()).await.status, StatusCode::BAD_REQUEST);
    assert_eq!(post_png(&app, Vec::new()).await.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn oversized_images_are_rejected() {
    let app = service();
    let big = image::GrayImage::new(4096, 4096);
    let mut png = Vec::new();
    image::DynamicImage::ImageLuma8(big)
        .write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
        .unwrap();
    let reply = post_png(&app, png.clone()).await;
    assert_eq!(reply.status, StatusCode::PAYLOAD_TOO_LARGE);
    assert!(reply.json()["error"].as_str().unwrap().contains("4096x4096"));

    // the size check reads only the header
    assert_eq!(post_png(&app, png[..64].to_vec()).await.status, StatusCode::PAYLOAD_TOO_LARGE);

    let small = lsm_service::app(ServiceConfig { max_width: 64, max_height: 64, ..ServiceConfig::default() }).unwrap();
    let (img, _) = split_fixture();
    assert_eq!(post_png(&small, encode_png(&img).unwrap()).await.status, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn first_scribbles_segment_the_two_color_fixture() {
    let app = service();
    let (img, truth) = split_fixture();
    let id = create(&app, &img).await;
    let reply = scribble(&app, &id, &json!({"foreground": [split_fg()], "background": [split_bg()]}), None).await;
    assert_eq!(reply.status, StatusCode::OK, "{:?}", reply.body);
    let body = reply.json();
    assert_eq!(body["revision"], 1);
    assert!(body.get("iou_estimate").is_none());
    assert_eq!(reply.headers[header::ETAG], "\"1\"");
    let mask = decode_mask_png(&mask_of(&reply)).unwrap();
    assert!(iou(&mask, &truth).unwrap() >= 0.95);
}

#[tokio::test]
async fn error_paths() {
    let app = service();
    let (img, _) = split_fixture();
    let id = create(&app, &img).await;
    let both = json!({"foreground": [split_fg()], "background": [split_bg()]});

    let early = get(&app, &format!("/sessions/{id}/mask")).await;
    assert_eq!(early.status, StatusCode::CONFLICT);
    assert!(early.json()["error"].as_str().unwrap().contains("no mask yet"));

    for bad in [
        json!({"foreground": [], "background": []}),
        json!({}),
        json!({"foreground": [[]], "background": [split_bg()]}),
        json!({"foreground": [[[5, 5], [500, 5]]], "background": [split_bg()]}),
        json!({"foreground": [[[-1, 5]]], "background": [split_bg()]}),
        json!({"foreground": [split_fg()]}),
    ] {
        let r = scribble(&app, &id, &bad, None).await;
        assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY, "{bad}");
    }
    // rejected batches leave the session untouched
    assert_eq!(get(&app, &format!("/sessions/{id}")).await.json()["revision"], 0);

    assert_eq!(scribble(&app, "nope", &both, None).await.status, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/sessions/nope/mask").await.status, StatusCode::NOT_FOUND);

    assert_eq!(scribble(&app, &id, &both, Some("\"3\"")).await.status, StatusCode::CONFLICT);
    assert_eq!(scribble(&app, &id, &both, Some("0")).await.status, StatusCode::OK);
    // replaying the same body with the now stale revision is rejected
    assert_eq!(scribble(&app, &id, &both, Some("0")).await.status, StatusCode::CONFLICT);
    let second = scribble(&app, &id, &both, Some("\"1\"")).await;
    assert_eq!(second.status, StatusCode::OK, "{:?}", second.body);
    assert_eq!(scribble(&app, &id, &both, Some("one")).await.status, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, &format!("/sessions/{id}")).await.json()["revision"], 2);

    let delete = |uri: String| send(&app, Request::delete(uri).body(Body::empty()).unwrap());
    assert_eq!(delete(format!("/sessions/{id}")).await.status, StatusCode::NO_CONTENT);
    assert_eq!(get(&app, &format!("/sessions/{id}/mask")).await.status, StatusCode::NOT_FOUND);
    assert_eq!(delete(format!("/sessions/{id}")).await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn get_mask_returns_the_posted_bytes() {
    let app = service();
    let (img, _) = split_fixture();
    let id = create(&app, &img).await;
    let posted = scribble(&app, &id, &json!({"foreground": [split_fg()], "background": [split_bg()]}), None).await;
    let fetched = get(&app, &format!("/sessions/{id}/mask")).await;
    assert_eq!(fetched.status, StatusCode::OK);
    assert_eq!(fetched.headers[header::CONTENT_TYPE], "image/png");
    assert_eq!(fetched.headers[header::ETAG], "\"1\"");
    assert_eq!(fetched.body.to_vec(), mask_of(&posted));
}

#[tokio::test]
async fn masks_depend_only_on_the_accumulated_scribble_set() {
    let app = service();
    let (img, _) = split_fixture();
    let all = json!({"foreground": [split_fg(), split_fg2()], "background": [split_bg()]});
    let histories = [
        vec![all.clone()],
        vec![
            json!({"foreground": [split_fg()], "background": [split_bg()]}),
            json!({"foreground": [split_fg2()]}),
        ],
        vec![
            json!({"foreground": [split_fg2()], "background": [split_bg()]}),
            json!({"foreground": [split_fg()], "background": [split_bg()]}),
        ],
        vec![json!({"background": [split_bg()], "foreground": [split_fg2(), split_fg()]})],
    ];
    let mut masks = Vec::new();
    for history in histories {
        let id = create(&app, &img).await;
        let mut last = None;
        for batch in &history {
            let r = scribble(&app, &id, batch, None).await;
            assert_eq!(r.status, StatusCode::OK);
            last = Some(mask_of(&r));
        }
        masks.push(last.unwrap());
    }
    assert!(masks.windows(2).all(|w| w[0] == w[1]));
    // warm starts land on the same mask as a cold solve of the full set
    assert_eq!(masks[1], cold_mask(&img, &all));
}

#[tokio::test]
async fn warm_start_matches_cold_start_on_the_disk_fixture() {
    let app = service();
    let (img, truth) = disk_fixture();
    let id = create(&app, &img).await;
    let first = json!({"foreground": [[[58, 48], [70, 48]]], "background": [[[4, 4], [40, 4]]]});
    let second = json!({"background": [[[100, 90], [124, 90]]]});
    assert_eq!(scribble(&app, &id, &first, None).await.status, StatusCode::OK);
    let warm = scribble(&app, &id, &second, None).await;
    let combined = json!({
        "foreground": [[[58, 48], [70, 48]]],
        "background": [[[4, 4], [40, 4]], [[100, 90], [124, 90]]]
    });
    let warm_mask = mask_of(&warm);
    assert_eq!(warm_mask, cold_mask(&img, &combined));
    assert!(iou(&decode_mask_png(&warm_mask).unwrap(), &truth).unwrap() >= 0.95);
}

#[tokio::test]
async fn ground_truth_enables_iou_estimates() {
    let app = service();
    let (img, truth) = split_fixture();
    let id = create(&app, &img).await;
    let put = |body: Vec<u8>| {
        send(
            &app,
            Request::put(format!("/sessions/{id}/ground-truth")).body(Body::from(body)).unwrap(),
        )
    };
    let wrong_size = Grid::zeros(10, 10, 1).unwrap();
    assert_eq!(put(encode_mask_png(&wrong_size).unwrap()).await.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(put(b"junk".to_vec()).await.status, StatusCode::BAD_REQUEST);
    assert_eq!(put(encode_mask_png(&truth).unwrap()).await.status, StatusCode::NO_CONTENT);

    let r = scribble(&app, &id, &json!({"foreground": [split_fg()], "background": [split_bg()]}), None).await;
    let est = r.json()["iou_estimate"].as_f64().unwrap();
    let mask = decode_mask_png(&mask_of(&r)).unwrap();
    assert_eq!(est, iou(&mask, &truth).unwrap());
    assert!(est >= 0.95);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn interleaved_sessions_stay_isolated() {
    let app = service();
    let (split_img, split_truth) = split_fixture();
    let (disk_img, disk_truth) = disk_fixture();
    let a = create(&app, &split_img).await;
    let b = create(&app, &disk_img).await;
    let a_batch = json!({"foreground": [split_fg()], "background": [split_bg()]});
    let b_batch = json!({"foreground": [[[58, 48], [70, 48]]], "background": [[[4, 4], [40, 4]]]});

    let (ra, rb) = tokio::join!(scribble(&app, &a, &a_batch, None), scribble(&app, &b, &b_batch, None));
    let (ma, mb) = (mask_of(&ra), mask_of(&rb));
    assert!(iou(&decode_mask_png(&ma).unwrap(), &split_truth).unwrap() >= 0.95);
    assert!(iou(&decode_mask_png(&mb).unwrap(), &disk_truth).unwrap() >= 0.95);
    assert_ne!(ma, mb);

    // concurrent updates to one session are serialized: revisions 2 and 3
    let extra = json!({"foreground": [split_fg2()]});
    let b_extra = json!({"background": [[[100, 90], [124, 90]]]});
    let (r1, r2, rb2) = tokio::join!(
        scribble(&app, &a, &extra, None),
        scribble(&app, &a, &extra, None),
        scribble(&app, &b, &b_extra, None)
    );
    let mut revs = vec![r1.json()["revision"].as_u64().unwrap(), r2.json()["revision"].as_u64().unwrap()];
    revs.sort_unstable();
    assert_eq!(revs, vec![2, 3]);
    assert_eq!(rb2.json()["revision"], 2);
    assert!(iou(&decode_mask_png(&mask_of(&rb2)).unwrap(), &disk_truth).unwrap() >= 0.95);
    let final_a = get(&app, &format!("/sessions/{a}/mask")).await;
    assert!(iou(&decode_mask_png(&final_a.body).unwrap(), &split_truth).unwrap() >= 0.95);
}

#[tokio::test]
async fn cors_allows_configured_origins() {
    let app = app(ServiceConfig {
        allow_origins: vec!["http://localhost:5173".into()],
        ..ServiceConfig::default()
    })
    .unwrap();
    let preflight = Request::builder()
        .method(Method::OPTIONS)
        .uri("/sessions")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let reply = send(&app, preflight).await;
    assert_eq!(reply.headers[header::ACCESS_CONTROL_ALLOW_ORIGIN], "http://localhost:5173");

    let foreign = Request::get("/sessions/x/mask")
        .header(header::ORIGIN, "http://evil.example")
        .body(Body::empty())
        .unwrap();
    assert!(send(&app, foreign).await.headers.get(header::ACCESS_CONTROL_ALLOW_ORIGIN).is_none());

    assert!(lsm_service::app(ServiceConfig {
        allow_origins: vec!["bad\norigin".into()],
        ..ServiceConfig::default()
    })
    .is_err());
}
