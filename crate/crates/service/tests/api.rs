use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use alignkit_core::human::{aggregate_items, aggregate_sxs, SxsVote};
use alignkit_core::records::{load_annotations, RatingRecord, TemplateKind};
use alignkit_service::{router, AppState, CampaignSpec, ServiceConfig, Store};
use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const ADMIN: &str = "admin-secret";

fn config(dir: &Path) -> ServiceConfig {
    let raters: BTreeMap<String, String> = (1..=8)
        .map(|i| (format!("r{i}"), format!("tok{i}")))
        .collect();
    ServiceConfig {
        bind: "127.0.0.1:0".into(),
        event_log: dir.join("events.jsonl"),
        media_dir: Some(dir.join("media")),
        admin_token: ADMIN.into(),
        raters,
        lease_secs: 600,
    }
}

fn open(dir: &Path) -> (Router, Arc<Store>) {
    let cfg = config(dir);
    let store = Arc::new(Store::open(&cfg.event_log, cfg.lease()).unwrap());
    (
        router(
            AppState::new(Arc::clone(&store), &cfg),
            cfg.media_dir.as_deref(),
        ),
        store,
    )
}

async fn call(
    app: &Router,
    method: Method,
    uri: &str,
    token: Option<&str>,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes)
            .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn export_text(app: &Router, campaign: &str) -> String {
    let (status, body) = call(
        app,
        Method::GET,
        &format!("/campaigns/{campaign}/export"),
        Some(ADMIN),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    match body {
        Value::String(s) => s,
        Value::Null => String::new(),
        // A single-record export parses as JSON; turn it back into its line.
        other => format!("{other}\n"),
    }
}

fn image(id: &str, model: &str) -> Value {
    json!({ "id": id, "uri": format!("{id}.png"), "model_id": model })
}

fn likert_campaign(id: &str, items: usize, raters: u32) -> Value {
    let items: Vec<Value> = (0..items)
        .map(|i| {
            json!({
                "prompt_id": format!("p{i}"),
                "prompt_text": "A red colored dog.",
                "template": "likert",
                "images": [image(&format!("img{i}"), "m1")],
            })
        })
        .collect();
    json!({ "id": id, "prompt_set_id": "fixture", "raters_per_item": raters, "items": items })
}

async fn submit(app: &Router, item: &str, rater: &str, payload: Value) -> (StatusCode, Value) {
    let token = format!("tok{}", &rater[1..]);
    call(
        app,
        Method::POST,
        &format!("/tasks/{item}/submit"),
        Some(&token),
        Some(json!({ "rater": rater, "payload": payload })),
    )
    .await
}

#[tokio::test]
async fn three_raters_fill_an_item_and_a_fourth_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = open(dir.path());
    let (status, created) = call(
        &app,
        Method::POST,
        "/campaigns",
        Some(ADMIN),
        Some(likert_campaign("c1", 1, 3)),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(created["items"], json!(["c1-0000"]));

    for (r, v) in [("r1", 5), ("r2", 4), ("r3", 5)] {
        let (status, ack) = submit(&app, "c1-0000", r, json!({ "value": v })).await;
        assert_eq!(status, StatusCode::OK, "{ack}");
        assert_eq!(ack["duplicate"], false);
    }
    let (status, prog) = call(
        &app,
        Method::GET,
        "/campaigns/c1/progress",
        Some("tok1"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        (prog["submitted"].as_u64(), prog["required"].as_u64()),
        (Some(3), Some(3))
    );
    assert_eq!(prog["complete_items"], 1);
    assert_eq!(prog["by_template"]["likert"]["submitted"], 3);

    let (status, err) = submit(&app, "c1-0000", "r4", json!({ "value": 1 })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "over_subscribed");

    let text = export_text(&app, "c1").await;
    let records: Vec<RatingRecord> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 3);
    assert_eq!(
        records
            .iter()
            .map(|r| r.rater_id.as_str())
            .collect::<Vec<_>>(),
        ["r1", "r2", "r3"]
    );
    let scores = aggregate_items(&records);
    assert_eq!(scores.len(), 1);
    assert!((scores[0].score.unwrap() - (1.0 + 0.75 + 1.0) / 3.0).abs() < 1e-12);
}

#[tokio::test]
async fn resubmission_is_idempotent_only_for_identical_payloads() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = open(dir.path());
    call(
        &app,
        Method::POST,
        "/campaigns",
        Some(ADMIN),
        Some(likert_campaign("c1", 1, 2)),
    )
    .await;
    assert_eq!(
        submit(&app, "c1-0000", "r1", json!({ "value": 3 })).await.0,
        StatusCode::OK
    );
    let (status, ack) = submit(&app, "c1-0000", "r1", json!({ "value": 3 })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack["duplicate"], true);
    assert_eq!(ack["submitted"], 1);
    let (status, err) = submit(&app, "c1-0000", "r1", json!({ "value": 4 })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "payload_conflict");
    // A repeat from a rater who is already counted is still fine once the item is full.
    assert_eq!(
        submit(&app, "c1-0000", "r2", json!({ "value": "unsure" }))
            .await
            .0,
        StatusCode::OK
    );
    assert_eq!(
        submit(&app, "c1-0000", "r2", json!({ "value": "unsure" }))
            .await
            .1["duplicate"],
        true
    );
    assert_eq!(export_text(&app, "c1").await.lines().count(), 2);

    // Posting the same campaign again is accepted; a changed definition is not.
    let (status, body) = call(
        &app,
        Method::POST,
        "/campaigns",
        Some(ADMIN),
        Some(likert_campaign("c1", 1, 2)),
    )
    .await;
    assert_eq!(
        (status, body["created"].clone()),
        (StatusCode::OK, json!(false))
    );
    let (status, _) = call(
        &app,
        Method::POST,
        "/campaigns",
        Some(ADMIN),
        Some(likert_campaign("c1", 2, 2)),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn schema_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = open(dir.path());
    let spec = json!({
        "id": "c2",
        "prompt_set_id": "fixture",
        "items": [
            { "item_id": "wl", "prompt_id": "p1", "prompt_text": "A red colored dog.", "template": "word_level",
              "images": [image("i1", "m1")] },
            { "item_id": "dsg", "prompt_id": "p1", "prompt_text": "A red colored dog.", "template": "dsg_h",
              "images": [image("i1", "m1")],
              "questions": [{ "id": "1.1", "text": "is the dog red?" }, { "id": "2.1", "text": "is there a dog?" }] },
            { "item_id": "sxs", "prompt_id": "p1", "prompt_text": "A red colored dog.", "template": "sxs",
              "images": [image("i1", "m1"), image("i2", "m2")] },
            { "item_id": "lk", "prompt_id": "p1", "prompt_text": "A red colored dog.", "template": "likert",
              "images": [image("i1", "m1")] },
        ]
    });
    assert_eq!(
        call(&app, Method::POST, "/campaigns", Some(ADMIN), Some(spec))
            .await
            .0,
        StatusCode::CREATED
    );

    let (status, err) = submit(
        &app,
        "wl",
        "r1",
        json!({ "labels": ["aligned", "aligned", "not_aligned"] }),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["field"], "labels");
    assert!(
        err["message"]
            .as_str()
            .unwrap()
            .contains("3 labels but the prompt has 4 words"),
        "{err}"
    );
    let (status, err) = submit(
        &app,
        "wl",
        "r1",
        json!({ "labels": ["aligned", "maybe", "aligned", "aligned"] }),
    )
    .await;
    assert_eq!(
        (status, err["field"].as_str()),
        (StatusCode::UNPROCESSABLE_ENTITY, Some("labels[1]"))
    );

    let (status, err) = submit(
        &app,
        "dsg",
        "r1",
        json!({ "question_ids": ["1.1"], "answers": ["yes"] }),
    )
    .await;
    assert_eq!(
        (status, err["field"].as_str()),
        (StatusCode::UNPROCESSABLE_ENTITY, Some("question_ids"))
    );

    let (status, err) = submit(
        &app,
        "sxs",
        "r1",
        json!({ "image_a": "i2", "image_b": "i1", "choice": "image_a" }),
    )
    .await;
    assert_eq!(
        (status, err["field"].as_str()),
        (StatusCode::UNPROCESSABLE_ENTITY, Some("image_a"))
    );

    let (status, err) = submit(&app, "lk", "r1", json!({ "value": 6 })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(err["message"]
        .as_str()
        .unwrap()
        .contains("rating out of range"));

    for (i, choice) in ["image_a", "image_a", "image_b"].iter().enumerate() {
        let r = format!("r{}", i + 1);
        let (status, body) = submit(
            &app,
            "sxs",
            &r,
            json!({ "image_a": "i1", "image_b": "i2", "choice": choice }),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{body}");
    }
    let (status, _) = submit(
        &app,
        "dsg",
        "r1",
        json!({ "question_ids": ["1.1", "2.1"], "answers": ["yes", "no"] }),
    )
    .await;
    assert_eq!(status, StatusCode::OK);

    let text = export_text(&app, "c2").await;
    let records: Vec<RatingRecord> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let sxs: Vec<_> = records
        .iter()
        .filter(|r| r.template == TemplateKind::Sxs)
        .cloned()
        .collect();
    assert_eq!(sxs[0].image_id, "i1|i2");
    assert_eq!(sxs[0].model_id, "m1|m2");
    let outcome = aggregate_sxs(&sxs);
    assert_eq!(outcome[0].outcome, SxsVote::ImageA);
    assert_eq!(
        (outcome[0].model_a.as_str(), outcome[0].model_b.as_str()),
        ("m1", "m2")
    );
}

#[tokio::test]
async fn invalid_campaigns_and_auth_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = open(dir.path());
    let bad = json!({ "id": "c", "prompt_set_id": "s", "items": [
        { "prompt_id": "p", "prompt_text": "x", "template": "sxs", "images": [image("i1", "m1")] }
    ]});
    let (status, err) = call(&app, Method::POST, "/campaigns", Some(ADMIN), Some(bad)).await;
    assert_eq!(
        (status, err["error"].as_str()),
        (StatusCode::BAD_REQUEST, Some("invalid_campaign"))
    );
    let (status, _) = call(
        &app,
        Method::POST,
        "/campaigns",
        Some("tok1"),
        Some(likert_campaign("c", 1, 1)),
    )
    .await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = call(
        &app,
        Method::POST,
        "/campaigns",
        Some(ADMIN),
        Some(json!({ "id": "c" })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    call(
        &app,
        Method::POST,
        "/campaigns",
        Some(ADMIN),
        Some(likert_campaign("c", 1, 1)),
    )
    .await;
    assert_eq!(
        call(&app, Method::GET, "/tasks/next?rater=r1", None, None)
            .await
            .0,
        StatusCode::UNAUTHORIZED
    );
    assert_eq!(
        call(
            &app,
            Method::GET,
            "/tasks/next?rater=r2",
            Some("tok1"),
            None
        )
        .await
        .0,
        StatusCode::FORBIDDEN
    );
    assert_eq!(
        call(&app, Method::GET, "/campaigns/c/export", Some("tok1"), None)
            .await
            .0,
        StatusCode::UNAUTHORIZED
    );
    assert_eq!(
        call(
            &app,
            Method::GET,
            "/campaigns/nope/progress",
            Some(ADMIN),
            None
        )
        .await
        .0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        submit(&app, "nope", "r1", json!({ "value": 1 })).await.0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn tasks_describe_the_item_and_media_is_served() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("media")).unwrap();
    std::fs::write(dir.path().join("media/img0.png"), b"png-bytes").unwrap();
    let (app, _) = open(dir.path());
    call(
        &app,
        Method::POST,
        "/campaigns",
        Some(ADMIN),
        Some(likert_campaign("c", 1, 1)),
    )
    .await;
    let (status, task) = call(
        &app,
        Method::GET,
        "/tasks/next?rater=r1",
        Some("tok1"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(task["item_id"], "c-0000");
    assert_eq!(task["words"], json!(["A", "red", "colored", "dog."]));
    assert_eq!(task["images"][0]["url"], "/media/img0.png");
    // Asking again before submitting returns the same reservation.
    assert_eq!(
        call(
            &app,
            Method::GET,
            "/tasks/next?rater=r1",
            Some("tok1"),
            None
        )
        .await
        .1["item_id"],
        "c-0000"
    );
    // The only slot is reserved by r1.
    assert_eq!(
        call(
            &app,
            Method::GET,
            "/tasks/next?rater=r2",
            Some("tok2"),
            None
        )
        .await
        .0,
        StatusCode::NO_CONTENT
    );
    submit(&app, "c-0000", "r1", json!({ "value": 2 })).await;
    assert_eq!(
        call(
            &app,
            Method::GET,
            "/tasks/next?rater=r1",
            Some("tok1"),
            None
        )
        .await
        .0,
        StatusCode::NO_CONTENT
    );

    let resp = app
        .clone()
        .oneshot(Request::get("/media/img0.png").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(
        &resp.into_body().collect().await.unwrap().to_bytes()[..],
        b"png-bytes"
    );
}

#[tokio::test]
async fn export_after_restart_holds_exactly_the_acked_submissions() {
    let dir = tempfile::tempdir().unwrap();
    let before = {
        let (app, _) = open(dir.path());
        call(
            &app,
            Method::POST,
            "/campaigns",
            Some(ADMIN),
            Some(likert_campaign("c", 3, 2)),
        )
        .await;
        let mut acked = 0;
        for (item, rater, v) in [
            ("c-0000", "r1", 5),
            ("c-0001", "r1", 4),
            ("c-0000", "r2", 1),
            ("c-0000", "r3", 2),
        ] {
            if submit(&app, item, rater, json!({ "value": v })).await.0 == StatusCode::OK {
                acked += 1;
            }
        }
        assert_eq!(acked, 3);
        export_text(&app, "c").await
    };
    // Simulate a crash in the middle of writing a record that was never acked.
    let log = dir.path().join("events.jsonl");
    let mut bytes = std::fs::read(&log).unwrap();
    bytes.extend_from_slice(br#"{"event":"submitted","item_id":"c-0002","rater_id":"r1","payl"#);
    std::fs::write(&log, bytes).unwrap();

    let (app, _) = open(dir.path());
    let after = export_text(&app, "c").await;
    assert_eq!(before, after);
    assert_eq!(after.lines().count(), 3);
    // The log is usable again after the torn tail is dropped.
    assert_eq!(
        submit(&app, "c-0002", "r1", json!({ "value": 3 })).await.0,
        StatusCode::OK
    );
    drop(app);
    let (app, _) = open(dir.path());
    let text = export_text(&app, "c").await;
    assert_eq!(text.lines().count(), 4);

    let path = dir.path().join("export.jsonl");
    std::fs::write(&path, &text).unwrap();
    let loaded = load_annotations(&path).unwrap();
    assert_eq!(loaded.len(), 4);
    assert_eq!(loaded[0].extra["item_id"], "c-0000");
}

#[test]
fn corrupt_log_lines_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    std::fs::write(&log, "{\"event\":\"nonsense\"}\n").unwrap();
    let err = Store::open(&log, Duration::from_secs(1)).err().unwrap();
    assert!(err.to_string().contains("line 1"), "{err}");
}

#[test]
fn round_robin_assignment_stays_balanced() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(&dir.path().join("e.jsonl"), Duration::from_secs(600)).unwrap();
    let spec: CampaignSpec = serde_json::from_value(likert_campaign("c", 5, 3)).unwrap();
    store.create_campaign(spec).unwrap();
    let raters: Vec<String> = (1..=7).map(|i| format!("r{i}")).collect();
    let mut done: BTreeMap<String, Vec<String>> = BTreeMap::new();
    loop {
        let mut progressed = false;
        for r in &raters {
            let Some(task) = store.next_task(r) else {
                continue;
            };
            assert!(
                !done.get(r).is_some_and(|d| d.contains(&task.item_id)),
                "{r} got {} twice",
                task.item_id
            );
            store
                .submit(&task.item_id, r, json!({ "value": 3 }))
                .unwrap();
            done.entry(r.clone()).or_default().push(task.item_id);
            progressed = true;
            let counts: Vec<u64> = {
                let export = store.export("c").unwrap();
                (0..5)
                    .map(|i| {
                        export
                            .iter()
                            .filter(|x| x.prompt_id == format!("p{i}"))
                            .count() as u64
                    })
                    .collect()
            };
            let open: Vec<u64> = counts.iter().copied().filter(|c| *c < 3).collect();
            if let (Some(lo), Some(hi)) = (open.iter().min(), counts.iter().max()) {
                assert!(hi - lo <= 1, "unbalanced counts {counts:?}");
            }
        }
        if !progressed {
            break;
        }
    }
    assert_eq!(store.progress("c").unwrap().total.submitted, 15);
}

#[test]
fn concurrent_submissions_never_exceed_the_limit() {
    let dir = tempfile::tempdir().unwrap();
    let store =
        Arc::new(Store::open(&dir.path().join("e.jsonl"), Duration::from_secs(600)).unwrap());
    let spec: CampaignSpec = serde_json::from_value(likert_campaign("c", 1, 3)).unwrap();
    store.create_campaign(spec).unwrap();
    let handles: Vec<_> = (0..16)
        .map(|i| {
            let store = Arc::clone(&store);
            std::thread::spawn(move || {
                store
                    .submit("c-0000", &format!("r{i}"), json!({ "value": 1 }))
                    .is_ok()
            })
        })
        .collect();
    let ok = handles
        .into_iter()
        .filter_map(|h| h.join().ok())
        .filter(|ok| *ok)
        .count();
    assert_eq!(ok, 3);
    assert_eq!(store.export("c").unwrap().len(), 3);
    drop(store);
    let reopened = Store::open(&dir.path().join("e.jsonl"), Duration::from_secs(600)).unwrap();
    assert_eq!(reopened.export("c").unwrap().len(), 3);
}
