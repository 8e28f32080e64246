use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use rbpasta::attention::FusionMode;
use rbpasta::classes::{partition_by_rarity, ClassId, DEFAULT_RARITY_THRESHOLD};
use rbpasta::eval::{EvalReport, Setting};
use rbpasta::io::{to_json_pretty, to_jsonl};
use rbpasta::parts::BodyPart;
use rbpasta::rules::{booleanize, RuleKind, RuleMatrix};
use rbpasta::service::{router, Session, SessionConfig};
use rbpasta::synth::{generate_benchmark, SynthConfig, SynthDataset};
use rbpasta::trainer::{Checkpoint, ModelParams};
use serde_json::Value;
use tower::ServiceExt;

fn dataset() -> SynthDataset {
    generate_benchmark(&SynthConfig {
        n_classes: 8,
        n_rare: 3,
        test_per_class: 6,
        noise_std: 3.0,
        seed: 5,
        ..SynthConfig::default()
    })
    .unwrap()
}

/// Planted rows softened to sixths on rare classes, ones elsewhere.
fn decimal_rules(ds: &SynthDataset) -> RuleMatrix {
    let partition = partition_by_rarity(&ds.table, DEFAULT_RARITY_THRESHOLD);
    let rows = ds
        .planted
        .rows()
        .iter()
        .map(|(&id, row)| {
            let soft = if partition.is_rare(id) {
                row.map(|w| if w == 1.0 { 5.0 / 6.0 } else { 1.0 / 6.0 })
            } else {
                [1.0; 10]
            };
            (id, soft)
        })
        .collect();
    RuleMatrix::new(RuleKind::Decimal, rows)
}

/// Oracle read-out plus small random weights on every part, so that rule
/// weights change rankings.
fn params(ds: &SynthDataset) -> ModelParams {
    let mut p = ds.oracle_params(4);
    let noise = ModelParams::seeded(ds.config.feature_dim, ds.config.object_dim, 4, &ds.table.ids(), 1);
    for (w, n) in p.head.values_mut().zip(noise.head.values()) {
        *w += 5.0 * n;
    }
    p
}

fn session(ds: &SynthDataset, save_path: Option<std::path::PathBuf>) -> Arc<Session> {
    Session::new(SessionConfig {
        table: ds.table.clone(),
        partition: partition_by_rarity(&ds.table, DEFAULT_RARITY_THRESHOLD),
        records: ds.test.clone(),
        gts: ds.test_gt.clone(),
        params: params(ds),
        rules: Some(decimal_rules(ds)),
        fusion: FusionMode::Mean,
        workers: 2,
        save_path,
    })
    .unwrap()
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("{uri}: {e}: {}", String::from_utf8_lossy(&bytes)))
    };
    (status, value)
}

async fn patch_cell(app: &Router, class: u32, part: &str, weight: f64) -> (StatusCode, Value) {
    let body = format!(r#"{{"part":"{part}","weight":{weight}}}"#);
    call(app, Method::PATCH, &format!("/api/rules/custom/{class}"), Some(&body)).await
}

fn rare_ids(ds: &SynthDataset) -> Vec<u32> {
    let partition = partition_by_rarity(&ds.table, DEFAULT_RARITY_THRESHOLD);
    partition.rare.iter().map(|c| c.0).collect()
}

#[tokio::test]
async fn classes_carry_counts_and_rare_flags() {
    let ds = dataset();
    let app = router(session(&ds, None));
    let (status, body) = call(&app, Method::GET, "/api/classes", None).await;
    assert_eq!(status, StatusCode::OK);
    let entries = body.as_array().unwrap();
    assert_eq!(entries.len(), 8);
    let rare: Vec<u32> = entries
        .iter()
        .filter(|e| e["rare"] == true)
        .map(|e| e["class_id"].as_u64().unwrap() as u32)
        .collect();
    assert_eq!(rare, rare_ids(&ds));
    assert!(entries.iter().all(|e| (e["train_count"].as_u64().unwrap() < 10) == (e["rare"] == true)));
}

#[tokio::test]
async fn variants_are_served_in_the_rules_file_format() {
    let ds = dataset();
    let app = router(session(&ds, None));
    let fetch = |v: &'static str| {
        let app = app.clone();
        async move {
            let (status, body) = call(&app, Method::GET, &format!("/api/rules/{v}"), None).await;
            assert_eq!(status, StatusCode::OK, "{v}");
            RuleMatrix::from_json_str(&body.to_string(), v).unwrap()
        }
    };
    let decimal = fetch("decimal").await;
    assert_eq!(decimal, decimal_rules(&ds));
    assert_eq!(fetch("boolean").await, booleanize(&decimal, 0.5).unwrap());
    assert_eq!(fetch("custom").await, decimal);
    let original = fetch("original").await;
    assert_eq!(original.kind, RuleKind::AllOnes);
    assert!(original.rows().values().all(|r| r == &[1.0; 10]));

    let (status, body) = call(&app, Method::GET, "/api/rules/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "not_found");
}

#[tokio::test]
async fn patch_errors_map_to_status_codes() {
    let ds = dataset();
    let app = router(session(&ds, None));
    let rare = rare_ids(&ds)[0];
    assert_eq!(patch_cell(&app, rare, "Head", 1.3).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(patch_cell(&app, rare, "Head", -0.1).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(patch_cell(&app, rare, "Tail", 0.5).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(patch_cell(&app, 999, "Head", 0.5).await.0, StatusCode::NOT_FOUND);
    let uri = format!("/api/rules/custom/{rare}");
    assert_eq!(call(&app, Method::PATCH, &uri, Some("{\"part\":")).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, Method::PATCH, "/api/rules/custom/abc", Some("{}")).await.0, StatusCode::BAD_REQUEST);
    // nothing above consumed a revision
    let (status, body) = patch_cell(&app, rare, "Head", 0.5).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["revision"], 1);
}

#[tokio::test]
async fn rewriting_a_cell_with_its_value_still_bumps_the_revision() {
    let ds = dataset();
    let app = router(session(&ds, None));
    let class = ds.table.ids().into_iter().find(|c| !rare_ids(&ds).contains(&c.0)).unwrap().0;
    let (_, before) = call(&app, Method::GET, "/api/rules/custom", None).await;
    let (status, body) = patch_cell(&app, class, "LHand", 1.0).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["revision"], 1);
    assert_eq!(body["row"], serde_json::json!(vec![1.0; 10]));
    let (_, after) = call(&app, Method::GET, "/api/rules/custom", None).await;
    assert_eq!(before["rows"], after["rows"]);
}

#[tokio::test]
async fn evaluation_is_cached_and_revision_fenced() {
    let ds = dataset();
    let app = router(session(&ds, None));
    let req = r#"{"variant":"original","setting":"default"}"#;
    let (s1, first) = call(&app, Method::POST, "/api/evaluate", Some(req)).await;
    let (s2, second) = call(&app, Method::POST, "/api/evaluate", Some(req)).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(first, second);
    assert_eq!(first["revision"], 0);

    let rare = rare_ids(&ds)[0];
    patch_cell(&app, rare, "RFoot", 0.5).await;
    let stale = r#"{"variant":"custom","setting":"ko","revision":0}"#;
    let (status, body) = call(&app, Method::POST, "/api/evaluate", Some(stale)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "stale_revision");
    let fresh = r#"{"variant":"custom","setting":"ko","revision":1}"#;
    let (status, body) = call(&app, Method::POST, "/api/evaluate", Some(fresh)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["revision"], 1);
    assert_eq!(body["report"]["setting"], "ko");

    assert_eq!(call(&app, Method::POST, "/api/evaluate", Some("nope")).await.0, StatusCode::BAD_REQUEST);
    let unknown = r#"{"variant":"fancy"}"#;
    assert_eq!(call(&app, Method::POST, "/api/evaluate", Some(unknown)).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_patches_are_linearized() {
    let ds = dataset();
    let app = router(session(&ds, None));
    let rare = rare_ids(&ds);
    let mut edits = Vec::new();
    for (i, part) in BodyPart::ALL.iter().enumerate() {
        edits.push((rare[i % rare.len()], part.name(), 0.5));
    }
    // contended cell: the final value must be the one with the highest revision
    for k in 0..10 {
        edits.push((rare[0], "Head", k as f64 / 10.0));
    }
    let handles: Vec<_> = edits
        .iter()
        .cloned()
        .map(|(c, part, w)| {
            let app = app.clone();
            tokio::spawn(async move {
                let (status, body) = patch_cell(&app, c, part, w).await;
                assert_eq!(status, StatusCode::OK);
                (body["revision"].as_u64().unwrap(), (c, part, w))
            })
        })
        .collect();
    let mut applied = Vec::new();
    for h in handles {
        applied.push(h.await.unwrap());
    }
    applied.sort_by_key(|a| a.0);
    let revisions: Vec<u64> = applied.iter().map(|a| a.0).collect();
    assert_eq!(revisions, (1..=edits.len() as u64).collect::<Vec<_>>());

    // replay in revision order on the starting matrix
    let mut expected = decimal_rules(&ds);
    for (_, (c, part, w)) in &applied {
        expected = expected.with_weight(ClassId(*c), part.parse().unwrap(), *w).unwrap();
    }
    let (_, body) = call(&app, Method::GET, "/api/rules/custom", None).await;
    assert_eq!(RuleMatrix::from_json_str(&body.to_string(), "custom").unwrap(), expected);
}

#[tokio::test]
async fn identity_edits_give_zero_deltas() {
    let ds = dataset();
    let app = router(session(&ds, None));
    let (_, before) = call(&app, Method::GET, "/api/diff?a=original&b=custom", None).await;
    let moved = before["per_class_delta"].as_object().unwrap().values().any(|v| v.as_f64() != Some(0.0));
    assert!(moved, "rules should change some rare class before the identity edits");
    for c in rare_ids(&ds) {
        for part in BodyPart::ALL {
            assert_eq!(patch_cell(&app, c, part.name(), 1.0).await.0, StatusCode::OK);
        }
    }
    for setting in ["default", "ko"] {
        let (status, diff) = call(&app, Method::GET, &format!("/api/diff?a=original&b=custom&setting={setting}"), None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(diff["b_revision"], 30);
        assert!(diff["per_class_delta"].as_object().unwrap().values().all(|v| v.as_f64() == Some(0.0)));
        assert_eq!(diff["map_full_delta"], 0.0);
        assert_eq!(diff["map_rare_delta"], 0.0);
    }
    assert_eq!(call(&app, Method::GET, "/api/diff?a=original", None).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn saved_rules_evaluate_identically_through_the_cli() {
    let ds = dataset();
    let dir = tempfile::TempDir::new().unwrap();
    let saved = dir.path().join("custom.json");
    let app = router(session(&ds, Some(saved.clone())));
    let rare = rare_ids(&ds);
    patch_cell(&app, rare[0], "Head", 0.0).await;
    patch_cell(&app, rare[1], "RHand", 1.0).await;
    patch_cell(&app, rare[2], "Hip", 0.25).await;
    let (status, body) = call(&app, Method::POST, "/api/rules/custom/save", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["revision"], 3);

    let write = |name: &str, text: String| {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p.to_str().unwrap().to_string()
    };
    let classes = write("classes.csv", ds.table.to_csv());
    let test = write("test.jsonl", to_jsonl(&ds.test));
    let gt = write("gt.jsonl", to_jsonl(&ds.test_gt));
    let ckpt = write(
        "ckpt.json",
        to_json_pretty(&Checkpoint {
            params: params(&ds),
            seed: 0,
            iterations: 0,
        }),
    );
    let dets = dir.path().join("dets.jsonl").to_str().unwrap().to_string();
    let bin = env!("CARGO_BIN_EXE_rbpasta");
    let run = |args: &[&str]| {
        let out = std::process::Command::new(bin).args(args).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let saved = saved.to_str().unwrap();
    run(&["score", "--checkpoint", &ckpt, "--instances", &test, "--rules", saved, "--out", &dets]);
    for setting in [Setting::Default, Setting::KnownObject] {
        let cli: EvalReport = serde_json::from_str(&run(&[
            "eval", "--classes", &classes, "--detections", &dets, "--gt", &gt, "--setting", &setting.to_string(),
        ]))
        .unwrap();
        let req = format!(r#"{{"variant":"custom","setting":"{setting}"}}"#);
        let (_, body) = call(&app, Method::POST, "/api/evaluate", Some(&req)).await;
        let served: EvalReport = serde_json::from_value(body["report"].clone()).unwrap();
        assert_eq!(served, cli);
        let bits = |r: &EvalReport| r.per_class_ap.values().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&served), bits(&cli));
    }
}

#[tokio::test]
async fn save_without_a_path_is_refused() {
    let ds = dataset();
    let app = router(session(&ds, None));
    let (status, body) = call(&app, Method::POST, "/api/rules/custom/save", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "config");
}

#[tokio::test]
async fn boolean_rules_leave_the_decimal_variant_unloaded() {
    let ds = dataset();
    let partition = partition_by_rarity(&ds.table, DEFAULT_RARITY_THRESHOLD);
    let s = Session::new(SessionConfig {
        table: ds.table.clone(),
        partition: partition.clone(),
        records: ds.test.clone(),
        gts: ds.test_gt.clone(),
        params: params(&ds),
        rules: Some(ds.planted.restricted_to_rare(&partition)),
        fusion: FusionMode::Mean,
        workers: 1,
        save_path: None,
    })
    .unwrap();
    let app = router(s);
    assert_eq!(call(&app, Method::GET, "/api/rules/decimal", None).await.0, StatusCode::NOT_FOUND);
    let (status, body) = call(&app, Method::GET, "/api/rules/boolean", None).await;
    assert_eq!(status, StatusCode::OK);
    let rows: BTreeMap<String, Vec<f64>> = serde_json::from_value(body["rows"].clone()).unwrap();
    assert_eq!(rows.len(), 8, "missing common rows are filled with ones");
}
