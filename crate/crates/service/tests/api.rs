use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use drumspace::dataset::{write_dataset, PatternRecord};
use drumspace::eval::{filter_pass_rate, make_synthetic_corpus};
use drumspace::latent::{binarize, train, AutoencoderModel, LatentPoint, ModelKind, TrainConfig};
use drumspace::melody::{filter_melody, generate_melody, MelodyContext, MelodyGenerator, MELODY_TICKS};
use drumspace::midi::{parse_midi, write_midi};
use drumspace::pattern::{decode_codes, pattern_entropy};
use drumspace_service::{router, ServeState};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tower::ServiceExt;

struct Fixture {
    app: Router,
    records: Vec<PatternRecord>,
    models: BTreeMap<ModelKind, AutoencoderModel>,
    melody: MelodyGenerator,
}

fn fixture_with(kinds: &[ModelKind]) -> Fixture {
    let mut records = make_synthetic_corpus(3, 80);
    for (i, r) in records.iter_mut().enumerate() {
        r.projection = Some([i as f64 * 0.5, -(i as f64)]);
    }
    let cfg = TrainConfig { epochs: 4, batch_size: 16, seed: 2, ..TrainConfig::default() };
    let models: BTreeMap<_, _> = kinds.iter().map(|&k| (k, train(&records, k, &cfg).unwrap())).collect();
    let melody = MelodyGenerator::new(&mut ChaCha8Rng::seed_from_u64(5));
    let state = ServeState::new(records.clone(), models.clone(), Some(melody.clone())).unwrap();
    Fixture { app: router(Arc::new(state)), records, models, melody }
}

fn fixture() -> Fixture {
    fixture_with(&ModelKind::ALL)
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header(header::CONTENT_TYPE, "application/json");
    }
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Vec<u8>) {
    send(app, "POST", uri, Some(&body.to_string())).await
}

fn expected_decode(model: &AutoencoderModel, z: &LatentPoint, threshold: f64) -> Vec<u8> {
    let probs = model.decode(z);
    let min = probs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = probs.iter().sum::<f64>() / probs.len() as f64;
    let hits = probs.iter().filter(|&&p| p > threshold).count();
    let codes = binarize(&probs, threshold).codes().to_vec();
    serde_json::to_vec(&json!({
        "codes": codes,
        "probs_summary": { "min": min, "max": max, "mean": mean, "hits": hits },
    }))
    .unwrap()
}

fn latent_of(model: &AutoencoderModel, r: &PatternRecord) -> LatentPoint {
    model.encode(&decode_codes(&r.codes).unwrap())
}

#[tokio::test]
async fn randomized_requests_match_library_calls() {
    let f = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let kinds = ModelKind::ALL;
    for _ in 0..50 {
        let kind = kinds[rng.random_range(0..3)];
        let model = &f.models[&kind];

        let z = LatentPoint(std::array::from_fn(|_| rng.random_range(-3.0..3.0)));
        let threshold = rng.random_range(0.2..0.8);
        let (status, body) =
            post(&f.app, "/decode", json!({ "model": kind.name(), "z": z.0.to_vec(), "threshold": threshold })).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body, expected_decode(model, &z, threshold));

        let a = rng.random_range(0..f.records.len());
        let b = rng.random_range(0..f.records.len());
        let steps = rng.random_range(2..9);
        let (status, body) =
            post(&f.app, "/interpolate", json!({ "model": kind.name(), "id_a": a, "id_b": b, "steps": steps })).await;
        assert_eq!(status, StatusCode::OK);
        let (za, zb) = (latent_of(model, &f.records[a]), latent_of(model, &f.records[b]));
        let expected: Vec<Value> = (0..steps)
            .map(|i| {
                let alpha = i as f64 / (steps - 1) as f64;
                let probs = model.interpolate(&zb, &za, alpha).unwrap();
                json!({ "alpha": alpha, "codes": binarize(&probs, 0.5).codes().to_vec() })
            })
            .collect();
        assert_eq!(body, serde_json::to_vec(&expected).unwrap());
        let points: Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(points[0]["codes"], json!(binarize(&model.decode(&za), 0.5).codes().to_vec()));
        assert_eq!(points[steps - 1]["codes"], json!(binarize(&model.decode(&zb), 0.5).codes().to_vec()));

        let codes = f.records[rng.random_range(0..f.records.len())].codes;
        let context = MelodyContext::new(rng.random_range(0..128), rng.random_range(0..24), rng.random_range(0..11)).unwrap();
        let (status, body) = post(
            &f.app,
            "/melody",
            json!({
                "codes": codes.to_vec(),
                "instrument": context.instrument,
                "key": context.key.id(),
                "octave": context.octave,
            }),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        let roll = generate_melody(&f.melody, &codes, &context, 0.5).unwrap();
        let midi = write_midi(&decode_codes(&codes).unwrap(), Some(&roll), context.instrument, 120.0, 4).unwrap();
        let hash: String = Sha256::digest(&midi).iter().map(|b| format!("{b:02x}")).collect();
        let rows: Vec<Vec<u8>> = (0..MELODY_TICKS).map(|t| roll.pitches_at(t).collect()).collect();
        let mut expected = serde_json::Map::new();
        expected.insert("roll".into(), json!(rows));
        match filter_melody(&roll, context.key) {
            Ok(()) => {
                expected.insert("passes".into(), json!(true));
            }
            Err(r) => {
                expected.insert("passes".into(), json!(false));
                expected.insert("reject_reason".into(), json!({ "rule": r.rule(), "reason": r.describe() }));
            }
        }
        expected.insert("midi_url".into(), json!(format!("/midi/{hash}")));
        assert_eq!(body, serde_json::to_vec(&Value::Object(expected)).unwrap());

        let (status, served) = send(&f.app, "GET", &format!("/midi/{hash}"), None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(served, midi);
        assert!(parse_midi(&served).is_ok());
    }
}

#[tokio::test]
async fn sample_rate_agrees_with_eval() {
    // trained long enough that its pass rate is strictly between 0 and 1
    let records: Vec<PatternRecord> = make_synthetic_corpus(1, 300)
        .into_iter()
        .map(|r| PatternRecord { projection: Some([0.0, 0.0]), ..r })
        .collect();
    let cfg = TrainConfig { epochs: 30, seed: 1, ..TrainConfig::default() };
    let model = &train(&records, ModelKind::Ae, &cfg).unwrap();
    let models = BTreeMap::from([(ModelKind::Ae, model.clone())]);
    let app = router(Arc::new(ServeState::new(records, models, None).unwrap()));
    let mut passes = 0usize;
    let mut total = 0usize;
    for seed in 0..40u64 {
        let (status, body) = post(&app, "/sample", json!({ "model": "ae", "n": 250, "seed": seed })).await;
        assert_eq!(status, StatusCode::OK);
        let entries: Vec<Value> = serde_json::from_slice(&body).unwrap();
        assert_eq!(entries.len(), 250);
        for e in &entries {
            let codes: Vec<u16> = serde_json::from_value(e["codes"].clone()).unwrap();
            let nonzero = codes.iter().any(|&c| c != 0);
            assert_eq!(e["passes_filter"].as_bool().unwrap(), nonzero && pattern_entropy(&codes) > 1.0);
            passes += e["passes_filter"].as_bool().unwrap() as usize;
        }
        total += entries.len();
    }
    let service_rate = passes as f64 / total as f64;
    let report = filter_pass_rate(model, 10_000, 1.0, 999).unwrap();
    let p = (passes + report.passes) as f64 / (total + report.n) as f64;
    let sigma = (p * (1.0 - p) * (1.0 / total as f64 + 1.0 / report.n as f64)).sqrt();
    eprintln!("service {service_rate:.4} eval {:.4} sigma {sigma:.4}", report.pass_rate());
    assert!(report.passes > 0 && report.passes < report.n);
    assert!((service_rate - report.pass_rate()).abs() <= 3.0 * sigma);
}

#[tokio::test]
async fn sample_is_seeded_and_concurrency_safe() {
    let f = fixture_with(&[ModelKind::Vae]);
    let request = |seed: u64| post(&f.app, "/sample", json!({ "model": "vae", "n": 16, "seed": seed }));
    let serial: Vec<_> = {
        let mut out = Vec::new();
        for s in 0..8 {
            out.push(request(s).await);
        }
        out
    };
    let concurrent = futures_join(&f.app, 8).await;
    assert_eq!(serial, concurrent);
    let (_, one) = post(&f.app, "/sample", json!({ "model": "vae", "n": 1 })).await;
    let entries: Vec<Value> = serde_json::from_slice(&one).unwrap();
    assert_eq!(entries.len(), 1);
    let z: Vec<f64> = serde_json::from_value(entries[0]["z"].clone()).unwrap();
    assert_eq!(z, f.models[&ModelKind::Vae].sample_latents(1, 0).unwrap()[0].0.to_vec());
}

async fn futures_join(app: &Router, n: u64) -> Vec<(StatusCode, Vec<u8>)> {
    let handles: Vec<_> = (0..n)
        .map(|seed| {
            let app = app.clone();
            tokio::spawn(async move { post(&app, "/sample", json!({ "model": "vae", "n": 16, "seed": seed })).await })
        })
        .collect();
    let mut out = Vec::new();
    for h in handles {
        out.push(h.await.unwrap());
    }
    out
}

#[tokio::test]
async fn map_lists_every_record() {
    let f = fixture_with(&[ModelKind::Ae]);
    let (status, body) = send(&f.app, "GET", "/map", None).await;
    assert_eq!(status, StatusCode::OK);
    let entries: Vec<Value> = serde_json::from_slice(&body).unwrap();
    assert_eq!(entries.len(), f.records.len());
    for (i, (e, r)) in entries.iter().zip(&f.records).enumerate() {
        assert_eq!(e["id"], json!(i));
        assert_eq!(e["x"], json!(r.projection.unwrap()[0]));
        assert_eq!(e["y"], json!(r.projection.unwrap()[1]));
        assert_eq!(e["genre"], json!(r.genre.as_deref().unwrap()));
    }
    assert_eq!(send(&f.app, "GET", "/map", None).await.1, body);

    let empty = router(Arc::new(ServeState::new(Vec::new(), BTreeMap::new(), None).unwrap()));
    assert_eq!(send(&empty, "GET", "/map", None).await, (StatusCode::OK, b"[]".to_vec()));
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let f = fixture_with(&[ModelKind::Ae]);
    let app = &f.app;
    let cases: Vec<(&str, Value, StatusCode)> = vec![
        ("/decode", json!({ "model": "ae", "z": [0.0, 1.0, 2.0] }), StatusCode::BAD_REQUEST),
        ("/decode", json!({ "model": "ae", "z": [0.0, 1.0, 2.0, "x"] }), StatusCode::BAD_REQUEST),
        ("/decode", json!({ "model": "ae" }), StatusCode::BAD_REQUEST),
        ("/decode", json!({ "model": "ae", "z": [0, 0, 0, 0], "threshold": 2 }), StatusCode::BAD_REQUEST),
        ("/decode", json!({ "model": "gan", "z": [0, 0, 0, 0] }), StatusCode::NOT_FOUND),
        ("/decode", json!({ "model": "vae", "z": [0, 0, 0, 0] }), StatusCode::NOT_FOUND),
        ("/interpolate", json!({ "model": "ae", "id_a": 0, "id_b": 10_000, "steps": 3 }), StatusCode::NOT_FOUND),
        ("/interpolate", json!({ "model": "ae", "id_a": 0, "id_b": 1, "steps": 1 }), StatusCode::BAD_REQUEST),
        ("/interpolate", json!({ "model": "ae", "id_a": -1, "id_b": 1, "steps": 3 }), StatusCode::BAD_REQUEST),
        ("/sample", json!({ "model": "ae", "n": 0 }), StatusCode::BAD_REQUEST),
        ("/sample", json!({ "model": "ae", "n": 257 }), StatusCode::BAD_REQUEST),
        ("/melody", json!({ "codes": vec![0; 32], "instrument": 0, "key": 24, "octave": 4 }), StatusCode::BAD_REQUEST),
        ("/melody", json!({ "codes": vec![0; 32], "instrument": 128, "key": 0, "octave": 4 }), StatusCode::BAD_REQUEST),
        ("/melody", json!({ "codes": vec![0; 31], "instrument": 0, "key": 0, "octave": 4 }), StatusCode::BAD_REQUEST),
        ("/melody", json!({ "codes": vec![16384; 32], "instrument": 0, "key": 0, "octave": 4 }), StatusCode::BAD_REQUEST),
    ];
    for (uri, body, expected) in cases {
        let (status, bytes) = post(app, uri, body.clone()).await;
        assert_eq!(status, expected, "{uri} {body}");
        let err: Value = serde_json::from_slice(&bytes).unwrap();
        assert!(err["error"].is_string());
    }
    assert_eq!(send(app, "POST", "/decode", Some("{not json")).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(send(app, "POST", "/decode", Some("[1, 2]")).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(send(app, "GET", "/midi/0123", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn interpolation_edge_cases() {
    let f = fixture_with(&[ModelKind::Acai]);
    let model = &f.models[&ModelKind::Acai];
    let (_, body) = post(&f.app, "/interpolate", json!({ "model": "acai", "id_a": 3, "id_b": 3, "steps": 5 })).await;
    let points: Vec<Value> = serde_json::from_slice(&body).unwrap();
    let alphas: Vec<f64> = points.iter().map(|p| p["alpha"].as_f64().unwrap()).collect();
    assert_eq!(alphas, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    assert!(points.iter().all(|p| p["codes"] == points[0]["codes"]));
    let z = latent_of(model, &f.records[3]);
    let (_, decoded) = post(&f.app, "/decode", json!({ "model": "acai", "z": z.0.to_vec() })).await;
    let decoded: Value = serde_json::from_slice(&decoded).unwrap();
    assert_eq!(points[0]["codes"], decoded["codes"]);
    let (_, two) = post(&f.app, "/interpolate", json!({ "model": "acai", "id_a": 0, "id_b": 1, "steps": 2 })).await;
    assert_eq!(serde_json::from_slice::<Vec<Value>>(&two).unwrap().len(), 2);
}

#[tokio::test]
async fn cors_allows_browser_clients() {
    let f = fixture_with(&[ModelKind::Ae]);
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/decode")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let resp = f.app.clone().oneshot(req).await.unwrap();
    assert!(resp.headers().contains_key(header::ACCESS_CONTROL_ALLOW_ORIGIN));
}

#[test]
fn startup_fails_on_missing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let records = make_synthetic_corpus(1, 8);
    assert!(ServeState::new(records.clone(), BTreeMap::new(), None).is_err());

    let projected: Vec<PatternRecord> =
        records.into_iter().map(|r| PatternRecord { projection: Some([0.0, 1.0]), ..r }).collect();
    let dataset = dir.path().join("map.tsv");
    std::fs::write(&dataset, write_dataset(&projected)).unwrap();
    let missing = dir.path().join("nope.ckpt");
    assert!(ServeState::load(&dataset, &[(ModelKind::Ae, &missing)], None).is_err());
    assert!(ServeState::load(&dir.path().join("absent.tsv"), &[], None).is_err());

    let model = train(&projected, ModelKind::Ae, &TrainConfig { epochs: 1, ..TrainConfig::default() }).unwrap();
    let ckpt = dir.path().join("ae.ckpt");
    std::fs::write(&ckpt, model.save()).unwrap();
    assert!(ServeState::load(&dataset, &[(ModelKind::Vae, &ckpt)], None).is_err());
    let state = ServeState::load(&dataset, &[(ModelKind::Ae, &ckpt)], None).unwrap();
    assert_eq!(state.records().len(), 8);
    assert_eq!(state.model(ModelKind::Ae), Some(&model));
}
