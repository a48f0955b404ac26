//! Read-only HTTP API over trained pattern models, the projected pattern map
//! and the melody generator.
//!
//! Bodies are JSON. Every response is a pure function of the request and the
//! state loaded at startup; `/sample` takes its seed from the request.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use drumspace::dataset::{read_dataset, PatternRecord};
use drumspace::eval::{classify, FilterOutcome};
use drumspace::latent::{binarize, AutoencoderModel, LatentPoint, ModelKind, LATENT_DIM};
use drumspace::melody::{filter_melody, generate_melody, MelodyContext, MelodyGenerator, MelodyRoll};
use drumspace::midi::write_midi;
use drumspace::pattern::{decode_codes, Codes, STEPS};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tower_http::cors::CorsLayer;

pub const MAX_SAMPLES: usize = 256;
pub const MAX_STEPS: usize = 256;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const MELODY_TEMPO_BPM: f64 = 120.0;
pub const MELODY_REPEATS: u32 = 4;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {reason}")]
    Invalid { path: String, reason: String },
    #[error("record {0} has no map projection")]
    MissingProjection(usize),
}

/// Everything the service answers from; immutable once built, apart from the
/// content-addressed MIDI cache.
pub struct ServeState {
    models: BTreeMap<ModelKind, AutoencoderModel>,
    melody: Option<MelodyGenerator>,
    records: Vec<PatternRecord>,
    midi_cache: RwLock<HashMap<String, Vec<u8>>>,
}

impl ServeState {
    pub fn new(
        records: Vec<PatternRecord>,
        models: BTreeMap<ModelKind, AutoencoderModel>,
        melody: Option<MelodyGenerator>,
    ) -> Result<Self, LoadError> {
        if let Some(i) = records.iter().position(|r| r.projection.is_none()) {
            return Err(LoadError::MissingProjection(i));
        }
        Ok(Self { models, melody, records, midi_cache: RwLock::new(HashMap::new()) })
    }

    /// Reads the projected dataset and checkpoints, failing on the first
    /// artifact that does not load.
    pub fn load(dataset: &Path, models: &[(ModelKind, &Path)], melody: Option<&Path>) -> Result<Self, LoadError> {
        let read = |p: &Path| std::fs::read(p).map_err(|source| LoadError::Io { path: p.display().to_string(), source });
        let invalid = |p: &Path, reason: String| LoadError::Invalid { path: p.display().to_string(), reason };
        let records = read_dataset(&read(dataset)?).map_err(|e| invalid(dataset, e.to_string()))?;
        let mut loaded = BTreeMap::new();
        for &(kind, path) in models {
            let model = AutoencoderModel::load(&read(path)?).map_err(|e| invalid(path, e.to_string()))?;
            if model.kind != kind {
                return Err(invalid(path, format!("checkpoint holds a {} model, expected {kind}", model.kind)));
            }
            loaded.insert(kind, model);
        }
        let melody = match melody {
            Some(p) => Some(MelodyGenerator::load(&read(p)?).map_err(|e| invalid(p, e.to_string()))?),
            None => None,
        };
        Self::new(records, loaded, melody)
    }

    pub fn records(&self) -> &[PatternRecord] {
        &self.records
    }

    pub fn model(&self, kind: ModelKind) -> Option<&AutoencoderModel> {
        self.models.get(&kind)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, message: message.into() }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self { status: StatusCode::NOT_FOUND, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, json_bytes(&json!({ "error": self.message }))).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn json_bytes(value: &Value) -> ([(header::HeaderName, &'static str); 1], Vec<u8>) {
    ([(header::CONTENT_TYPE, "application/json")], serde_json::to_vec(value).expect("values serialize"))
}

fn ok_json(value: Value) -> ApiResult {
    Ok(json_bytes(&value).into_response())
}

// ---------------------------------------------------------------------------
// Request parsing

struct Body(Map<String, Value>);

impl Body {
    fn parse(bytes: &[u8]) -> Result<Self, ApiError> {
        match serde_json::from_slice(bytes) {
            Ok(Value::Object(map)) => Ok(Self(map)),
            Ok(_) => Err(ApiError::bad_request("body must be a JSON object")),
            Err(e) => Err(ApiError::bad_request(format!("malformed JSON: {e}"))),
        }
    }

    fn field(&self, name: &str) -> Result<&Value, ApiError> {
        self.0.get(name).ok_or_else(|| ApiError::bad_request(format!("missing field {name:?}")))
    }

    fn uint(&self, name: &str) -> Result<u64, ApiError> {
        self.field(name)?.as_u64().ok_or_else(|| ApiError::bad_request(format!("{name:?} must be a non-negative integer")))
    }

    fn opt_uint(&self, name: &str, default: u64) -> Result<u64, ApiError> {
        if self.0.contains_key(name) {
            self.uint(name)
        } else {
            Ok(default)
        }
    }

    fn threshold(&self) -> Result<f64, ApiError> {
        match self.0.get("threshold") {
            None => Ok(DEFAULT_THRESHOLD),
            Some(v) => v
                .as_f64()
                .filter(|t| (0.0..=1.0).contains(t))
                .ok_or_else(|| ApiError::bad_request("\"threshold\" must be a number in [0, 1]")),
        }
    }

    fn codes(&self) -> Result<Codes, ApiError> {
        let bad = || ApiError::bad_request(format!("\"codes\" must be {STEPS} integers in 0..=16383"));
        let list = self.field("codes")?.as_array().ok_or_else(bad)?;
        let values: Vec<u16> = list
            .iter()
            .map(|v| v.as_u64().and_then(|c| u16::try_from(c).ok()))
            .collect::<Option<_>>()
            .ok_or_else(bad)?;
        decode_codes(&values).map_err(|_| bad())?;
        values.try_into().map_err(|_| bad())
    }
}

fn model_of<'a>(state: &'a ServeState, body: &Body) -> Result<&'a AutoencoderModel, ApiError> {
    let name = body.field("model")?.as_str().ok_or_else(|| ApiError::bad_request("\"model\" must be a string"))?;
    name.parse::<ModelKind>()
        .ok()
        .and_then(|k| state.model(k))
        .ok_or_else(|| ApiError::not_found(format!("no model {name:?} loaded")))
}

// ---------------------------------------------------------------------------
// Response pieces shared with tests and clients

pub fn codes_json(codes: &Codes) -> Value {
    json!(codes.to_vec())
}

/// Count of set bits and range/mean of the decoder output.
pub fn probs_summary(probs: &[f64], threshold: f64) -> Value {
    let min = probs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = probs.iter().sum::<f64>() / probs.len() as f64;
    let hits = probs.iter().filter(|&&p| p > threshold).count();
    json!({ "min": min, "max": max, "mean": mean, "hits": hits })
}

pub fn decode_response(model: &AutoencoderModel, z: &LatentPoint, threshold: f64) -> Value {
    let probs = model.decode(z);
    json!({
        "codes": codes_json(&binarize(&probs, threshold).codes()),
        "probs_summary": probs_summary(&probs, threshold),
    })
}

/// Latent point of a stored record under `model`.
pub fn record_latent(model: &AutoencoderModel, record: &PatternRecord) -> LatentPoint {
    model.encode(&decode_codes(&record.codes).expect("records hold valid codes"))
}

/// `steps` evenly spaced points from record `a` (alpha 0) to record `b`.
pub fn interpolate_response(model: &AutoencoderModel, a: &PatternRecord, b: &PatternRecord, steps: usize) -> Value {
    let za = record_latent(model, a);
    let zb = record_latent(model, b);
    let points: Vec<Value> = (0..steps)
        .map(|i| {
            let alpha = i as f64 / (steps - 1) as f64;
            let probs = model.interpolate(&zb, &za, alpha).expect("alpha in [0, 1]");
            json!({ "alpha": alpha, "codes": codes_json(&binarize(&probs, DEFAULT_THRESHOLD).codes()) })
        })
        .collect();
    Value::Array(points)
}

pub fn sample_response(model: &AutoencoderModel, n: usize, seed: u64) -> Result<Value, drumspace::latent::LatentError> {
    let k = drumspace::config::DEFAULT_ENTROPY_THRESHOLD;
    let entries: Vec<Value> = model
        .sample_latents(n, seed)?
        .iter()
        .map(|z| {
            let pattern = binarize(&model.decode(z), DEFAULT_THRESHOLD);
            json!({
                "z": z.0.to_vec(),
                "codes": codes_json(&pattern.codes()),
                "passes_filter": classify(&pattern, k) == FilterOutcome::Pass,
            })
        })
        .collect();
    Ok(Value::Array(entries))
}

pub fn roll_json(roll: &MelodyRoll) -> Value {
    json!((0..drumspace::melody::MELODY_TICKS).map(|t| roll.pitches_at(t).collect::<Vec<u8>>()).collect::<Vec<_>>())
}

/// Loop the drums and the melody over them as a MIDI file.
pub fn melody_midi(codes: &Codes, roll: &MelodyRoll, program: u8) -> Vec<u8> {
    let drums = decode_codes(codes).expect("validated codes");
    write_midi(&drums, Some(roll), program, MELODY_TEMPO_BPM, MELODY_REPEATS).expect("fixed tempo and repeats")
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn melody_response(roll: &MelodyRoll, context: &MelodyContext, midi_hash: &str) -> Value {
    let mut out = Map::new();
    out.insert("roll".into(), roll_json(roll));
    match filter_melody(roll, context.key) {
        Ok(()) => {
            out.insert("passes".into(), json!(true));
        }
        Err(reason) => {
            out.insert("passes".into(), json!(false));
            out.insert("reject_reason".into(), json!({ "rule": reason.rule(), "reason": reason.describe() }));
        }
    }
    out.insert("midi_url".into(), json!(format!("/midi/{midi_hash}")));
    Value::Object(out)
}

// ---------------------------------------------------------------------------
// Handlers

async fn map(State(state): State<Arc<ServeState>>) -> ApiResult {
    let entries: Vec<Value> = state
        .records
        .iter()
        .enumerate()
        .map(|(id, r)| {
            let [x, y] = r.projection.expect("checked at startup");
            let mut e = Map::new();
            e.insert("id".into(), json!(id));
            e.insert("x".into(), json!(x));
            e.insert("y".into(), json!(y));
            if let Some(g) = &r.genre {
                e.insert("genre".into(), json!(g));
            }
            Value::Object(e)
        })
        .collect();
    ok_json(Value::Array(entries))
}

async fn decode(State(state): State<Arc<ServeState>>, bytes: Bytes) -> ApiResult {
    let body = Body::parse(&bytes)?;
    let model = model_of(&state, &body)?;
    let bad_z = || ApiError::bad_request(format!("\"z\" must be {LATENT_DIM} finite numbers"));
    let z: Vec<f64> = body
        .field("z")?
        .as_array()
        .ok_or_else(bad_z)?
        .iter()
        .map(|v| v.as_f64().filter(|x| x.is_finite()))
        .collect::<Option<_>>()
        .ok_or_else(bad_z)?;
    let z = LatentPoint(z.try_into().map_err(|_| bad_z())?);
    ok_json(decode_response(model, &z, body.threshold()?))
}

async fn interpolate(State(state): State<Arc<ServeState>>, bytes: Bytes) -> ApiResult {
    let body = Body::parse(&bytes)?;
    let model = model_of(&state, &body)?;
    let record = |field: &str| -> Result<&PatternRecord, ApiError> {
        let id = body.uint(field)?;
        state.records.get(id as usize).ok_or_else(|| ApiError::not_found(format!("no record {id}")))
    };
    let (a, b) = (record("id_a")?, record("id_b")?);
    let steps = body.uint("steps")? as usize;
    if !(2..=MAX_STEPS).contains(&steps) {
        return Err(ApiError::bad_request(format!("\"steps\" must be in 2..={MAX_STEPS}")));
    }
    ok_json(interpolate_response(model, a, b, steps))
}

async fn sample(State(state): State<Arc<ServeState>>, bytes: Bytes) -> ApiResult {
    let body = Body::parse(&bytes)?;
    let model = model_of(&state, &body)?;
    let n = body.uint("n")? as usize;
    if !(1..=MAX_SAMPLES).contains(&n) {
        return Err(ApiError::bad_request(format!("\"n\" must be in 1..={MAX_SAMPLES}")));
    }
    let seed = body.opt_uint("seed", 0)?;
    let value = sample_response(model, n, seed).map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        message: e.to_string(),
    })?;
    ok_json(value)
}

async fn melody(State(state): State<Arc<ServeState>>, bytes: Bytes) -> ApiResult {
    let body = Body::parse(&bytes)?;
    let generator = state.melody.as_ref().ok_or_else(|| ApiError::not_found("no melody generator loaded"))?;
    let codes = body.codes()?;
    let context = MelodyContext::new(
        body.uint("instrument")? as usize,
        body.uint("key")? as usize,
        body.uint("octave")? as usize,
    )
    .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let roll = generate_melody(generator, &codes, &context, body.threshold()?)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let midi = melody_midi(&codes, &roll, context.instrument);
    let hash = content_hash(&midi);
    state.midi_cache.write().expect("cache lock").entry(hash.clone()).or_insert(midi);
    ok_json(melody_response(&roll, &context, &hash))
}

async fn midi(State(state): State<Arc<ServeState>>, UrlPath(hash): UrlPath<String>) -> ApiResult {
    let cache = state.midi_cache.read().expect("cache lock");
    let bytes = cache.get(&hash).ok_or_else(|| ApiError::not_found(format!("no MIDI file {hash}")))?;
    Ok(([(header::CONTENT_TYPE, "audio/midi")], bytes.clone()).into_response())
}

pub fn router(state: Arc<ServeState>) -> Router {
    Router::new()
        .route("/map", get(map))
        .route("/decode", post(decode))
        .route("/interpolate", post(interpolate))
        .route("/sample", post(sample))
        .route("/melody", post(melody))
        .route("/midi/{hash}", get(midi))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(state: Arc<ServeState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
