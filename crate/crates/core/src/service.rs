//! Local HTTP facade for the rule-tuning workbench.
//!
//! The service holds one dataset and one set of trained parameters and never
//! trains. Four rule variants are exposed: `original` (all ones, the
//! unmodulated baseline), `decimal` and `boolean` (fixed, loaded at start)
//! and `custom`, an editable copy. Every PATCH to `custom` takes the next
//! value of a single strictly increasing revision counter; reports are cached
//! by (variant, revision, setting) and an evaluation whose revision goes
//! stale while it runs is cancelled.

use std::collections::HashMap;
use std::fmt;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;

use crate::attention::FusionMode;
use crate::classes::{ClassId, ClassPartition, ClassTable};
use crate::error::{Error, Result};
use crate::eval::{diff_reports, EvalReport, GtPair, ReportDiff, Setting};
use crate::io::{write_file, InstanceRecord};
use crate::parts::BodyPart;
use crate::pipeline::{evaluate_rules, Cancelled};
use crate::rules::{all_ones, booleanize, RuleKind, RuleMatrix, DEFAULT_BOOL_THRESHOLD};
use crate::trainer::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Original,
    Decimal,
    Boolean,
    Custom,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Variant::Original),
            "decimal" => Ok(Variant::Decimal),
            "boolean" => Ok(Variant::Boolean),
            "custom" => Ok(Variant::Custom),
            _ => Err(Error::NotFound(format!("unknown rules variant {s:?}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Original => "original",
            Variant::Decimal => "decimal",
            Variant::Boolean => "boolean",
            Variant::Custom => "custom",
        })
    }
}

/// Everything a session needs; rule files are already loaded.
pub struct SessionConfig {
    pub table: ClassTable,
    pub partition: ClassPartition,
    pub records: Vec<InstanceRecord>,
    pub gts: Vec<GtPair>,
    pub params: ModelParams,
    /// Decimal or boolean rules. A decimal matrix also yields the boolean
    /// variant by thresholding at 0.5.
    pub rules: Option<RuleMatrix>,
    pub fusion: FusionMode,
    pub workers: usize,
    pub save_path: Option<PathBuf>,
}

struct Custom {
    revision: u64,
    rules: Arc<RuleMatrix>,
}

pub struct Session {
    table: ClassTable,
    partition: ClassPartition,
    records: Arc<Vec<InstanceRecord>>,
    gts: Arc<Vec<GtPair>>,
    params: Arc<ModelParams>,
    fusion: FusionMode,
    original: Arc<RuleMatrix>,
    decimal: Option<Arc<RuleMatrix>>,
    boolean: Option<Arc<RuleMatrix>>,
    custom: RwLock<Custom>,
    // mirrors custom.revision for the cancellation check inside workers
    custom_revision: AtomicU64,
    cache: Mutex<HashMap<(Variant, u64, Setting), Arc<EvalReport>>>,
    pool: Arc<Semaphore>,
    save_path: Option<PathBuf>,
}

/// A report tagged with the revision of the rules that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateResponse {
    pub variant: Variant,
    pub revision: u64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffResponse {
    pub a: Variant,
    pub a_revision: u64,
    pub b: Variant,
    pub b_revision: u64,
    #[serde(flatten)]
    pub diff: ReportDiff,
}

impl Session {
    pub fn new(config: SessionConfig) -> Result<Arc<Self>> {
        if config.workers == 0 {
            return Err(Error::Config("worker pool needs at least one worker".into()));
        }
        let original = all_ones(&config.table);
        let prepare = |mut m: RuleMatrix| -> Result<RuleMatrix> {
            m.fill_missing_non_rare(&config.partition);
            for c in &config.params.head.classes {
                m.require_row(*c)?;
            }
            Ok(m)
        };
        let (decimal, boolean) = match config.rules {
            None => (None, None),
            Some(m) if m.kind == RuleKind::Boolean => (None, Some(prepare(m)?)),
            Some(m) => {
                let b = booleanize(&m, DEFAULT_BOOL_THRESHOLD)?;
                (Some(prepare(m)?), Some(prepare(b)?))
            }
        };
        let custom = decimal.clone().or_else(|| boolean.clone()).unwrap_or_else(|| original.clone());
        Ok(Arc::new(Self {
            table: config.table,
            partition: config.partition,
            records: Arc::new(config.records),
            gts: Arc::new(config.gts),
            params: Arc::new(config.params),
            fusion: config.fusion,
            original: Arc::new(original),
            decimal: decimal.map(Arc::new),
            boolean: boolean.map(Arc::new),
            custom: RwLock::new(Custom {
                revision: 0,
                rules: Arc::new(custom),
            }),
            custom_revision: AtomicU64::new(0),
            cache: Mutex::new(HashMap::new()),
            pool: Arc::new(Semaphore::new(config.workers)),
            save_path: config.save_path,
        }))
    }

    /// Current rules and revision of a variant. Fixed variants stay at revision 0.
    pub fn rules(&self, variant: Variant) -> Result<(u64, Arc<RuleMatrix>)> {
        let missing = || Error::NotFound(format!("variant {variant} was not loaded"));
        match variant {
            Variant::Original => Ok((0, self.original.clone())),
            Variant::Decimal => self.decimal.clone().map(|m| (0, m)).ok_or_else(missing),
            Variant::Boolean => self.boolean.clone().map(|m| (0, m)).ok_or_else(missing),
            Variant::Custom => {
                let c = self.custom.read().expect("custom lock");
                Ok((c.revision, c.rules.clone()))
            }
        }
    }

    /// Sets one cell of the custom variant and returns the new revision.
    pub fn edit(&self, class: ClassId, part: BodyPart, weight: f64) -> Result<(u64, Arc<RuleMatrix>)> {
        if !self.table.contains(class) {
            return Err(Error::NotFound(format!("class {class} not in class table")));
        }
        let mut c = self.custom.write().expect("custom lock");
        if c.rules.row(class).is_none() {
            return Err(Error::NotFound(format!("class {class} has no rule row")));
        }
        let next = Arc::new(c.rules.with_weight(class, part, weight)?);
        c.revision += 1;
        c.rules = next.clone();
        self.custom_revision.store(c.revision, Ordering::SeqCst);
        Ok((c.revision, next))
    }

    /// Evaluates a variant, from the cache when possible. With `expected`
    /// set, a mismatch with the variant's current revision is a 409.
    pub async fn evaluate(
        self: &Arc<Self>,
        variant: Variant,
        setting: Setting,
        expected: Option<u64>,
    ) -> std::result::Result<EvaluateResponse, ApiError> {
        let (revision, rules) = self.rules(variant)?;
        if expected.is_some_and(|r| r != revision) {
            return Err(ApiError::stale(variant, expected.unwrap_or_default(), revision));
        }
        let key = (variant, revision, setting);
        if let Some(report) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(EvaluateResponse {
                variant,
                revision,
                report: (**report).clone(),
            });
        }
        let permit = self.pool.clone().acquire_owned().await.expect("worker pool closed");
        let session = self.clone();
        let job = tokio::task::spawn_blocking(move || {
            let _permit = permit;
            let stop = || variant == Variant::Custom && session.custom_revision.load(Ordering::SeqCst) != revision;
            if stop() {
                return Ok(Err(Cancelled));
            }
            evaluate_rules(
                &session.records,
                &session.gts,
                &session.table,
                &session.partition,
                &session.params,
                Some(&rules),
                session.fusion,
                setting,
                &stop,
            )
        });
        let outcome = job.await.map_err(|e| ApiError::internal(format!("evaluation worker failed: {e}")))??;
        let report = match outcome {
            Ok(r) => Arc::new(r),
            Err(Cancelled) => {
                let now = self.custom_revision.load(Ordering::SeqCst);
                return Err(ApiError::stale(variant, revision, now));
            }
        };
        self.cache.lock().expect("cache lock").insert(key, report.clone());
        Ok(EvaluateResponse {
            variant,
            revision,
            report: (*report).clone(),
        })
    }

    pub async fn diff(
        self: &Arc<Self>,
        a: Variant,
        b: Variant,
        setting: Setting,
    ) -> std::result::Result<DiffResponse, ApiError> {
        let ra = self.evaluate(a, setting, None).await?;
        let rb = self.evaluate(b, setting, None).await?;
        Ok(DiffResponse {
            a,
            a_revision: ra.revision,
            b,
            b_revision: rb.revision,
            diff: diff_reports(&ra.report, &rb.report)?,
        })
    }

    /// Writes the custom variant to the configured save path.
    pub fn save(&self) -> std::result::Result<(u64, PathBuf), ApiError> {
        let path = self.save_path.clone().ok_or_else(|| ApiError {
            status: StatusCode::BAD_REQUEST,
            kind: "config",
            message: "service was started without a save path".into(),
        })?;
        let (revision, rules) = self.rules(Variant::Custom)?;
        write_file(&path, &rules.to_json())?;
        tracing::info!(revision, path = %path.display(), "saved custom rules");
        Ok((revision, path))
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            kind: "parse",
            message: message.into(),
        }
    }

    fn stale(variant: Variant, requested: u64, current: u64) -> Self {
        Self {
            status: StatusCode::CONFLICT,
            kind: "stale_revision",
            message: format!("{variant} revision {requested} is stale; current is {current}"),
        }
    }

    fn internal(message: String) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            kind: "internal",
            message,
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Parse { .. } => StatusCode::BAD_REQUEST,
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Domain(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.kind, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

#[derive(Serialize)]
struct ClassEntry<'a> {
    class_id: ClassId,
    verb: &'a str,
    object: &'a str,
    train_count: u32,
    rare: bool,
}

async fn list_classes(State(s): State<Arc<Session>>) -> impl IntoResponse {
    let entries: Vec<ClassEntry> = s
        .table
        .classes()
        .iter()
        .map(|c| ClassEntry {
            class_id: c.class_id,
            verb: &c.verb,
            object: &c.object,
            train_count: c.train_count,
            rare: s.partition.is_rare(c.class_id),
        })
        .collect();
    Json(json!(entries))
}

async fn get_rules(State(s): State<Arc<Session>>, Path(variant): Path<String>) -> ApiResult<Response> {
    let (revision, rules) = s.rules(variant.parse()?)?;
    Ok(([("x-rules-revision", revision.to_string())], Json(rules.to_file())).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CellEdit {
    part: BodyPart,
    weight: f64,
}

async fn patch_custom(
    State(s): State<Arc<Session>>,
    Path(class_id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let class = class_id
        .parse::<u32>()
        .map(ClassId)
        .map_err(|_| ApiError::bad_request(format!("class id {class_id:?} is not an integer")))?;
    let edit: CellEdit = parse_body(&body)?;
    let (revision, rules) = s.edit(class, edit.part, edit.weight)?;
    tracing::debug!(revision, %class, part = %edit.part, weight = edit.weight, "custom rules edited");
    Ok(Json(json!({
        "revision": revision,
        "class_id": class,
        "row": rules.require_row(class)?.to_vec(),
    })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateRequest {
    variant: String,
    #[serde(default = "default_setting")]
    setting: Setting,
    #[serde(default)]
    revision: Option<u64>,
}

fn default_setting() -> Setting {
    Setting::Default
}

async fn post_evaluate(State(s): State<Arc<Session>>, body: Bytes) -> ApiResult<Json<EvaluateResponse>> {
    let req: EvaluateRequest = parse_body(&body)?;
    Ok(Json(s.evaluate(req.variant.parse()?, req.setting, req.revision).await?))
}

#[derive(Deserialize)]
struct DiffQuery {
    a: String,
    b: String,
    #[serde(default = "default_setting")]
    setting: Setting,
}

async fn get_diff(
    State(s): State<Arc<Session>>,
    query: std::result::Result<Query<DiffQuery>, QueryRejection>,
) -> ApiResult<Json<DiffResponse>> {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    Ok(Json(s.diff(q.a.parse()?, q.b.parse()?, q.setting).await?))
}

async fn post_save(State(s): State<Arc<Session>>) -> ApiResult<Json<serde_json::Value>> {
    let (revision, path) = s.save()?;
    Ok(Json(json!({ "revision": revision, "path": path.display().to_string() })))
}

pub fn router(session: Arc<Session>) -> Router {
    Router::new()
        .route("/api/classes", get(list_classes))
        .route("/api/rules/{variant}", get(get_rules))
        .route("/api/rules/custom/{class_id}", patch(patch_custom))
        .route("/api/rules/custom/save", post(post_save))
        .route("/api/evaluate", post(post_evaluate))
        .route("/api/diff", get(get_diff))
        .with_state(session)
}

/// Serves until ctrl-c.
pub async fn serve(session: Arc<Session>, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(addr, e))?;
    let local = listener.local_addr().map_err(|e| Error::io(addr, e))?;
    tracing::info!("listening on http://{local}");
    eprintln!("listening on http://{local}");
    axum::serve(listener, router(session))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io(local, e))
}
