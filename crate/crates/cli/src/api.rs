//! JSON HTTP API under `/api/v1`, as used by the web interface. Every body
//! carries `schemaVersion`; errors are `{schemaVersion, error: {code,
//! message, ...}}` with a 4xx status.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use towcheck_core::dsl::{Namespace, QueryRule, RuleClass, SchemaCatalog, Severity};
use towcheck_core::query::{evaluate, tree_slice, QueryError, Scope};
use towcheck_core::store::{StoreError, TreeStore};

pub const API_SCHEMA_VERSION: u32 = 1;
const DEFAULT_PAGE_SIZE: usize = 100;
const MAX_PAGE_SIZE: usize = 1000;

#[derive(Clone)]
pub struct AppState {
    store: Arc<TreeStore>,
    rules: Arc<RwLock<BTreeMap<String, QueryRule>>>,
    catalog: Arc<SchemaCatalog>,
}

impl AppState {
    pub fn new(store: TreeStore, rules: Vec<QueryRule>) -> Self {
        AppState {
            store: Arc::new(store),
            rules: Arc::new(RwLock::new(rules.into_iter().map(|r| (r.name.clone(), r)).collect())),
            catalog: Arc::new(SchemaCatalog::standard()),
        }
    }

    fn rule(&self, id: &str) -> Result<QueryRule, ApiError> {
        self.rules
            .read()
            .expect("rule registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknownRule", format!("no rule named '{id}'")))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/schema", get(schema))
        .route("/api/v1/episodes", get(episodes))
        .route("/api/v1/episodes/{episode_id}/decisions", get(decisions))
        .route("/api/v1/rules", get(list_rules).post(create_rule))
        .route("/api/v1/evaluate", post(evaluate_rule))
        .route("/api/v1/slice", get(slice))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "notFound", "no such endpoint".into()) })
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    details: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: String) -> Self {
        ApiError {
            status,
            code,
            message,
            details: None,
        }
    }

    fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({ "code": self.code, "message": self.message });
        if let Some(Value::Object(extra)) = self.details {
            error.as_object_mut().expect("object").extend(extra);
        }
        (
            self.status,
            Json(json!({ "schemaVersion": API_SCHEMA_VERSION, "error": error })),
        )
            .into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::UnknownEpisode(_) | StoreError::UnknownDecision { .. } | StoreError::NotFound { .. } => {
                StatusCode::NOT_FOUND
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let code = if status == StatusCode::NOT_FOUND { "notFound" } else { "storeError" };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        match e {
            QueryError::Store(s) => s.into(),
            QueryError::MissingCounterfactuals {
                ref episode_id,
                transform,
            } => {
                let details = json!({ "episodeId": episode_id, "transform": transform });
                ApiError::new(StatusCode::CONFLICT, "missingCounterfactuals", e.to_string()).with_details(details)
            }
            QueryError::Unresolved { ref diagnostics, .. } => {
                let details = json!({ "diagnostics": diagnostics });
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalidRule", e.to_string()).with_details(details)
            }
            QueryError::NotInReport { .. } => ApiError::new(StatusCode::NOT_FOUND, "notFound", e.to_string()),
        }
    }
}

fn ok(mut body: Value) -> Json<Value> {
    body.as_object_mut()
        .expect("response bodies are objects")
        .insert("schemaVersion".into(), API_SCHEMA_VERSION.into());
    Json(body)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", format!("evaluation task failed: {e}"))
    })?
}

async fn schema(State(st): State<AppState>) -> Json<Value> {
    let classes: Vec<Value> = RuleClass::ALL
        .iter()
        .map(|c| json!({ "name": c.name(), "namespaces": c.namespaces() }))
        .collect();
    let namespaces: serde_json::Map<String, Value> = Namespace::ALL
        .iter()
        .map(|ns| {
            let entries: Vec<_> = st.catalog.entries(*ns).collect();
            (ns.name().to_string(), json!(entries))
        })
        .collect();
    ok(json!({
        "classes": classes,
        "namespaces": namespaces,
        "aliases": st.catalog.aliases,
    }))
}

async fn episodes(State(st): State<AppState>) -> Result<Json<Value>, ApiError> {
    let list = st
        .store
        .episode_ids()
        .into_iter()
        .map(|id| st.store.episode_summary(id))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ok(json!({ "episodes": list })))
}

async fn decisions(State(st): State<AppState>, Path(episode_id): Path<String>) -> Result<Json<Value>, ApiError> {
    let ep = st.store.episode_index(&episode_id)?;
    let nodes = st.store.nodes_per_decision(&episode_id)?;
    let list: Vec<Value> = st
        .store
        .decisions
        .iter()
        .filter(|d| d.episode == ep)
        .map(|d| {
            json!({
                "decisionIdx": d.decision_idx,
                "rootStateId": d.root_state_id,
                "actions": d.actions,
                "chosenAction": d.chosen_action,
                "nodes": nodes.get(&d.decision_idx).copied().unwrap_or(1),
                "rewardVector": d.reward_vector,
            })
        })
        .collect();
    Ok(ok(json!({ "episodeId": episode_id, "decisions": list })))
}

fn rule_json(r: &QueryRule) -> Value {
    json!({
        "id": r.name,
        "class": r.class,
        "severity": r.severity,
        "description": r.description,
        "expr": r.source,
        "canonical": r.canonical_text(),
    })
}

async fn list_rules(State(st): State<AppState>) -> Json<Value> {
    let rules: Vec<Value> = st.rules.read().expect("rule registry lock").values().map(rule_json).collect();
    ok(json!({ "rules": rules }))
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct NewRule {
    id: String,
    class: String,
    expr: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    severity: Severity,
}

/// Validates and registers a rule, replacing any rule of the same id.
async fn create_rule(State(st): State<AppState>, body: Result<Json<NewRule>, axum::extract::rejection::JsonRejection>) -> Result<Json<Value>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "badRequest", e.body_text()))?;
    if req.id.trim().is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalidRule", "rule id is empty".into()));
    }
    let Some(class) = RuleClass::parse(&req.class) else {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalidRule",
            format!("unknown class '{}'", req.class),
        ));
    };
    let rule = QueryRule::parse_with(&st.catalog, &req.id, class, &req.expr)
        .map_err(|e| {
            let details = json!({ "diagnostics": e.diagnostics });
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalidRule", e.to_string()).with_details(details)
        })?
        .with_severity(req.severity)
        .with_description(&req.description);
    let body = json!({ "rule": rule_json(&rule), "diagnostics": [] });
    st.rules.write().expect("rule registry lock").insert(rule.name.clone(), rule);
    Ok(ok(body))
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct EvaluateRequest {
    rule_id: String,
    #[serde(default)]
    scope: Scope,
    #[serde(default)]
    page: usize,
    page_size: Option<usize>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct Summary<'a> {
    rule_id: &'a str,
    class: RuleClass,
    severity: Severity,
    total_matches: usize,
    evaluation_errors: usize,
    total_rows_scanned: usize,
    per_decision_counts: &'a [towcheck_core::query::DecisionCount],
}

async fn evaluate_rule(State(st): State<AppState>, body: Result<Json<EvaluateRequest>, axum::extract::rejection::JsonRejection>) -> Result<Json<Value>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "badRequest", e.body_text()))?;
    let rule = st.rule(&req.rule_id)?;
    let page_size = req.page_size.unwrap_or(DEFAULT_PAGE_SIZE).clamp(1, MAX_PAGE_SIZE);
    let store = st.store.clone();
    let report = blocking(move || Ok(evaluate(&rule, &store, &req.scope)?)).await?;
    let summary = Summary {
        rule_id: &report.rule_id,
        class: report.class,
        severity: report.severity,
        total_matches: report.total(),
        evaluation_errors: report.evaluation_errors,
        total_rows_scanned: report.total_rows_scanned,
        per_decision_counts: &report.per_decision_counts,
    };
    let start = req.page.saturating_mul(page_size).min(report.matches.len());
    let end = (start + page_size).min(report.matches.len());
    Ok(ok(json!({
        "summary": summary,
        "errorSamples": report.error_samples,
        "matches": &report.matches[start..end],
        "page": req.page,
        "pageSize": page_size,
        "pageCount": report.matches.len().div_ceil(page_size),
    })))
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct SliceParams {
    episode: String,
    decision: usize,
    rule_id: String,
}

async fn slice(State(st): State<AppState>, params: Result<Query<SliceParams>, axum::extract::rejection::QueryRejection>) -> Result<Json<Value>, ApiError> {
    let Query(p) = params.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "badRequest", e.body_text()))?;
    let rule = st.rule(&p.rule_id)?;
    let store = st.store.clone();
    let slice = blocking(move || {
        let report = evaluate(&rule, &store, &Scope::episode(&p.episode))?;
        if p.decision >= store.decision_count(&p.episode)? {
            return Err(StoreError::UnknownDecision {
                episode: p.episode.clone(),
                decision: p.decision,
            }
            .into());
        }
        Ok(tree_slice(&report, &store, &p.episode, p.decision)?)
    })
    .await?;
    Ok(ok(json!({ "slice": slice })))
}
