//! HTTP surface: `/registry/v1`, `/pid`, `/platform/v1`, `/ingest/v1` and
//! the read-only `/v1.1` SensorThings tree.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, RawQuery, State};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fairstream_ingest::{ColumnRef, IngestSink, PushSummary, Transport};
use fairstream_qc::FlagScheme;
use fairstream_registry::export::{device_resource, mount_resource};
use fairstream_registry::{DeviceDraft, MountDraft, SearchQuery};
use fairstream_sta::{StaError, StaService};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use uuid::Uuid;

use crate::auth::{Authenticator, Principal, Role};
use crate::error::PlatformError;
use crate::platform::{DatastreamSpec, MqttAccess, Platform, ThingSpec};
use crate::qc::AttachSpec;
use crate::source::PlatformSource;
use crate::state::QcScope;

/// Upper bound for one ingest payload.
pub const MAX_PAYLOAD_BYTES: usize = 64 * 1024 * 1024;

const JSONAPI: &str = "application/vnd.api+json";

type AppState = Arc<Platform>;

pub struct ApiError(PlatformError);

impl<E: Into<PlatformError>> From<E> for ApiError {
    fn from(e: E) -> Self {
        ApiError(e.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            tracing::error!(error = %self.0, "request failed");
        }
        (status, Json(self.0.body())).into_response()
    }
}

struct StaFailure(StaError);

impl IntoResponse for StaFailure {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.0.body())).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

fn require(p: &Platform, headers: &HeaderMap, role: Option<Role>) -> ApiResult<Principal> {
    Ok(p.authorize(bearer(headers), role)?)
}

/// Runs `f` on the blocking pool; platform calls do file I/O.
async fn blocking<T: Send + 'static>(
    p: AppState,
    f: impl FnOnce(&Platform) -> Result<T, PlatformError> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(move || f(&p))
        .await
        .map_err(|e| PlatformError::validation("request", format!("worker failed: {e}")))?
        .map_err(ApiError)
}

fn parse_json<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| PlatformError::validation("body", e.to_string()).into())
}

fn jsonapi(status: StatusCode, body: String) -> Response {
    (status, [(CONTENT_TYPE, JSONAPI)], body).into_response()
}

pub fn router(platform: Arc<Platform>) -> Router {
    let registry = Router::new()
        .route("/devices", post(register_device).get(search_devices))
        .route("/devices/{id}", get(get_device))
        .route("/devices/{id}/mounts", post(add_mount).get(list_mounts))
        .route("/devices/{id}/sensorml", get(get_sensorml))
        .route("/devices/{id}/archive", post(archive_device));

    let platform_api = Router::new()
        .route("/things", post(create_thing).get(list_things))
        .route("/things/{uuid}", get(get_thing))
        .route("/things/{uuid}/datastreams", post(add_datastream))
        .route("/things/{uuid}/qc-config", post(attach_thing_qc))
        .route("/things/{uuid}/dashboard", get(get_thing_dashboard).post(reprovision_dashboard))
        .route("/datastreams/{id}/qc-config", post(attach_datastream_qc))
        .route("/datastreams/{id}/qc-dryrun", post(qc_dryrun))
        .route("/qc-attachments/{id}", get(get_attachment).patch(patch_attachment))
        .route("/dashboards/{token}", get(shared_dashboard).delete(revoke_dashboard))
        .route("/dashboards/{token}/v1.1", get(shared_sta_root))
        .route("/dashboards/{token}/v1.1/", get(shared_sta_root))
        .route("/dashboards/{token}/v1.1/{*path}", get(shared_sta))
        .route("/tokens", post(issue_token).get(list_tokens))
        .route("/tokens/{id}", axum::routing::delete(revoke_token))
        .route("/stats", get(stats));

    let ingest = Router::new()
        .route("/things/{uuid}/observations", post(push_observations))
        .route("/mqtt/auth", post(mqtt_auth))
        .route("/mqtt/superuser", post(mqtt_superuser))
        .route("/mqtt/acl", post(mqtt_acl));

    Router::new()
        .nest("/registry/v1", registry)
        .route("/pid/{prefix}/{uuid}", get(resolve_pid))
        .nest("/platform/v1", platform_api)
        .nest("/ingest/v1", ingest)
        .route("/v1.1", get(sta_root))
        .route("/v1.1/", get(sta_root))
        .route("/v1.1/{*path}", get(sta))
        .layer(DefaultBodyLimit::max(MAX_PAYLOAD_BYTES))
        .with_state(platform)
}

// ---- Registry ----------------------------------------------------------

/// A JSON:API `{"data": {"attributes": …}}` envelope or the bare object.
#[derive(Deserialize)]
#[serde(untagged)]
enum Envelope<T> {
    JsonApi { data: Attributes<T> },
    Bare(T),
}

#[derive(Deserialize)]
struct Attributes<T> {
    attributes: T,
}

impl<T> Envelope<T> {
    fn into_inner(self) -> T {
        match self {
            Envelope::JsonApi { data } => data.attributes,
            Envelope::Bare(t) => t,
        }
    }
}

async fn register_device(State(p): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    require(&p, &headers, Some(Role::Admin))?;
    let draft: DeviceDraft = parse_json::<Envelope<DeviceDraft>>(&body)?.into_inner();
    let doc = blocking(p, move |p| {
        let device = p.registry().register_device(draft)?;
        Ok(p.registry().export_jsonapi(device.id)?)
    })
    .await?;
    Ok(jsonapi(StatusCode::CREATED, doc))
}

#[derive(Deserialize)]
struct SearchParams {
    #[serde(default)]
    q: String,
    device_type: Option<String>,
    manufacturer: Option<String>,
    page: Option<usize>,
    page_size: Option<usize>,
}

async fn search_devices(
    State(p): State<AppState>,
    headers: HeaderMap,
    Query(params): Query<SearchParams>,
) -> ApiResult<Response> {
    require(&p, &headers, None)?;
    let query = SearchQuery {
        text: params.q,
        device_type: params.device_type,
        manufacturer: params.manufacturer,
        page: params.page.unwrap_or(1),
        page_size: params.page_size.unwrap_or(0),
    };
    let page = p.registry().search(&query);
    let mut data = Vec::with_capacity(page.devices.len());
    for d in &page.devices {
        data.push(device_resource(d, &p.registry().mounts(d.id)?));
    }
    let body = json!({
        "data": data,
        "meta": { "total": page.total, "page": page.page, "page_size": page.page_size },
    });
    Ok(jsonapi(StatusCode::OK, body.to_string()))
}

async fn get_device(State(p): State<AppState>, headers: HeaderMap, Path(id): Path<u64>) -> ApiResult<Response> {
    require(&p, &headers, None)?;
    Ok(jsonapi(StatusCode::OK, p.registry().export_jsonapi(id)?))
}

async fn add_mount(
    State(p): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<u64>,
    body: Bytes,
) -> ApiResult<Response> {
    require(&p, &headers, Some(Role::Admin))?;
    let draft: MountDraft = parse_json::<Envelope<MountDraft>>(&body)?.into_inner();
    let mount = blocking(p, move |p| Ok(p.registry().add_mount(id, draft)?)).await?;
    Ok(jsonapi(StatusCode::CREATED, json!({ "data": mount_resource(&mount) }).to_string()))
}

async fn list_mounts(State(p): State<AppState>, headers: HeaderMap, Path(id): Path<u64>) -> ApiResult<Response> {
    require(&p, &headers, None)?;
    let data: Vec<Value> = p.registry().mounts(id)?.iter().map(mount_resource).collect();
    Ok(jsonapi(StatusCode::OK, json!({ "data": data }).to_string()))
}

async fn get_sensorml(State(p): State<AppState>, headers: HeaderMap, Path(id): Path<u64>) -> ApiResult<Response> {
    require(&p, &headers, None)?;
    let xml = p.registry().export_sensorml(id)?;
    Ok(([(CONTENT_TYPE, "application/xml")], xml).into_response())
}

async fn archive_device(State(p): State<AppState>, headers: HeaderMap, Path(id): Path<u64>) -> ApiResult<Response> {
    require(&p, &headers, Some(Role::Admin))?;
    let doc = blocking(p, move |p| {
        p.registry().archive_device(id)?;
        Ok(p.registry().export_jsonapi(id)?)
    })
    .await?;
    Ok(jsonapi(StatusCode::OK, doc))
}

async fn resolve_pid(State(p): State<AppState>, Path((prefix, id)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    Ok(Json(p.registry().resolve_pid(&format!("{prefix}/{id}"))?))
}

// ---- Things, dashboards, QC -------------------------------------------

async fn create_thing(State(p): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let principal = require(&p, &headers, Some(Role::Operator))?;
    let spec: ThingSpec = parse_json(&body)?;
    let created = blocking(p, move |p| p.create_thing(spec, &principal)).await?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn list_things(State(p): State<AppState>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    require(&p, &headers, None)?;
    Ok(Json(json!({ "data": p.list_things() })))
}

async fn get_thing(State(p): State<AppState>, headers: HeaderMap, Path(uuid): Path<Uuid>) -> ApiResult<Json<Value>> {
    require(&p, &headers, None)?;
    Ok(Json(p.thing_view(uuid)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewDatastream {
    datastream: DatastreamSpec,
    column: ColumnRef,
}

async fn add_datastream(
    State(p): State<AppState>,
    headers: HeaderMap,
    Path(uuid): Path<Uuid>,
    body: Bytes,
) -> ApiResult<Response> {
    require(&p, &headers, Some(Role::Operator))?;
    let req: NewDatastream = parse_json(&body)?;
    let decl = blocking(p, move |p| p.add_datastream(uuid, req.datastream, req.column)).await?;
    Ok((StatusCode::CREATED, Json(decl)).into_response())
}

async fn attach(p: AppState, headers: HeaderMap, scope: QcScope, body: Bytes) -> ApiResult<Response> {
    require(&p, &headers, Some(Role::Operator))?;
    let spec: AttachSpec = parse_json(&body)?;
    let (attachment, report) = blocking(p, move |p| p.attach_qc(scope, spec)).await?;
    let body = json!({ "attachment": attachment, "initial_run": report });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn attach_thing_qc(
    State(p): State<AppState>,
    headers: HeaderMap,
    Path(uuid): Path<Uuid>,
    body: Bytes,
) -> ApiResult<Response> {
    attach(p, headers, QcScope::Thing(uuid), body).await
}

async fn attach_datastream_qc(
    State(p): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<u64>,
    body: Bytes,
) -> ApiResult<Response> {
    attach(p, headers, QcScope::Datastream(id), body).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DryRunRequest {
    config: String,
    /// RFC3339, inclusive.
    from: Option<String>,
    to: Option<String>,
    flag_scheme: Option<String>,
}

fn parse_instant(field: &str, text: Option<&str>) -> Result<Option<i64>, PlatformError> {
    text.map(|t| {
        chrono::DateTime::parse_from_rfc3339(t)
            .ok()
            .and_then(|d| d.timestamp_nanos_opt())
            .ok_or_else(|| PlatformError::validation(field, format!("not an RFC3339 timestamp: {t:?}")))
    })
    .transpose()
}

async fn qc_dryrun(
    State(p): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<u64>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    require(&p, &headers, Some(Role::Operator))?;
    let req: DryRunRequest = parse_json(&body)?;
    let from = parse_instant("from", req.from.as_deref())?;
    let to = parse_instant("to", req.to.as_deref())?;
    let scheme = match req.flag_scheme.as_deref() {
        None => FlagScheme::Simple,
        Some(s) => s
            .parse()
            .map_err(|_| PlatformError::validation("flag_scheme", format!("unknown scheme {s:?}")))?,
    };
    let result = blocking(p, move |p| p.qc_dryrun(id, &req.config, from, to, scheme)).await?;
    Ok(Json(result))
}

async fn get_attachment(State(p): State<AppState>, headers: HeaderMap, Path(id): Path<u64>) -> ApiResult<Json<Value>> {
    require(&p, &headers, None)?;
    Ok(Json(crate::qc::attachment_view(&p.attachment(id)?)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AttachmentPatch {
    enabled: bool,
}

async fn patch_attachment(
    State(p): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<u64>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    require(&p, &headers, Some(Role::Operator))?;
    let patch: AttachmentPatch = parse_json(&body)?;
    Ok(Json(blocking(p, move |p| p.set_attachment_enabled(id, patch.enabled)).await?))
}

async fn get_thing_dashboard(
    State(p): State<AppState>,
    headers: HeaderMap,
    Path(uuid): Path<Uuid>,
) -> ApiResult<Json<Value>> {
    require(&p, &headers, None)?;
    p.thing(uuid)?;
    Ok(Json(p.dashboard_view(uuid)?))
}

async fn reprovision_dashboard(
    State(p): State<AppState>,
    headers: HeaderMap,
    Path(uuid): Path<Uuid>,
) -> ApiResult<Json<Value>> {
    require(&p, &headers, Some(Role::Operator))?;
    let (dashboard, share_token) = blocking(p, move |p| p.provision_dashboard(uuid)).await?;
    Ok(Json(json!({ "dashboard": dashboard, "share_token": share_token })))
}

async fn shared_dashboard(State(p): State<AppState>, Path(token): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(p.shared_dashboard(&token)?))
}

async fn revoke_dashboard(
    State(p): State<AppState>,
    headers: HeaderMap,
    Path(token): Path<String>,
) -> ApiResult<StatusCode> {
    require(&p, &headers, Some(Role::Operator))?;
    blocking(p, move |p| p.revoke_share_token(&token)).await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenRequest {
    role: Role,
}

async fn issue_token(State(p): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    require(&p, &headers, Some(Role::Admin))?;
    let req: TokenRequest = parse_json(&body)?;
    let issued = blocking(p, move |p| p.issue_token(req.role)).await?;
    Ok((StatusCode::CREATED, Json(issued)).into_response())
}

async fn list_tokens(State(p): State<AppState>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    require(&p, &headers, Some(Role::Admin))?;
    Ok(Json(json!({ "data": p.list_tokens() })))
}

async fn revoke_token(State(p): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<StatusCode> {
    require(&p, &headers, Some(Role::Admin))?;
    blocking(p, move |p| p.revoke_token(&id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn stats(State(p): State<AppState>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    require(&p, &headers, None)?;
    Ok(Json(p.stats()))
}

// ---- Ingestion ---------------------------------------------------------

async fn push_observations(
    State(p): State<AppState>,
    headers: HeaderMap,
    Path(uuid): Path<Uuid>,
    body: Bytes,
) -> ApiResult<Json<PushSummary>> {
    let secret = bearer(&headers).map(str::to_string);
    let summary = blocking(p, move |p| {
        p.authenticate_push(uuid, secret.as_deref())?;
        Ok(p.ingest(uuid, Transport::Http, &body)?)
    })
    .await?;
    Ok(Json(summary))
}

#[derive(Deserialize)]
struct MqttLogin {
    username: String,
    password: String,
}

#[derive(Deserialize)]
struct MqttUser {
    username: String,
}

#[derive(Deserialize)]
struct MqttAclRequest {
    username: String,
    topic: String,
    /// 1 read, 2 write, 4 subscribe (broker auth-plugin convention).
    acc: u8,
}

fn allow(ok: bool) -> StatusCode {
    if ok {
        StatusCode::OK
    } else {
        StatusCode::FORBIDDEN
    }
}

async fn mqtt_auth(State(p): State<AppState>, body: Bytes) -> ApiResult<StatusCode> {
    let req: MqttLogin = parse_json(&body)?;
    Ok(allow(p.mqtt_login(&req.username, &req.password)))
}

async fn mqtt_superuser(State(p): State<AppState>, body: Bytes) -> ApiResult<StatusCode> {
    let req: MqttUser = parse_json(&body)?;
    Ok(allow(p.mqtt_superuser(&req.username)))
}

async fn mqtt_acl(State(p): State<AppState>, body: Bytes) -> ApiResult<StatusCode> {
    let req: MqttAclRequest = parse_json(&body)?;
    let access = match req.acc {
        1 => MqttAccess::Read,
        2 => MqttAccess::Write,
        4 => MqttAccess::Subscribe,
        other => return Err(PlatformError::validation("acc", format!("unknown access {other}")).into()),
    };
    Ok(allow(p.mqtt_acl(&req.username, &req.topic, access)))
}

// ---- SensorThings ------------------------------------------------------

fn sta_response(result: Result<Value, StaError>) -> Response {
    match result {
        Ok(v) => Json(v).into_response(),
        Err(e) => StaFailure(e).into_response(),
    }
}

async fn sta_get(p: AppState, scope: Option<(Uuid, String)>, path: String, query: String) -> Response {
    let outcome = tokio::task::spawn_blocking(move || match &scope {
        None => {
            let source = PlatformSource::all(&p);
            StaService::new(&source, p.base_url()).get(&path, &query)
        }
        Some((thing, base)) => {
            let source = PlatformSource::scoped(&p, *thing);
            StaService::new(&source, base).get(&path, &query)
        }
    })
    .await
    .unwrap_or_else(|e| Err(StaError::Backend(e.to_string())));
    sta_response(outcome)
}

async fn sta_root(
    State(p): State<AppState>,
    headers: HeaderMap,
    RawQuery(query): RawQuery,
) -> ApiResult<Response> {
    require(&p, &headers, None)?;
    Ok(sta_get(p, None, String::new(), query.unwrap_or_default()).await)
}

async fn sta(
    State(p): State<AppState>,
    headers: HeaderMap,
    Path(path): Path<String>,
    RawQuery(query): RawQuery,
) -> ApiResult<Response> {
    require(&p, &headers, None)?;
    Ok(sta_get(p, None, path, query.unwrap_or_default()).await)
}

fn share_scope(p: &Platform, token: &str) -> ApiResult<(Uuid, String)> {
    let thing = p.share_scope(token)?;
    Ok((thing, format!("{}/platform/v1/dashboards/{token}", p.base_url())))
}

async fn shared_sta_root(
    State(p): State<AppState>,
    Path(token): Path<String>,
    RawQuery(query): RawQuery,
) -> ApiResult<Response> {
    let scope = share_scope(&p, &token)?;
    Ok(sta_get(p, Some(scope), String::new(), query.unwrap_or_default()).await)
}

async fn shared_sta(
    State(p): State<AppState>,
    Path((token, path)): Path<(String, String)>,
    RawQuery(query): RawQuery,
) -> ApiResult<Response> {
    let scope = share_scope(&p, &token)?;
    Ok(sta_get(p, Some(scope), path, query.unwrap_or_default()).await)
}
