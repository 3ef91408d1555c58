use std::net::SocketAddr;
use std::sync::{Arc, Mutex, PoisonError};
use std::time::Instant;

use axum::extract::{Query, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::state::{Requester, ScenarioState};
use super::{ScenarioError, ServeConfig};
use crate::linmem::{latin1, latin1_bytes};

/// Step count of a search, sent only in test mode.
pub const STEPS_HEADER: &str = "x-lab-steps";
/// Carries the victim's session token.
pub const AUTH_HEADER: &str = "x-lab-auth";

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Mutex<ScenarioState>>,
    test_mode: bool,
}

impl AppState {
    pub fn new(state: ScenarioState, test_mode: bool) -> Self {
        Self {
            inner: Arc::new(Mutex::new(state)),
            test_mode,
        }
    }

    /// Runs `f` with exclusive access on the blocking pool. Searches hold
    /// the lock for the whole match, so concurrent requests cannot add
    /// timing noise.
    async fn with<T: Send + 'static>(&self, f: impl FnOnce(&mut ScenarioState) -> T + Send + 'static) -> T {
        let inner = self.inner.clone();
        tokio::task::spawn_blocking(move || f(&mut inner.lock().unwrap_or_else(PoisonError::into_inner)))
            .await
            .expect("scenario handler panicked")
    }
}

struct ApiError(ScenarioError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(json!({"error": self.0.code(), "message": self.0.to_string()}))).into_response()
    }
}

impl From<ScenarioError> for ApiError {
    fn from(e: ScenarioError) -> Self {
        ApiError(e)
    }
}

type ApiResult = Result<Response, ApiError>;

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Request bytes from either a text field (one byte per char) or hex.
fn body_bytes(text: Option<String>, hex: Option<String>) -> Result<Vec<u8>, ScenarioError> {
    match (text, hex) {
        (Some(t), None) => Ok(latin1_bytes(&t)),
        (None, Some(h)) => crate::host::decode_hex(&h).ok_or_else(|| ScenarioError::BadRequest("invalid hex".into())),
        _ => Err(ScenarioError::BadRequest("give exactly one of the text or hex fields".into())),
    }
}

#[derive(Deserialize)]
struct TokenBody {
    token: Option<String>,
    token_hex: Option<String>,
}

async fn sqli_token(State(app): State<AppState>, Json(body): Json<TokenBody>) -> ApiResult {
    let token = body_bytes(body.token, body.token_hex)?;
    let start = Instant::now();
    let addr = app.with(move |s| s.sqli_set_token(&token)).await?;
    Ok(Json(json!({"stored_at": addr, "elapsed_ms": ms(start)})).into_response())
}

#[derive(Deserialize)]
struct LookupParams {
    id: Option<String>,
}

async fn sqli_lookup(State(app): State<AppState>, Query(q): Query<LookupParams>) -> ApiResult {
    let id = match q.id.as_deref().map(str::trim) {
        None | Some("") => None,
        Some(raw) => Some(
            raw.parse::<i64>()
                .map_err(|_| ScenarioError::BadRequest(format!("id `{raw}` is not an integer")))?,
        ),
    };
    let start = Instant::now();
    let result = app.with(move |s| s.sqli_lookup(id)).await?;
    Ok(Json(json!({"columns": result.columns, "rows": result.rows, "elapsed_ms": ms(start)})).into_response())
}

#[derive(Deserialize)]
struct EchoBody {
    fmt: Option<String>,
    fmt_hex: Option<String>,
    #[serde(default)]
    args: [u32; 2],
}

async fn fmt_echo(State(app): State<AppState>, Json(body): Json<EchoBody>) -> ApiResult {
    let fmt = body_bytes(body.fmt, body.fmt_hex)?;
    let start = Instant::now();
    let out = app.with(move |s| s.fmt_echo(&fmt, body.args)).await?;
    Ok(Json(json!({"output": latin1(&out), "elapsed_ms": ms(start)})).into_response())
}

async fn release(State(app): State<AppState>) -> ApiResult {
    let start = Instant::now();
    app.with(|s| s.release()).await?;
    Ok(Json(json!({"released": true, "elapsed_ms": ms(start)})).into_response())
}

#[derive(Deserialize)]
struct PageParams {
    #[serde(default)]
    name: String,
    #[serde(default)]
    a0: u32,
    #[serde(default)]
    a1: u32,
}

async fn ssti_page(State(app): State<AppState>, Query(p): Query<PageParams>) -> ApiResult {
    let name = latin1_bytes(&p.name);
    let start = Instant::now();
    let page = app.with(move |s| s.ssti_page(&name, [p.a0, p.a1])).await?;
    let mut resp = Html(page.html).into_response();
    if let Ok(v) = HeaderValue::from_str(&format!("{:.3}", ms(start))) {
        resp.headers_mut().insert("x-lab-elapsed-ms", v);
    }
    Ok(resp)
}

#[derive(Deserialize)]
struct SecretBody {
    slot: u32,
    secret: Option<String>,
    secret_hex: Option<String>,
}

async fn xsleak_secret(State(app): State<AppState>, headers: HeaderMap, Json(body): Json<SecretBody>) -> ApiResult {
    let secret = body_bytes(body.secret, body.secret_hex)?;
    let start = Instant::now();
    let addr = app
        .with(move |s| {
            let who = s_requester(s, &headers);
            s.xsleak_store_secret(who, body.slot, &secret)
        })
        .await?;
    Ok(Json(json!({"stored_at": addr, "elapsed_ms": ms(start)})).into_response())
}

fn s_requester(s: &ScenarioState, headers: &HeaderMap) -> Requester {
    match headers.get(AUTH_HEADER) {
        Some(v) if v.as_bytes() == s.config().policy.auth_token.as_bytes() => Requester::Victim,
        _ => Requester::Attacker,
    }
}

#[derive(Deserialize, Default)]
struct SearchBody {
    query: Option<String>,
}

/// Always 200 "ok": the body never depends on the search.
async fn xsleak_search(State(app): State<AppState>, headers: HeaderMap, body: Option<Json<SearchBody>>) -> Response {
    let query = body.map(|Json(b)| b).unwrap_or_default().query;
    let test_mode = app.test_mode;
    let r = app
        .with(move |s| {
            let who = s_requester(s, &headers);
            s.xsleak_search(who, query.as_deref())
        })
        .await;
    let mut resp = (StatusCode::OK, r.body).into_response();
    if test_mode {
        resp.headers_mut().insert(STEPS_HEADER, HeaderValue::from(r.steps));
    }
    resp
}

async fn health() -> &'static str {
    "ok"
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sqli/token", post(sqli_token))
        .route("/sqli/lookup", get(sqli_lookup))
        .route("/sqli/echo", post(fmt_echo))
        .route("/sqli/release", post(release))
        .route("/ssti/page", get(ssti_page))
        .route("/ssti/release", post(release))
        .route("/xsleak/secret", post(xsleak_secret))
        .route("/xsleak/search", post(xsleak_search))
        .route("/xsleak/release", post(release))
        .with_state(app)
}

/// Binds and serves until Ctrl-C. `on_bind` receives the bound address.
pub async fn serve(config: ServeConfig, port: u16, on_bind: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let state = ScenarioState::new(config.scenario.clone()).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind((config.bind.as_str(), port)).await?;
    on_bind(listener.local_addr()?);
    let app = router(AppState::new(state, config.test_mode));
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
