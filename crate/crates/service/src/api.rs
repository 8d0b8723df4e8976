//! HTTP routes and the per-instance operations behind them.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::OwnedMutexGuard;
use uuid::Uuid;

use statechat_core::lm::LmBackend;
use statechat_core::{Agent, Diagnostic, EngineError, Machine, MachineSpec, Registry, Session, Status, Utterance};

use crate::store::{InstanceRecord, InstanceStore, InstanceSummary, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("no instance {0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("invalid machine spec")]
    Invalid(Vec<Diagnostic>),
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Invalid(_) | ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Engine(e) => match e {
                EngineError::InteractionEnded => StatusCode::UNPROCESSABLE_ENTITY,
                EngineError::Lm(_) | EngineError::UnparsableDecision(_) => StatusCode::BAD_GATEWAY,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
            ApiError::Store(_) | ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        let body = match &self {
            ApiError::Invalid(errors) => json!({ "error": self.to_string(), "errors": errors }),
            _ => json!({ "error": self.to_string() }),
        };
        (status, Json(body)).into_response()
    }
}

/// Shared state of the service.
pub struct AppState {
    store: Arc<dyn InstanceStore>,
    backend: Arc<dyn LmBackend>,
    registry: Arc<Registry>,
    unique_names: bool,
    /// Built machines by instance; filled lazily, dropped on delete.
    machines: RwLock<HashMap<Uuid, Arc<Machine>>>,
    locks: Mutex<HashMap<Uuid, Arc<tokio::sync::Mutex<()>>>>,
}

impl AppState {
    pub fn new(store: Arc<dyn InstanceStore>, backend: Arc<dyn LmBackend>, registry: Arc<Registry>) -> Self {
        Self {
            store,
            backend,
            registry,
            unique_names: false,
            machines: RwLock::default(),
            locks: Mutex::default(),
        }
    }

    pub fn with_unique_names(mut self, unique: bool) -> Self {
        self.unique_names = unique;
        self
    }

    /// Exclusive access to one instance, or 409 if another request holds it.
    fn try_lock(&self, uuid: Uuid) -> Result<OwnedMutexGuard<()>, ApiError> {
        let lock = self.locks.lock().unwrap().entry(uuid).or_default().clone();
        lock.try_lock_owned()
            .map_err(|_| ApiError::Conflict(format!("instance {uuid} is busy")))
    }

    fn record(&self, uuid: Uuid) -> Result<InstanceRecord, ApiError> {
        self.store
            .get(uuid)?
            .ok_or_else(|| ApiError::NotFound(uuid.to_string()))
    }

    fn machine(&self, record: &InstanceRecord) -> Result<Arc<Machine>, ApiError> {
        if let Some(m) = self.machines.read().unwrap().get(&record.uuid) {
            return Ok(m.clone());
        }
        let machine = Arc::new(
            record
                .spec
                .build(&self.registry)
                .map_err(|d| ApiError::Internal(format!("stored spec no longer builds: {d}")))?,
        );
        self.machines
            .write()
            .unwrap()
            .insert(record.uuid, machine.clone());
        Ok(machine)
    }

    fn save(&self, uuid: Uuid, session: &Session) -> Result<(), ApiError> {
        if self.store.save_session(uuid, session)? {
            Ok(())
        } else {
            Err(ApiError::NotFound(uuid.to_string()))
        }
    }

    pub fn create(&self, body: &[u8]) -> Result<Uuid, ApiError> {
        let text = std::str::from_utf8(body).map_err(|e| ApiError::BadRequest(e.to_string()))?;
        let spec = MachineSpec::from_json(text).map_err(|d| ApiError::Invalid(d.0))?;
        let machine = spec.build(&self.registry).map_err(|d| ApiError::Invalid(d.0))?;
        if self.unique_names && self.store.list()?.iter().any(|s| s.name == spec.name) {
            return Err(ApiError::Conflict(format!(
                "a machine named {:?} already exists",
                spec.name
            )));
        }
        let mut session = Session::new(&machine);
        session.storage = spec.initial_storage();
        let record = InstanceRecord::new(spec, session);
        self.store.insert(&record)?;
        self.machines
            .write()
            .unwrap()
            .insert(record.uuid, Arc::new(machine));
        tracing::info!(uuid = %record.uuid, name = %record.spec.name, "instance created");
        Ok(record.uuid)
    }

    pub fn list(&self) -> Result<Vec<InstanceSummary>, ApiError> {
        Ok(self.store.list()?)
    }

    pub fn delete(&self, uuid: Uuid) -> Result<(), ApiError> {
        let _guard = self.try_lock(uuid)?;
        if !self.store.delete(uuid)? {
            return Err(ApiError::NotFound(uuid.to_string()));
        }
        self.machines.write().unwrap().remove(&uuid);
        self.locks.lock().unwrap().remove(&uuid);
        tracing::info!(%uuid, "instance deleted");
        Ok(())
    }

    pub fn info(&self, uuid: Uuid) -> Result<Info, ApiError> {
        let record = self.record(uuid)?;
        Ok(Info {
            name: record.spec.name,
            description: record.spec.description,
            active: record.session.status == Status::Active,
        })
    }

    pub fn conversation(&self, uuid: Uuid) -> Result<Vec<Utterance>, ApiError> {
        Ok(self.record(uuid)?.session.conversation())
    }

    /// Runs one user turn. The caller must hold the instance lock.
    ///
    /// On an instance that has not started yet and whose entry state opens
    /// the conversation, the agent speaks first; an empty `content` then
    /// returns just that opening message.
    fn respond_locked(&self, uuid: Uuid, content: &str) -> Result<Option<String>, ApiError> {
        let record = self.record(uuid)?;
        let machine = self.machine(&record)?;
        let mut agent = Agent::resume(
            machine,
            self.backend.clone(),
            self.registry.clone(),
            record.session,
        )?;
        if agent.status() == Status::Created {
            let leaf = agent.machine().state(agent.session().leaf());
            if leaf.flags.starts_conversation {
                let opening = agent.start()?;
                if content.is_empty() {
                    self.save(uuid, agent.session())?;
                    return Ok(Some(opening.content));
                }
            }
        }
        let reply = agent.respond(content)?.map(|u| u.content);
        self.save(uuid, agent.session())?;
        Ok(reply)
    }

    pub fn respond(&self, uuid: Uuid, content: &str) -> Result<Option<String>, ApiError> {
        let _guard = self.try_lock(uuid)?;
        self.respond_locked(uuid, content)
    }

    /// Back to the initial states with the spec's initial storage.
    pub fn reset(&self, uuid: Uuid) -> Result<(), ApiError> {
        let _guard = self.try_lock(uuid)?;
        let record = self.record(uuid)?;
        let machine = self.machine(&record)?;
        let mut session = record.session;
        session.reset(&machine);
        session.storage = record.spec.initial_storage();
        self.save(uuid, &session)
    }

    pub fn storage_get(&self, uuid: Uuid, key: &str) -> Result<String, ApiError> {
        self.record(uuid)?
            .session
            .storage
            .get(key)
            .map(str::to_owned)
            .ok_or_else(|| ApiError::NotFound(format!("{uuid} has no storage key {key:?}")))
    }

    pub fn storage_put(&self, uuid: Uuid, key: &str, value: String) -> Result<(), ApiError> {
        let _guard = self.try_lock(uuid)?;
        let mut session = self.record(uuid)?.session;
        session.storage.set(key, value);
        self.save(uuid, &session)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Info {
    pub name: String,
    pub description: String,
    pub active: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub uuid: Uuid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UuidBody {
    pub uuid: Uuid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Message {
    pub content: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StorageValue {
    pub value: String,
}

type Shared = Arc<AppState>;

fn parse_uuid(raw: &str) -> Result<Uuid, ApiError> {
    Uuid::parse_str(raw).map_err(|_| ApiError::NotFound(raw.to_owned()))
}

/// Runs blocking work (store access, LM calls) off the async workers.
async fn blocking<T, F>(state: &Shared, f: F) -> Result<T, ApiError>
where
    F: FnOnce(&AppState) -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    let state = state.clone();
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn create(State(state): State<Shared>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let uuid = blocking(&state, move |s| s.create(&body)).await?;
    Ok((StatusCode::CREATED, Json(Created { uuid })))
}

async fn all(State(state): State<Shared>) -> Result<Json<Vec<InstanceSummary>>, ApiError> {
    blocking(&state, |s| s.list()).await.map(Json)
}

async fn remove(State(state): State<Shared>, body: Bytes) -> Result<StatusCode, ApiError> {
    let UuidBody { uuid } =
        serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    blocking(&state, move |s| s.delete(uuid)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn info(State(state): State<Shared>, Path(raw): Path<String>) -> Result<Json<Info>, ApiError> {
    let uuid = parse_uuid(&raw)?;
    blocking(&state, move |s| s.info(uuid)).await.map(Json)
}

#[derive(Deserialize)]
struct RespondBody {
    #[serde(default)]
    content: String,
}

async fn respond(
    State(state): State<Shared>,
    Path(raw): Path<String>,
    body: Bytes,
) -> Result<Json<Message>, ApiError> {
    let uuid = parse_uuid(&raw)?;
    let RespondBody { content } =
        serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    // Take the lock here so a busy instance is reported without queueing.
    let guard = state.try_lock(uuid)?;
    let content = blocking(&state, move |s| {
        let _guard = guard;
        s.respond_locked(uuid, &content)
    })
    .await?;
    Ok(Json(Message { content }))
}

async fn conversation(
    State(state): State<Shared>,
    Path(raw): Path<String>,
) -> Result<Json<Vec<Utterance>>, ApiError> {
    let uuid = parse_uuid(&raw)?;
    blocking(&state, move |s| s.conversation(uuid)).await.map(Json)
}

async fn reset(State(state): State<Shared>, Path(raw): Path<String>) -> Result<StatusCode, ApiError> {
    let uuid = parse_uuid(&raw)?;
    blocking(&state, move |s| s.reset(uuid)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn storage_get(
    State(state): State<Shared>,
    Path((raw, key)): Path<(String, String)>,
) -> Result<Json<StorageValue>, ApiError> {
    let uuid = parse_uuid(&raw)?;
    let value = blocking(&state, move |s| s.storage_get(uuid, &key)).await?;
    Ok(Json(StorageValue { value }))
}

async fn storage_put(
    State(state): State<Shared>,
    Path((raw, key)): Path<(String, String)>,
    body: Bytes,
) -> Result<StatusCode, ApiError> {
    let uuid = parse_uuid(&raw)?;
    let StorageValue { value } =
        serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    blocking(&state, move |s| s.storage_put(uuid, &key, value)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn log_requests(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_owned();
    let started = Instant::now();
    let response = next.run(req).await;
    tracing::info!(
        %method,
        %path,
        status = response.status().as_u16(),
        elapsed_ms = started.elapsed().as_millis() as u64,
        "request"
    );
    response
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/create", post(create))
        .route("/all", get(all))
        .route("/delete", delete(remove))
        .route("/:uuid/info", get(info))
        .route("/:uuid/respond", post(respond))
        .route("/:uuid/conversation", get(conversation))
        .route("/:uuid/reset", put(reset))
        .route("/:uuid/storage/:key", get(storage_get).put(storage_put))
        .layer(middleware::from_fn(log_requests))
        .with_state(state)
}
