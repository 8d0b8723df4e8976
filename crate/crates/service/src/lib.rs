//! REST service hosting many conversation instances, each persisted between
//! requests and addressed by UUID.

pub mod api;
pub mod config;
pub mod store;

pub use api::{router, ApiError, AppState, Info, Message};
pub use config::{BackendKind, ConfigError, ServiceConfig};
pub use store::{InstanceRecord, InstanceStore, InstanceSummary, MemoryStore, SqliteStore, StoreError};
