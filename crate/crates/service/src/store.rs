//! Instance persistence behind a narrow repository trait.

use std::path::Path;
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use rusqlite::{params, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use statechat_core::{MachineSpec, Session, Status};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("database error: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("corrupt record {uuid}: {reason}")]
    Corrupt { uuid: Uuid, reason: String },
    #[error("instance {0} already exists")]
    Duplicate(Uuid),
}

/// One persisted conversation: the spec it was created from and its session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub uuid: Uuid,
    pub spec: MachineSpec,
    pub session: Session,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl InstanceRecord {
    pub fn new(spec: MachineSpec, session: Session) -> Self {
        let now = Utc::now();
        Self {
            uuid: session.id,
            spec,
            session,
            created_at: now,
            updated_at: now,
        }
    }

    pub fn summary(&self) -> InstanceSummary {
        InstanceSummary {
            uuid: self.uuid,
            name: self.spec.name.clone(),
            description: self.spec.description.clone(),
            status: self.session.status,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub uuid: Uuid,
    pub name: String,
    pub description: String,
    pub status: Status,
}

/// Storage for instance records. Listing returns records in creation order.
pub trait InstanceStore: Send + Sync {
    fn insert(&self, record: &InstanceRecord) -> Result<(), StoreError>;
    fn get(&self, uuid: Uuid) -> Result<Option<InstanceRecord>, StoreError>;
    /// Replaces the session of an existing record; `false` if there is none.
    fn save_session(&self, uuid: Uuid, session: &Session) -> Result<bool, StoreError>;
    fn delete(&self, uuid: Uuid) -> Result<bool, StoreError>;
    fn list(&self) -> Result<Vec<InstanceSummary>, StoreError>;
}

/// Records kept in process memory; gone when the process exits.
#[derive(Debug, Default)]
pub struct MemoryStore {
    records: RwLock<Vec<InstanceRecord>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl InstanceStore for MemoryStore {
    fn insert(&self, record: &InstanceRecord) -> Result<(), StoreError> {
        let mut records = self.records.write().unwrap();
        if records.iter().any(|r| r.uuid == record.uuid) {
            return Err(StoreError::Duplicate(record.uuid));
        }
        records.push(record.clone());
        Ok(())
    }

    fn get(&self, uuid: Uuid) -> Result<Option<InstanceRecord>, StoreError> {
        Ok(self
            .records
            .read()
            .unwrap()
            .iter()
            .find(|r| r.uuid == uuid)
            .cloned())
    }

    fn save_session(&self, uuid: Uuid, session: &Session) -> Result<bool, StoreError> {
        let mut records = self.records.write().unwrap();
        match records.iter_mut().find(|r| r.uuid == uuid) {
            Some(r) => {
                r.session = session.clone();
                r.updated_at = Utc::now();
                Ok(true)
            }
            None => Ok(false),
        }
    }

    fn delete(&self, uuid: Uuid) -> Result<bool, StoreError> {
        let mut records = self.records.write().unwrap();
        let before = records.len();
        records.retain(|r| r.uuid != uuid);
        Ok(records.len() != before)
    }

    fn list(&self) -> Result<Vec<InstanceSummary>, StoreError> {
        Ok(self
            .records
            .read()
            .unwrap()
            .iter()
            .map(InstanceRecord::summary)
            .collect())
    }
}

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS instances (
    seq         INTEGER PRIMARY KEY AUTOINCREMENT,
    uuid        TEXT NOT NULL UNIQUE,
    name        TEXT NOT NULL,
    description TEXT NOT NULL,
    status      TEXT NOT NULL,
    spec        TEXT NOT NULL,
    session     TEXT NOT NULL,
    created_at  TEXT NOT NULL,
    updated_at  TEXT NOT NULL
);
";

/// Single-file SQLite store. Spec and session are kept as JSON documents;
/// name, description and status are duplicated into columns for listing.
pub struct SqliteStore {
    conn: Mutex<Connection>,
}

impl SqliteStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::init(Connection::open(path)?)
    }

    pub fn in_memory() -> Result<Self, StoreError> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self, StoreError> {
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.execute_batch(SCHEMA)?;
        Ok(Self {
            conn: Mutex::new(conn),
        })
    }
}

fn status_text(status: Status) -> &'static str {
    match status {
        Status::Created => "created",
        Status::Active => "active",
        Status::Ended => "ended",
    }
}

fn parse_status(uuid: Uuid, text: &str) -> Result<Status, StoreError> {
    match text {
        "created" => Ok(Status::Created),
        "active" => Ok(Status::Active),
        "ended" => Ok(Status::Ended),
        other => Err(StoreError::Corrupt {
            uuid,
            reason: format!("unknown status `{other}`"),
        }),
    }
}

fn parse_uuid(text: &str) -> Result<Uuid, StoreError> {
    Uuid::parse_str(text).map_err(|e| StoreError::Corrupt {
        uuid: Uuid::nil(),
        reason: e.to_string(),
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("records serialize")
}

fn from_json<T: for<'de> Deserialize<'de>>(uuid: Uuid, text: &str) -> Result<T, StoreError> {
    serde_json::from_str(text).map_err(|e| StoreError::Corrupt {
        uuid,
        reason: e.to_string(),
    })
}

fn parse_time(uuid: Uuid, text: &str) -> Result<DateTime<Utc>, StoreError> {
    DateTime::parse_from_rfc3339(text)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| StoreError::Corrupt {
            uuid,
            reason: e.to_string(),
        })
}

impl InstanceStore for SqliteStore {
    fn insert(&self, record: &InstanceRecord) -> Result<(), StoreError> {
        let conn = self.conn.lock().unwrap();
        let result = conn.execute(
            "INSERT INTO instances (uuid, name, description, status, spec, session, created_at, updated_at)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
            params![
                record.uuid.to_string(),
                record.spec.name,
                record.spec.description,
                status_text(record.session.status),
                record.spec.to_json(),
                to_json(&record.session),
                record.created_at.to_rfc3339(),
                record.updated_at.to_rfc3339(),
            ],
        );
        match result {
            Ok(_) => Ok(()),
            Err(rusqlite::Error::SqliteFailure(e, _))
                if e.code == rusqlite::ErrorCode::ConstraintViolation =>
            {
                Err(StoreError::Duplicate(record.uuid))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn get(&self, uuid: Uuid) -> Result<Option<InstanceRecord>, StoreError> {
        let conn = self.conn.lock().unwrap();
        let row = conn
            .query_row(
                "SELECT spec, session, created_at, updated_at FROM instances WHERE uuid = ?1",
                params![uuid.to_string()],
                |row| {
                    Ok((
                        row.get::<_, String>(0)?,
                        row.get::<_, String>(1)?,
                        row.get::<_, String>(2)?,
                        row.get::<_, String>(3)?,
                    ))
                },
            )
            .optional()?;
        let Some((spec, session, created_at, updated_at)) = row else {
            return Ok(None);
        };
        Ok(Some(InstanceRecord {
            uuid,
            spec: MachineSpec::from_json(&spec).map_err(|d| StoreError::Corrupt {
                uuid,
                reason: d.to_string(),
            })?,
            session: from_json(uuid, &session)?,
            created_at: parse_time(uuid, &created_at)?,
            updated_at: parse_time(uuid, &updated_at)?,
        }))
    }

    fn save_session(&self, uuid: Uuid, session: &Session) -> Result<bool, StoreError> {
        let conn = self.conn.lock().unwrap();
        let changed = conn.execute(
            "UPDATE instances SET session = ?2, status = ?3, updated_at = ?4 WHERE uuid = ?1",
            params![
                uuid.to_string(),
                to_json(session),
                status_text(session.status),
                Utc::now().to_rfc3339(),
            ],
        )?;
        Ok(changed == 1)
    }

    fn delete(&self, uuid: Uuid) -> Result<bool, StoreError> {
        let conn = self.conn.lock().unwrap();
        let changed = conn.execute(
            "DELETE FROM instances WHERE uuid = ?1",
            params![uuid.to_string()],
        )?;
        Ok(changed == 1)
    }

    fn list(&self) -> Result<Vec<InstanceSummary>, StoreError> {
        let conn = self.conn.lock().unwrap();
        let mut stmt =
            conn.prepare("SELECT uuid, name, description, status FROM instances ORDER BY seq")?;
        let rows = stmt.query_map([], |row| {
            Ok((
                row.get::<_, String>(0)?,
                row.get::<_, String>(1)?,
                row.get::<_, String>(2)?,
                row.get::<_, String>(3)?,
            ))
        })?;
        rows.map(|row| {
            let (uuid, name, description, status) = row?;
            let uuid = parse_uuid(&uuid)?;
            Ok(InstanceSummary {
                uuid,
                name,
                description,
                status: parse_status(uuid, &status)?,
            })
        })
        .collect()
    }
}
