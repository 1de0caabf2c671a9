//! Login / commit protocol over a shared idea store.
//!
//! A login reads an immutable snapshot of the store and, once the initial
//! phase is over, draws a stimulus grid from it. Nothing is written at login:
//! presentations, votes and new ideas are applied together when the session
//! commits, through a single serialized commit path. Abandoned or expired
//! sessions therefore leave no trace in the store.
//!
//! The engine is `Send + Sync`; request handlers share it behind an `Arc`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::{info, warn};
use parking_lot::{Mutex, RwLock};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::idea_store::{
    CommitEvent, EventLogWriter, IdeaId, IdeaStore, NewIdea, ParticipantNo, StoreConfig, StoreError,
};
use crate::selection::{column_parent, select_grid, SelectionError, SelectionStrategy, StimulusGrid, GRID_COLUMNS};

/// Ideas a participant writes per session.
pub const IDEAS_PER_SESSION: usize = 3;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("participant numbers must be positive")]
    InvalidParticipant,
    #[error("ideation is complete: {idea_count} of {target} ideas collected")]
    Terminated { idea_count: usize, target: u32 },
    #[error("unknown session")]
    UnknownSession,
    #[error("session was already committed")]
    AlreadyCommitted,
    #[error("session was abandoned")]
    Abandoned,
    #[error("session expired")]
    Expired,
    #[error("invalid submission: {0}")]
    InvalidSubmission(String),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(String);

impl SessionId {
    fn generate() -> Self {
        Self(Uuid::new_v4().to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<String> for SessionId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Phase {
    /// Fewer than `family_count` ideas exist; write three unprompted ideas.
    Initial,
    Stimulus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub id: SessionId,
    pub participant_no: ParticipantNo,
    pub phase: Phase,
    /// Present exactly in the stimulus phase.
    pub grid: Option<StimulusGrid>,
    /// Store version the grid was drawn from.
    pub snapshot_version: usize,
    pub created_at: Duration,
}

/// What a participant hands in at logout.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    /// `(column, row)` of each checked vote box.
    pub voted_cells: Vec<(usize, usize)>,
    /// `(column, text)`; at most one per column.
    pub new_ideas: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitReceipt {
    pub idea_count: usize,
    pub terminated: bool,
    pub new_ids: Vec<IdeaId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineStatus {
    pub idea_count: usize,
    pub target_idea_count: u32,
    pub family_count: u32,
    pub terminated: bool,
    pub strategy: SelectionStrategy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    pub strategy: SelectionStrategy,
    pub session_timeout: Duration,
    /// Seeds the per-login selection streams.
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            strategy: SelectionStrategy::Ecbw,
            session_timeout: Duration::from_secs(60 * 60),
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn new(strategy: SelectionStrategy, seed: u64) -> Self {
        Self {
            strategy,
            seed,
            ..Self::default()
        }
    }
}

/// Monotonic time source, injectable for expiry tests.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
}

pub struct SystemClock {
    start: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self { start: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.start.elapsed()
    }
}

#[derive(Default)]
pub struct ManualClock {
    millis: AtomicU64,
}

impl ManualClock {
    pub fn advance(&self, by: Duration) {
        self.millis.fetch_add(by.as_millis() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        Duration::from_millis(self.millis.load(Ordering::SeqCst))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Closed {
    Committing,
    Committed,
    Abandoned,
    Expired,
}

#[derive(Default)]
struct SessionTable {
    open: HashMap<SessionId, Session>,
    closed: HashMap<SessionId, Closed>,
}

impl SessionTable {
    fn expire(&mut self, now: Duration, timeout: Duration) {
        let expired: Vec<SessionId> = self
            .open
            .values()
            .filter(|s| now.saturating_sub(s.created_at) > timeout)
            .map(|s| s.id.clone())
            .collect();
        for id in expired {
            info!("session {id} expired");
            self.open.remove(&id);
            self.closed.insert(id, Closed::Expired);
        }
    }
}

pub struct SessionEngine {
    config: EngineConfig,
    current: RwLock<Arc<IdeaStore>>,
    /// Held for the whole commit; also the durable log, when there is one.
    commit_path: Mutex<Option<EventLogWriter>>,
    sessions: Mutex<SessionTable>,
    logins: AtomicU64,
    clock: Arc<dyn Clock>,
}

impl SessionEngine {
    /// In-memory engine over an existing store.
    pub fn new(store: IdeaStore, config: EngineConfig) -> Self {
        Self {
            config,
            current: RwLock::new(Arc::new(store)),
            commit_path: Mutex::new(None),
            sessions: Mutex::new(SessionTable::default()),
            logins: AtomicU64::new(0),
            clock: Arc::new(SystemClock::default()),
        }
    }

    /// Engine backed by an event-log file. An existing log is replayed; a
    /// missing one is created from `store_config`.
    pub fn open(path: impl AsRef<Path>, store_config: StoreConfig, config: EngineConfig) -> Result<Self, EngineError> {
        let path = path.as_ref();
        let store = if path.exists() && std::fs::metadata(path).map_err(StoreError::from)?.len() > 0 {
            IdeaStore::load(path)?
        } else {
            IdeaStore::new(store_config)?
        };
        let writer = EventLogWriter::open(path, &store)?;
        let engine = Self::new(store, config);
        *engine.commit_path.lock() = Some(writer);
        Ok(engine)
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Immutable view of the store as of now.
    pub fn snapshot(&self) -> Arc<IdeaStore> {
        self.current.read().clone()
    }

    pub fn is_terminated(&self) -> bool {
        self.snapshot().is_terminated()
    }

    pub fn status(&self) -> EngineStatus {
        let store = self.snapshot();
        EngineStatus {
            idea_count: store.len(),
            target_idea_count: store.config().target_idea_count,
            family_count: store.config().family_count,
            terminated: store.is_terminated(),
            strategy: self.config.strategy,
        }
    }

    pub fn open_session_count(&self) -> usize {
        let mut table = self.sessions.lock();
        table.expire(self.clock.now(), self.config.session_timeout);
        table.open.len()
    }

    pub fn session(&self, id: &SessionId) -> Option<Session> {
        self.sessions.lock().open.get(id).cloned()
    }

    pub fn login(&self, participant_no: ParticipantNo) -> Result<Session, EngineError> {
        if participant_no == 0 {
            return Err(EngineError::InvalidParticipant);
        }
        let now = self.clock.now();
        self.sessions.lock().expire(now, self.config.session_timeout);

        let store = self.snapshot();
        if store.is_terminated() {
            return Err(EngineError::Terminated {
                idea_count: store.len(),
                target: store.config().target_idea_count,
            });
        }
        let login_no = self.logins.fetch_add(1, Ordering::SeqCst);
        let (phase, grid) = if store.len() < store.config().family_count as usize {
            (Phase::Initial, None)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(login_no);
            let grid = select_grid(self.config.strategy, &store, participant_no, &mut rng)?;
            (Phase::Stimulus, Some(grid))
        };
        let session = Session {
            id: SessionId::generate(),
            participant_no,
            phase,
            grid,
            snapshot_version: store.version(),
            created_at: now,
        };
        self.sessions.lock().open.insert(session.id.clone(), session.clone());
        Ok(session)
    }

    /// Discard an open session without touching the store. Returns whether
    /// the session was open.
    pub fn abandon(&self, id: &SessionId) -> bool {
        let mut table = self.sessions.lock();
        if table.open.remove(id).is_some() {
            table.closed.insert(id.clone(), Closed::Abandoned);
            true
        } else {
            false
        }
    }

    pub fn commit(&self, id: &SessionId, submission: &Submission) -> Result<CommitReceipt, EngineError> {
        let session = {
            let mut table = self.sessions.lock();
            table.expire(self.clock.now(), self.config.session_timeout);
            match table.open.get(id) {
                Some(s) => {
                    validate_submission(s, submission)?;
                    let s = table.open.remove(id).expect("present");
                    table.closed.insert(id.clone(), Closed::Committing);
                    s
                }
                None => {
                    return Err(match table.closed.get(id) {
                        Some(Closed::Committed | Closed::Committing) => EngineError::AlreadyCommitted,
                        Some(Closed::Abandoned) => EngineError::Abandoned,
                        Some(Closed::Expired) => EngineError::Expired,
                        None => EngineError::UnknownSession,
                    })
                }
            }
        };

        let result = self.apply_commit(&session, submission);
        let mut table = self.sessions.lock();
        match &result {
            Ok(_) => {
                table.closed.insert(id.clone(), Closed::Committed);
            }
            Err(_) => {
                table.closed.remove(id);
                table.open.insert(id.clone(), session);
            }
        }
        result
    }

    fn apply_commit(&self, session: &Session, submission: &Submission) -> Result<CommitReceipt, EngineError> {
        let mut writer = self.commit_path.lock();
        let current = self.snapshot();
        let event = build_commit_event(session, submission, &current)?;

        let initial_overflow = session.phase == Phase::Initial
            && current.len() + event.new_ideas.len() > current.config().family_count as usize;
        if initial_overflow {
            warn!(
                "initial commit from participant {} grows the family count past {}",
                session.participant_no,
                current.config().family_count
            );
        }

        let new_ids;
        let next = match writer.as_mut() {
            Some(w) => {
                let mut next = (*current).clone();
                new_ids = next.commit(event)?;
                w.append(next.events().last().expect("just committed"))?;
                Arc::new(next)
            }
            None => {
                drop(current);
                let mut guard = self.current.write();
                let store = Arc::make_mut(&mut guard);
                new_ids = store.commit(event)?;
                guard.clone()
            }
        };
        *self.current.write() = next.clone();
        Ok(CommitReceipt {
            idea_count: next.len(),
            terminated: next.is_terminated(),
            new_ids,
        })
    }
}

fn validate_submission(session: &Session, submission: &Submission) -> Result<(), EngineError> {
    let invalid = |m: String| Err(EngineError::InvalidSubmission(m));
    let mut columns = BTreeSet::new();
    for (column, _) in &submission.new_ideas {
        if *column >= GRID_COLUMNS {
            return invalid(format!("idea column {column} out of range"));
        }
        if !columns.insert(*column) {
            return invalid(format!("more than one idea in column {column}"));
        }
    }
    match (&session.phase, &session.grid) {
        (Phase::Initial, _) => {
            if !submission.voted_cells.is_empty() {
                return invalid("no ideas are shown in the initial phase, so nothing can be voted".into());
            }
            let written = submission.new_ideas.iter().filter(|(_, t)| !t.trim().is_empty()).count();
            if written != IDEAS_PER_SESSION {
                return invalid(format!("initial phase needs {IDEAS_PER_SESSION} ideas, got {written}"));
            }
        }
        (Phase::Stimulus, Some(grid)) => {
            let mut seen = BTreeSet::new();
            for &(column, row) in &submission.voted_cells {
                if grid.cell(column, row).is_none() {
                    return invalid(format!("vote at ({column}, {row}) does not point at an idea"));
                }
                if !seen.insert((column, row)) {
                    return invalid(format!("duplicate vote at ({column}, {row})"));
                }
            }
        }
        (Phase::Stimulus, None) => unreachable!("stimulus sessions always carry a grid"),
    }
    Ok(())
}

fn build_commit_event(session: &Session, submission: &Submission, store: &IdeaStore) -> Result<CommitEvent, EngineError> {
    let mut ideas: Vec<&(usize, String)> = submission.new_ideas.iter().filter(|(_, t)| !t.trim().is_empty()).collect();
    ideas.sort_by_key(|(column, _)| *column);

    let (presented, voted, new_ideas) = match &session.grid {
        None => {
            let new_ideas = ideas
                .into_iter()
                .map(|(_, text)| NewIdea { text: text.clone(), parent: 0 })
                .collect();
            (Vec::new(), Vec::new(), new_ideas)
        }
        Some(grid) => {
            let voted = submission
                .voted_cells
                .iter()
                .map(|&(c, r)| grid.cell(c, r).expect("validated"))
                .collect();
            let new_ideas = ideas
                .into_iter()
                .map(|(column, text)| {
                    let parent = match column_parent(grid, *column) {
                        Ok(id) => id,
                        Err(SelectionError::EmptyColumn(_)) => {
                            let family_no = grid.columns[*column].family_no;
                            store.latest_k(family_no, 1)?[0].id
                        }
                        Err(e) => return Err(EngineError::from(e)),
                    };
                    Ok(NewIdea { text: text.clone(), parent })
                })
                .collect::<Result<_, EngineError>>()?;
            (grid.presented(), voted, new_ideas)
        }
    };
    Ok(CommitEvent {
        participant: session.participant_no,
        presented,
        voted,
        new_ideas,
    })
}
