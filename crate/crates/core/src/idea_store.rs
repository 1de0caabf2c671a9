//! Append-only idea database.
//!
//! Every mutation is an [`Event`]; the materialized [`IdeaStore`] is the
//! fold of its event log. The on-disk form is that log as JSON lines, so a
//! store file doubles as an audit trail of every commit.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score_math::CorrectionParams;

pub type IdeaId = u32;
pub type FamilyNo = u32;
pub type ParticipantNo = u32;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("initial phase is over: {existing} ideas for {family_count} families")]
    InitialPhaseOver { existing: usize, family_count: u32 },
    #[error("unknown idea {0}")]
    UnknownIdea(IdeaId),
    #[error("unknown family {0}")]
    UnknownFamily(FamilyNo),
    #[error("idea {0} was voted but not presented")]
    VoteNotPresented(IdeaId),
    #[error("idea {0} listed twice")]
    DuplicateIdea(IdeaId),
    #[error("participant numbers must be positive")]
    InvalidParticipant,
    #[error("invalid store config: {0}")]
    InvalidConfig(String),
    #[error("event log does not start with a config event")]
    MissingConfig,
    #[error("line {line}: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("inconsistent event: {0}")]
    Inconsistent(String),
    #[error("line {line}: {message}")]
    Invariant { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One idea with its lineage and evaluation counters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdeaRecord {
    pub id: IdeaId,
    pub text: String,
    pub presentations: u32,
    pub score: u32,
    pub participant_no: ParticipantNo,
    pub family_no: FamilyNo,
    pub generation_no: u32,
    /// Zero for initial ideas.
    pub parent_id: IdeaId,
    pub offspring_ids: Vec<IdeaId>,
}

impl IdeaRecord {
    pub fn is_initial(&self) -> bool {
        self.parent_id == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyStats {
    pub family_no: FamilyNo,
    pub idea_count: u32,
    pub total_presentations: u64,
    pub total_score: u64,
    /// Presentations of the family's root idea.
    pub initial_presentations: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub target_idea_count: u32,
    pub family_count: u32,
    pub correction_a: f64,
    pub correction_b: f64,
    pub correction_c: f64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        let c = CorrectionParams::default();
        Self {
            target_idea_count: 210,
            family_count: 12,
            correction_a: c.a,
            correction_b: c.b,
            correction_c: c.c,
        }
    }
}

impl StoreConfig {
    pub fn with_sizes(target_idea_count: u32, family_count: u32) -> Self {
        Self {
            target_idea_count,
            family_count,
            ..Self::default()
        }
    }

    pub fn correction(&self) -> CorrectionParams {
        CorrectionParams {
            a: self.correction_a,
            b: self.correction_b,
            c: self.correction_c,
        }
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        if self.family_count < 3 {
            return Err(StoreError::InvalidConfig(
                "family_count must be at least 3".into(),
            ));
        }
        self.correction()
            .validate()
            .map_err(|e| StoreError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdeaEvent {
    pub id: IdeaId,
    pub text: String,
    pub participant: ParticipantNo,
    pub parent: IdeaId,
    /// Redundant lineage fields, verified against the parent on replay.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyNo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewIdea {
    pub text: String,
    /// Zero makes the idea a new family root.
    pub parent: IdeaId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitEvent {
    pub participant: ParticipantNo,
    pub presented: Vec<IdeaId>,
    pub voted: Vec<IdeaId>,
    pub new_ideas: Vec<NewIdea>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Event {
    Config(StoreConfig),
    Idea(IdeaEvent),
    Commit(CommitEvent),
}

impl Event {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("events always serialize")
    }
}

/// Materialized view of an event log.
#[derive(Debug, Clone, PartialEq)]
pub struct IdeaStore {
    config: StoreConfig,
    records: Vec<IdeaRecord>,
    families: BTreeMap<FamilyNo, Vec<IdeaId>>,
    events: Vec<Event>,
}

impl IdeaStore {
    pub fn new(config: StoreConfig) -> Result<Self, StoreError> {
        config.validate()?;
        Ok(Self {
            config,
            records: Vec::new(),
            families: BTreeMap::new(),
            events: vec![Event::Config(config)],
        })
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    /// Number of ideas, `n`.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[IdeaRecord] {
        &self.records
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Count of events applied so far, including the config event.
    pub fn version(&self) -> usize {
        self.events.len()
    }

    pub fn get(&self, id: IdeaId) -> Option<&IdeaRecord> {
        if id == 0 {
            return None;
        }
        self.records.get(id as usize - 1)
    }

    pub fn family_numbers(&self) -> impl Iterator<Item = FamilyNo> + '_ {
        self.families.keys().copied()
    }

    pub fn family_len(&self) -> usize {
        self.families.len()
    }

    /// Ids of a family in creation order.
    pub fn family_members(&self, family_no: FamilyNo) -> Result<&[IdeaId], StoreError> {
        self.families
            .get(&family_no)
            .map(Vec::as_slice)
            .ok_or(StoreError::UnknownFamily(family_no))
    }

    pub fn is_terminated(&self) -> bool {
        self.records.len() >= self.config.target_idea_count as usize
    }

    pub fn append_initial(
        &mut self,
        text: impl Into<String>,
        participant_no: ParticipantNo,
    ) -> Result<&IdeaRecord, StoreError> {
        if self.records.len() >= self.config.family_count as usize {
            return Err(StoreError::InitialPhaseOver {
                existing: self.records.len(),
                family_count: self.config.family_count,
            });
        }
        self.append_idea(text.into(), participant_no, 0)
    }

    pub fn append_offspring(
        &mut self,
        text: impl Into<String>,
        participant_no: ParticipantNo,
        parent_id: IdeaId,
    ) -> Result<&IdeaRecord, StoreError> {
        if self.get(parent_id).is_none() {
            return Err(StoreError::UnknownIdea(parent_id));
        }
        self.append_idea(text.into(), participant_no, parent_id)
    }

    fn append_idea(
        &mut self,
        text: String,
        participant: ParticipantNo,
        parent: IdeaId,
    ) -> Result<&IdeaRecord, StoreError> {
        let (family, generation) = self.lineage_for(parent)?;
        let event = IdeaEvent {
            id: self.next_id(),
            text,
            participant,
            parent,
            family: Some(family),
            generation: Some(generation),
        };
        self.apply(Event::Idea(event))?;
        Ok(self.records.last().expect("just appended"))
    }

    /// Count one presentation for every id in `presented` and one vote for
    /// every id in `voted`. All-or-nothing.
    pub fn record_presentation_and_votes(
        &mut self,
        participant_no: ParticipantNo,
        presented: &[IdeaId],
        voted: &[IdeaId],
    ) -> Result<(), StoreError> {
        self.commit(CommitEvent {
            participant: participant_no,
            presented: presented.to_vec(),
            voted: voted.to_vec(),
            new_ideas: Vec::new(),
        })
        .map(|_| ())
    }

    /// Apply a whole session commit atomically and return the new idea ids.
    pub fn commit(&mut self, commit: CommitEvent) -> Result<Vec<IdeaId>, StoreError> {
        let first = self.next_id();
        let count = commit.new_ideas.len() as IdeaId;
        self.apply(Event::Commit(commit))?;
        Ok((first..first + count).collect())
    }

    /// Validate and fold one event. State is untouched on error.
    pub fn apply(&mut self, event: Event) -> Result<(), StoreError> {
        self.validate_event(&event)?;
        match &event {
            Event::Config(_) => unreachable!("rejected by validation"),
            Event::Idea(idea) => self.push_record(idea.text.clone(), idea.participant, idea.parent),
            Event::Commit(commit) => {
                for &id in &commit.presented {
                    self.records[id as usize - 1].presentations += 1;
                }
                for &id in &commit.voted {
                    self.records[id as usize - 1].score += 1;
                }
                for idea in &commit.new_ideas {
                    self.push_record(idea.text.clone(), commit.participant, idea.parent);
                }
            }
        }
        self.events.push(event);
        Ok(())
    }

    fn validate_event(&self, event: &Event) -> Result<(), StoreError> {
        match event {
            Event::Config(_) => Err(invariant("config event after start of log")),
            Event::Idea(idea) => {
                if idea.participant == 0 {
                    return Err(StoreError::InvalidParticipant);
                }
                if idea.id != self.next_id() {
                    return Err(invariant(format!(
                        "idea id {} is not the next dense id {}",
                        idea.id,
                        self.next_id()
                    )));
                }
                let (family, generation) = self.lineage_for(idea.parent)?;
                if idea.family.is_some_and(|f| f != family) {
                    return Err(invariant(format!(
                        "idea {} has family {:?}, lineage gives {family}",
                        idea.id, idea.family
                    )));
                }
                if idea.generation.is_some_and(|g| g != generation) {
                    return Err(invariant(format!(
                        "idea {} has generation {:?}, parent gives {generation}",
                        idea.id, idea.generation
                    )));
                }
                Ok(())
            }
            Event::Commit(commit) => {
                if commit.participant == 0 {
                    return Err(StoreError::InvalidParticipant);
                }
                let mut seen = std::collections::BTreeSet::new();
                for &id in &commit.presented {
                    if self.get(id).is_none() {
                        return Err(StoreError::UnknownIdea(id));
                    }
                    if !seen.insert(id) {
                        return Err(StoreError::DuplicateIdea(id));
                    }
                }
                let mut voted = std::collections::BTreeSet::new();
                for &id in &commit.voted {
                    if !seen.contains(&id) {
                        return Err(StoreError::VoteNotPresented(id));
                    }
                    if !voted.insert(id) {
                        return Err(StoreError::DuplicateIdea(id));
                    }
                }
                for idea in &commit.new_ideas {
                    self.lineage_for(idea.parent)?;
                }
                Ok(())
            }
        }
    }

    fn lineage_for(&self, parent: IdeaId) -> Result<(FamilyNo, u32), StoreError> {
        if parent == 0 {
            return Ok((self.next_id(), 1));
        }
        let p = self.get(parent).ok_or(StoreError::UnknownIdea(parent))?;
        Ok((p.family_no, p.generation_no + 1))
    }

    fn next_id(&self) -> IdeaId {
        self.records.len() as IdeaId + 1
    }

    fn push_record(&mut self, text: String, participant_no: ParticipantNo, parent_id: IdeaId) {
        let id = self.next_id();
        let (family_no, generation_no) = self.lineage_for(parent_id).expect("validated");
        if parent_id != 0 {
            self.records[parent_id as usize - 1].offspring_ids.push(id);
        }
        self.families.entry(family_no).or_default().push(id);
        self.records.push(IdeaRecord {
            id,
            text,
            presentations: 0,
            score: 0,
            participant_no,
            family_no,
            generation_no,
            parent_id,
            offspring_ids: Vec::new(),
        });
    }
}

fn invariant(message: impl Into<String>) -> StoreError {
    StoreError::Inconsistent(message.into())
}

impl IdeaStore {
    pub fn family_stats(&self, family_no: FamilyNo) -> Result<FamilyStats, StoreError> {
        let members = self.family_members(family_no)?;
        let mut stats = FamilyStats {
            family_no,
            idea_count: members.len() as u32,
            total_presentations: 0,
            total_score: 0,
            initial_presentations: 0,
        };
        for &id in members {
            let r = &self.records[id as usize - 1];
            stats.total_presentations += u64::from(r.presentations);
            stats.total_score += u64::from(r.score);
            if r.generation_no == 1 {
                stats.initial_presentations = r.presentations;
            }
        }
        Ok(stats)
    }

    /// Stats for every family, ordered by family number.
    pub fn all_family_stats(&self) -> Vec<FamilyStats> {
        self.families
            .keys()
            .map(|&f| self.family_stats(f).expect("family key exists"))
            .collect()
    }

    /// Up to `k` most recent ideas of a family, oldest first.
    pub fn latest_k(&self, family_no: FamilyNo, k: usize) -> Result<Vec<&IdeaRecord>, StoreError> {
        let members = self.family_members(family_no)?;
        let start = members.len().saturating_sub(k);
        Ok(members[start..]
            .iter()
            .map(|&id| &self.records[id as usize - 1])
            .collect())
    }

    /// Rebuild a store by folding an event sequence. The first event must be
    /// the config.
    pub fn replay<I>(events: I) -> Result<Self, StoreError>
    where
        I: IntoIterator<Item = Event>,
    {
        let mut events = events.into_iter();
        let mut store = match events.next() {
            Some(Event::Config(config)) => Self::new(config)?,
            _ => return Err(StoreError::MissingConfig),
        };
        for (i, event) in events.enumerate() {
            store.apply(event).map_err(|e| StoreError::Invariant {
                line: i + 2,
                message: e.to_string(),
            })?;
        }
        Ok(store)
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, StoreError> {
        let mut store: Option<Self> = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let event: Event = serde_json::from_str(&line).map_err(|source| StoreError::Malformed {
                line: line_no,
                source,
            })?;
            match (&mut store, event) {
                (None, Event::Config(config)) => {
                    store = Some(Self::new(config).map_err(|e| StoreError::Invariant {
                        line: line_no,
                        message: e.to_string(),
                    })?);
                }
                (None, _) => return Err(StoreError::MissingConfig),
                (Some(s), event) => s.apply(event).map_err(|e| StoreError::Invariant {
                    line: line_no,
                    message: e.to_string(),
                })?,
            }
        }
        store.ok_or(StoreError::MissingConfig)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }

    pub fn write_log<W: Write>(&self, mut writer: W) -> Result<(), StoreError> {
        for event in &self.events {
            writeln!(writer, "{}", event.to_line())?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn to_log_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_log(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        self.write_log(BufWriter::new(File::create(path)?))
    }

    /// Table-style CSV, one row per idea.
    pub fn export_csv<W: Write>(&self, writer: W) -> Result<(), StoreError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "ID",
            "text",
            "presentations",
            "score",
            "participant",
            "family",
            "generation",
            "parent",
            "offspring",
        ])?;
        for r in &self.records {
            let offspring = r
                .offspring_ids
                .iter()
                .map(u32::to_string)
                .collect::<Vec<_>>()
                .join(";");
            w.write_record([
                r.id.to_string(),
                r.text.clone(),
                r.presentations.to_string(),
                r.score.to_string(),
                r.participant_no.to_string(),
                r.family_no.to_string(),
                r.generation_no.to_string(),
                r.parent_id.to_string(),
                offspring,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Appends events to a log file, one synced line per event.
pub struct EventLogWriter {
    file: File,
}

impl EventLogWriter {
    /// Open `path` for appending. A missing file is created and seeded with
    /// the full log of `store`.
    pub fn open(path: impl AsRef<Path>, store: &IdeaStore) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            store.write_log(&mut file)?;
            file.sync_data()?;
        }
        Ok(Self { file })
    }

    pub fn append(&mut self, event: &Event) -> Result<(), StoreError> {
        let mut line = event.to_line();
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()?;
        Ok(())
    }
}
