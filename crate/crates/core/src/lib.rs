//! Evolutionary computation-assisted brainwriting.
//!
//! Participants vote on a 3x3 grid of earlier ideas and write new ones
//! beneath them. Votes feed reliability-corrected score rates that decide
//! which families and ideas the next participant sees, so the crowd acts as
//! the fitness function and human writing does the reproduction.
//!
//! Modules, bottom up:
//!
//! * [`idea_store`]: append-only event log of ideas, presentations and votes.
//! * [`score_math`]: raw and corrected score rates.
//! * [`selection`]: stimulus grid assembly under ECBW, OBW and hybrid rules.
//! * [`session_engine`]: login / commit protocol with snapshot reads and
//!   serialized commits.
//! * [`analysis`]: summary tables, histograms and lineage statistics.
//! * [`simulator`]: seeded agent-based runs for comparing strategies.

pub mod analysis;
pub mod idea_store;
pub mod score_math;
pub mod selection;
pub mod session_engine;
pub mod simulator;

pub use idea_store::{
    CommitEvent, Event, FamilyNo, FamilyStats, IdeaId, IdeaRecord, IdeaStore, NewIdea, ParticipantNo, StoreConfig,
    StoreError,
};
pub use score_math::CorrectionParams;
pub use selection::{SelectionStrategy, StimulusColumn, StimulusGrid};
