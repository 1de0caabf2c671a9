//! Stimulus grid assembly.
//!
//! Three strategies fill the 3x3 grid shown to a participant:
//!
//! * `ECBW` draws three families by roulette over corrected familial rates,
//!   then up to three ideas per family by roulette over corrected individual
//!   rates. Every draw is without replacement and the participant's own
//!   ideas carry zero weight.
//! * `OBW` picks three families uniformly and shows each family's three most
//!   recent ideas. Scores are never consulted.
//! * `HYBRID` picks families like ECBW; the top cell of each column is a
//!   single roulette draw and the two lower cells are the family's latest
//!   ideas.
//!
//! Columns are displayed oldest generation first; ties go to the lower id.

use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::idea_store::{FamilyNo, IdeaId, IdeaStore, ParticipantNo, StoreError};
use crate::score_math::{modified_fsr, modified_isr};

pub const GRID_COLUMNS: usize = 3;
pub const GRID_ROWS: usize = 3;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("need at least {GRID_COLUMNS} families, found {0}")]
    TooFewFamilies(usize),
    #[error("column {0} is out of range")]
    ColumnOutOfRange(usize),
    #[error("column {0} has no ideas")]
    EmptyColumn(usize),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SelectionStrategy {
    Ecbw,
    Obw,
    Hybrid,
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ecbw => "ECBW",
            Self::Obw => "OBW",
            Self::Hybrid => "HYBRID",
        })
    }
}

impl FromStr for SelectionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ECBW" => Ok(Self::Ecbw),
            "OBW" => Ok(Self::Obw),
            "HYBRID" => Ok(Self::Hybrid),
            other => Err(format!("unknown strategy {other:?}, expected ECBW, OBW or HYBRID")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusColumn {
    pub family_no: FamilyNo,
    /// Top to bottom.
    pub cells: Vec<IdeaId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StimulusGrid {
    pub columns: Vec<StimulusColumn>,
}

impl StimulusGrid {
    pub fn cell(&self, column: usize, row: usize) -> Option<IdeaId> {
        self.columns.get(column)?.cells.get(row).copied()
    }

    /// Every displayed idea, column by column.
    pub fn presented(&self) -> Vec<IdeaId> {
        self.columns.iter().flat_map(|c| c.cells.iter().copied()).collect()
    }

    pub fn cell_count(&self) -> usize {
        self.columns.iter().map(|c| c.cells.len()).sum()
    }
}

/// One roulette draw: a single uniform variate walked along the cumulative
/// weights. Returns `None` when no weight is positive.
pub fn roulette_draw<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().filter(|w| **w > 0.0).sum();
    if total <= 0.0 {
        return None;
    }
    let target = rng.random::<f64>() * total;
    let mut cumulative = 0.0;
    let mut last_positive = None;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        cumulative += w;
        last_positive = Some(i);
        if target < cumulative {
            return Some(i);
        }
    }
    // rounding can leave target a hair above the final cumulative sum
    last_positive
}

/// Sequential roulette without replacement: each drawn weight is zeroed
/// before the next draw. Stops early when the positive weights run out.
pub fn draw_without_replacement<R: Rng + ?Sized>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut remaining = weights.to_vec();
    let mut picks = Vec::with_capacity(k);
    while picks.len() < k {
        match roulette_draw(&remaining, rng) {
            Some(i) => {
                remaining[i] = 0.0;
                picks.push(i);
            }
            None => break,
        }
    }
    picks
}

fn sort_for_display(store: &IdeaStore, ids: &mut [IdeaId]) {
    ids.sort_by_key(|&id| (store.get(id).map_or(0, |r| r.generation_no), id));
}

fn require_families(store: &IdeaStore) -> Result<Vec<FamilyNo>, SelectionError> {
    let families: Vec<FamilyNo> = store.family_numbers().collect();
    if families.len() < GRID_COLUMNS {
        return Err(SelectionError::TooFewFamilies(families.len()));
    }
    Ok(families)
}

/// Three distinct families by roulette over corrected familial rates.
pub fn select_families_ecbw<R: Rng + ?Sized>(
    store: &IdeaStore,
    rng: &mut R,
) -> Result<Vec<FamilyNo>, SelectionError> {
    let families = require_families(store)?;
    let params = store.config().correction();
    let weights: Vec<f64> = families
        .iter()
        .map(|&f| Ok(modified_fsr(&store.family_stats(f)?, &params)))
        .collect::<Result<_, StoreError>>()?;
    let mut picks = draw_without_replacement(&weights, GRID_COLUMNS, rng);
    if picks.len() < GRID_COLUMNS {
        // only reachable with custom correction params
        warn!(
            "only {} families have positive weight; filling the rest uniformly",
            picks.len()
        );
        let fill: Vec<f64> = (0..families.len())
            .map(|i| if picks.contains(&i) { 0.0 } else { 1.0 })
            .collect();
        picks.extend(draw_without_replacement(&fill, GRID_COLUMNS - picks.len(), rng));
    }
    Ok(picks.into_iter().map(|i| families[i]).collect())
}

/// Up to three ideas of one family by roulette over corrected individual
/// rates, display-sorted. The participant's own ideas are never drawn.
pub fn select_ideas_ecbw<R: Rng + ?Sized>(
    store: &IdeaStore,
    family_no: FamilyNo,
    participant_no: ParticipantNo,
    rng: &mut R,
) -> Result<Vec<IdeaId>, SelectionError> {
    let members = store.family_members(family_no)?;
    let picks = roulette_over(store, members, participant_no, GRID_ROWS, rng);
    if picks.is_empty() {
        warn!("family {family_no} has no selectable ideas for participant {participant_no}; column left empty");
    }
    let mut ids = picks;
    sort_for_display(store, &mut ids);
    Ok(ids)
}

fn roulette_over<R: Rng + ?Sized>(
    store: &IdeaStore,
    candidates: &[IdeaId],
    participant_no: ParticipantNo,
    k: usize,
    rng: &mut R,
) -> Vec<IdeaId> {
    let params = store.config().correction();
    let weights: Vec<f64> = candidates
        .iter()
        .map(|&id| {
            let r = store.get(id).expect("family member exists");
            if r.participant_no == participant_no {
                0.0
            } else {
                modified_isr(r.presentations, r.score, &params).expect("store keeps score <= presentations")
            }
        })
        .collect();
    draw_without_replacement(&weights, k, rng)
        .into_iter()
        .map(|i| candidates[i])
        .collect()
}

pub fn select_ecbw<R: Rng + ?Sized>(
    store: &IdeaStore,
    participant_no: ParticipantNo,
    rng: &mut R,
) -> Result<StimulusGrid, SelectionError> {
    let families = select_families_ecbw(store, rng)?;
    let columns = families
        .into_iter()
        .map(|family_no| {
            Ok(StimulusColumn {
                family_no,
                cells: select_ideas_ecbw(store, family_no, participant_no, rng)?,
            })
        })
        .collect::<Result<_, SelectionError>>()?;
    Ok(StimulusGrid { columns })
}

/// Three uniformly chosen families, each showing its latest three ideas.
pub fn select_obw<R: Rng + ?Sized>(store: &IdeaStore, rng: &mut R) -> Result<StimulusGrid, SelectionError> {
    let families = require_families(store)?;
    let picks = draw_without_replacement(&vec![1.0; families.len()], GRID_COLUMNS, rng);
    let columns = picks
        .into_iter()
        .map(|i| {
            let family_no = families[i];
            let mut cells: Vec<IdeaId> = store.latest_k(family_no, GRID_ROWS)?.iter().map(|r| r.id).collect();
            sort_for_display(store, &mut cells);
            Ok(StimulusColumn { family_no, cells })
        })
        .collect::<Result<_, SelectionError>>()?;
    Ok(StimulusGrid { columns })
}

/// Families as in ECBW; per column one roulette-drawn top idea plus the two
/// latest ideas not written by the participant.
pub fn select_hybrid<R: Rng + ?Sized>(
    store: &IdeaStore,
    participant_no: ParticipantNo,
    rng: &mut R,
) -> Result<StimulusGrid, SelectionError> {
    let families = select_families_ecbw(store, rng)?;
    let mut columns = Vec::with_capacity(GRID_COLUMNS);
    for family_no in families {
        let others: Vec<IdeaId> = store
            .family_members(family_no)?
            .iter()
            .copied()
            .filter(|&id| store.get(id).is_some_and(|r| r.participant_no != participant_no))
            .collect();
        let split = others.len().saturating_sub(GRID_ROWS - 1);
        let (older, latest) = others.split_at(split);
        let mut cells = roulette_over(store, older, participant_no, 1, rng);
        cells.extend_from_slice(latest);
        if cells.is_empty() {
            warn!("family {family_no} has no selectable ideas for participant {participant_no}; column left empty");
        }
        sort_for_display(store, &mut cells);
        columns.push(StimulusColumn { family_no, cells });
    }
    Ok(StimulusGrid { columns })
}

pub fn select_grid<R: Rng + ?Sized>(
    strategy: SelectionStrategy,
    store: &IdeaStore,
    participant_no: ParticipantNo,
    rng: &mut R,
) -> Result<StimulusGrid, SelectionError> {
    match strategy {
        SelectionStrategy::Ecbw => select_ecbw(store, participant_no, rng),
        SelectionStrategy::Obw => select_obw(store, rng),
        SelectionStrategy::Hybrid => select_hybrid(store, participant_no, rng),
    }
}

/// The bottom cell of a column: parent of whatever is written below it.
pub fn column_parent(grid: &StimulusGrid, column: usize) -> Result<IdeaId, SelectionError> {
    let col = grid.columns.get(column).ok_or(SelectionError::ColumnOutOfRange(column))?;
    col.cells.last().copied().ok_or(SelectionError::EmptyColumn(column))
}
