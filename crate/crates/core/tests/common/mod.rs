//! Whole-log checkers shared by the integration targets.
#![allow(dead_code)]

use std::collections::HashMap;

use ecbw_core::idea_store::{CommitEvent, Event, IdeaId, IdeaStore};
use ecbw_core::score_math::is_eliminated;

/// Replay `store`'s log, calling `visit` with the state just before each
/// commit is applied.
pub fn fold_commits(store: &IdeaStore, mut visit: impl FnMut(&IdeaStore, &CommitEvent)) {
    let events = store.events();
    let mut state = IdeaStore::replay(events[..1].iter().cloned()).expect("config event");
    for event in &events[1..] {
        if let Event::Commit(c) = event {
            visit(&state, c);
        }
        state.apply(event.clone()).expect("log replays");
    }
}

/// Presentations of ideas that were already eliminated when the grid was drawn.
pub fn elimination_violations(store: &IdeaStore) -> Vec<String> {
    let mut out = Vec::new();
    fold_commits(store, |state, c| {
        for &id in &c.presented {
            let r = state.get(id).expect("presented idea exists");
            if is_eliminated(r.presentations, r.score) {
                out.push(format!("idea {id} shown at E={} S={}", r.presentations, r.score));
            }
        }
    });
    out
}

/// Ideas that passed through E=2, S=0; returns (count, how many later grew past E=2).
pub fn frozen_at_two_zero(store: &IdeaStore) -> (usize, usize) {
    let mut seen: Vec<IdeaId> = Vec::new();
    fold_commits(store, |state, _| {
        for r in state.records() {
            if r.presentations == 2 && r.score == 0 && !seen.contains(&r.id) {
                seen.push(r.id);
            }
        }
    });
    // the final state is never visited by fold_commits
    for r in store.records() {
        if r.presentations == 2 && r.score == 0 && !seen.contains(&r.id) {
            seen.push(r.id);
        }
    }
    let grew = seen.iter().filter(|&&id| store.get(id).unwrap().presentations > 2).count();
    (seen.len(), grew)
}

pub fn self_presentations(store: &IdeaStore) -> usize {
    let mut count = 0;
    fold_commits(store, |state, c| {
        count += c
            .presented
            .iter()
            .filter(|&&id| state.get(id).unwrap().participant_no == c.participant)
            .count();
    });
    count
}

/// Ideas whose family was drawn at least three times after their creation
/// but whose presentation count is not 3. Also returns how many ideas were
/// subject to the law.
pub fn obw_law_violations(store: &IdeaStore) -> (usize, Vec<String>) {
    let mut family_draws_after: HashMap<IdeaId, u32> = HashMap::new();
    fold_commits(store, |state, c| {
        let mut families: Vec<u32> = c.presented.iter().map(|&id| state.get(id).unwrap().family_no).collect();
        families.sort_unstable();
        families.dedup();
        for r in state.records() {
            if families.contains(&r.family_no) {
                *family_draws_after.entry(r.id).or_default() += 1;
            }
        }
    });
    let mut subject = 0;
    let mut bad = Vec::new();
    for r in store.records() {
        if family_draws_after.get(&r.id).copied().unwrap_or(0) >= 3 {
            subject += 1;
            if r.presentations != 3 {
                bad.push(format!("idea {} has E={}", r.id, r.presentations));
            }
        }
    }
    (subject, bad)
}
