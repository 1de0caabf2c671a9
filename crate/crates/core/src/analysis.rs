//! Post-run statistics over a finished (or in-progress) store.
//!
//! Individual rates are only trusted for ideas shown more than once, so most
//! metrics restrict themselves to those "eligible" ideas. Familial rates use
//! every idea. Rates are binned into four quarter-width classes; a rate
//! sitting exactly on an inner boundary counts half in each neighbour.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::idea_store::{Event, FamilyNo, IdeaId, IdeaRecord, IdeaStore};

pub const CLASS_COUNT: usize = 4;
pub const CLASS_LABELS: [&str; CLASS_COUNT] = ["[0,0.25)", "[0.25,0.5)", "[0.5,0.75)", "[0.75,1]"];
pub const DEFAULT_WINDOW: usize = 24;
pub const DEFAULT_ID_CUTOFF: IdeaId = 168;
pub const DEFAULT_GOOD_THRESHOLD: f64 = 0.75;

pub type ClassWeights = [f64; CLASS_COUNT];
pub type Matrix = [[f64; CLASS_COUNT]; CLASS_COUNT];

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("store has no ideas")]
    EmptyStore,
    #[error("no idea has been presented more than once")]
    NoEligibleIdeas,
    #[error("no parent/offspring pair where both were presented more than once")]
    NoEligiblePairs,
    #[error("window size must be positive")]
    InvalidWindow,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// More than one presentation.
pub fn is_eligible(record: &IdeaRecord) -> bool {
    record.presentations > 1
}

fn rate(record: &IdeaRecord) -> f64 {
    f64::from(record.score) / f64::from(record.presentations)
}

/// Class membership of the rate `score / presentations`, compared in exact
/// integer arithmetic. `presentations` must be positive.
pub fn class_weights(score: u32, presentations: u32) -> ClassWeights {
    assert!(presentations > 0, "class of an unpresented idea");
    let quarters = 4 * u64::from(score);
    let e = u64::from(presentations);
    let mut weights = [0.0; CLASS_COUNT];
    for k in 1..CLASS_COUNT as u64 {
        if quarters == k * e {
            weights[k as usize - 1] = 0.5;
            weights[k as usize] = 0.5;
            return weights;
        }
    }
    let class = (1..CLASS_COUNT as u64).filter(|k| quarters > k * e).count();
    weights[class] = 1.0;
    weights
}

/// Same binning for an arbitrary rate in `[0, 1]`.
pub fn class_weights_for_rate(rate: f64) -> ClassWeights {
    let mut weights = [0.0; CLASS_COUNT];
    for k in 1..CLASS_COUNT {
        if rate == k as f64 * 0.25 {
            weights[k - 1] = 0.5;
            weights[k] = 0.5;
            return weights;
        }
    }
    let class = (1..CLASS_COUNT).filter(|k| rate > *k as f64 * 0.25).count();
    weights[class] = 1.0;
    weights
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub idea_count: usize,
    pub participant_count: usize,
    pub total_presentations: u64,
    pub total_score: u64,
    /// Absent when nothing was ever presented.
    pub total_score_rate: Option<f64>,
    pub mean_isr_eligible: Option<f64>,
}

pub fn summary(store: &IdeaStore) -> Result<SummaryReport, AnalysisError> {
    if store.is_empty() {
        return Err(AnalysisError::EmptyStore);
    }
    let records = store.records();
    let total_presentations: u64 = records.iter().map(|r| u64::from(r.presentations)).sum();
    let total_score: u64 = records.iter().map(|r| u64::from(r.score)).sum();
    let mut participants: BTreeSet<u32> = records.iter().map(|r| r.participant_no).collect();
    for event in store.events() {
        if let Event::Commit(c) = event {
            participants.insert(c.participant);
        }
    }
    let eligible: Vec<f64> = records.iter().filter(|r| is_eligible(r)).map(rate).collect();
    Ok(SummaryReport {
        idea_count: records.len(),
        participant_count: participants.len(),
        total_presentations,
        total_score,
        total_score_rate: (total_presentations > 0).then(|| total_score as f64 / total_presentations as f64),
        mean_isr_eligible: (!eligible.is_empty()).then(|| eligible.iter().sum::<f64>() / eligible.len() as f64),
    })
}

/// Normalized four-class histogram of eligible individual rates.
pub fn isr_histogram(store: &IdeaStore) -> Result<ClassWeights, AnalysisError> {
    let mut mass = [0.0; CLASS_COUNT];
    let mut count = 0usize;
    for r in store.records().iter().filter(|r| is_eligible(r)) {
        let w = class_weights(r.score, r.presentations);
        for (m, x) in mass.iter_mut().zip(w) {
            *m += x;
        }
        count += 1;
    }
    if count == 0 {
        return Err(AnalysisError::NoEligibleIdeas);
    }
    Ok(mass.map(|m| m / count as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMean {
    pub index: usize,
    pub first_id: IdeaId,
    pub last_id: IdeaId,
    pub eligible: usize,
    pub mean: Option<f64>,
}

/// Mean eligible rate over consecutive id windows, ignoring ids above
/// `id_cutoff`. A trailing partial window is kept.
pub fn windowed_mean_isr(store: &IdeaStore, window: usize, id_cutoff: IdeaId) -> Result<Vec<WindowMean>, AnalysisError> {
    if window == 0 {
        return Err(AnalysisError::InvalidWindow);
    }
    let kept: Vec<&IdeaRecord> = store.records().iter().take_while(|r| r.id <= id_cutoff).collect();
    Ok(kept
        .chunks(window)
        .enumerate()
        .map(|(index, chunk)| {
            let rates: Vec<f64> = chunk.iter().filter(|r| is_eligible(r)).map(|r| rate(r)).collect();
            WindowMean {
                index,
                first_id: chunk[0].id,
                last_id: chunk[chunk.len() - 1].id,
                eligible: rates.len(),
                mean: (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentOffspring {
    pub pairs: usize,
    /// `joint[offspring_class][parent_class]`, summing to one.
    pub joint: Matrix,
    /// Each column conditioned on the parent class; empty columns stay zero.
    pub transition: Matrix,
}

pub fn parent_offspring_matrices(store: &IdeaStore) -> Result<ParentOffspring, AnalysisError> {
    let mut mass: Matrix = [[0.0; CLASS_COUNT]; CLASS_COUNT];
    let mut pairs = 0usize;
    for child in store.records().iter().filter(|r| !r.is_initial() && is_eligible(r)) {
        let parent = store.get(child.parent_id).expect("parent exists");
        if !is_eligible(parent) {
            continue;
        }
        let pw = class_weights(parent.score, parent.presentations);
        let cw = class_weights(child.score, child.presentations);
        for (row, c) in cw.iter().enumerate() {
            for (col, p) in pw.iter().enumerate() {
                mass[row][col] += c * p;
            }
        }
        pairs += 1;
    }
    if pairs == 0 {
        return Err(AnalysisError::NoEligiblePairs);
    }
    let joint = mass.map(|row| row.map(|m| m / pairs as f64));
    let mut transition = [[0.0; CLASS_COUNT]; CLASS_COUNT];
    for col in 0..CLASS_COUNT {
        let marginal: f64 = (0..CLASS_COUNT).map(|row| mass[row][col]).sum();
        if marginal > 0.0 {
            for row in 0..CLASS_COUNT {
                transition[row][col] = mass[row][col] / marginal;
            }
        }
    }
    Ok(ParentOffspring { pairs, joint, transition })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReportRow {
    pub family_no: FamilyNo,
    /// From every idea in the family; absent if none was presented.
    pub fsr: Option<f64>,
    pub idea_count: usize,
    /// Eligible ideas at or above the threshold, half weight when exactly on it.
    pub good_count: f64,
    pub good_proportion: f64,
}

pub fn family_report(store: &IdeaStore, good_threshold: f64) -> Vec<FamilyReportRow> {
    store
        .all_family_stats()
        .into_iter()
        .map(|stats| {
            let members = store.family_members(stats.family_no).expect("family exists");
            let good_count: f64 = members
                .iter()
                .map(|&id| store.get(id).expect("member exists"))
                .filter(|r| is_eligible(r))
                .map(|r| {
                    let x = rate(r);
                    if x > good_threshold {
                        1.0
                    } else if x == good_threshold {
                        0.5
                    } else {
                        0.0
                    }
                })
                .sum();
            FamilyReportRow {
                family_no: stats.family_no,
                fsr: (stats.total_presentations > 0)
                    .then(|| stats.total_score as f64 / stats.total_presentations as f64),
                idea_count: members.len(),
                good_count,
                good_proportion: good_count / members.len() as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub id: IdeaId,
    pub generation_no: u32,
    pub isr: f64,
    pub presentations: u32,
    /// Shown more than once (closed marker); otherwise shown exactly once.
    pub eligible: bool,
    /// Parent has more than one offspring.
    pub branched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyTrace {
    pub family_no: FamilyNo,
    pub points: Vec<TracePoint>,
}

/// Presented ideas of every family ordered by generation.
pub fn generation_traces(store: &IdeaStore) -> Vec<FamilyTrace> {
    let mut by_family: BTreeMap<FamilyNo, Vec<TracePoint>> = BTreeMap::new();
    for r in store.records() {
        by_family.entry(r.family_no).or_default();
        if r.presentations == 0 {
            continue;
        }
        let branched = !r.is_initial() && store.get(r.parent_id).is_some_and(|p| p.offspring_ids.len() > 1);
        by_family.get_mut(&r.family_no).expect("inserted").push(TracePoint {
            id: r.id,
            generation_no: r.generation_no,
            isr: rate(r),
            presentations: r.presentations,
            eligible: is_eligible(r),
            branched,
        });
    }
    by_family
        .into_iter()
        .map(|(family_no, mut points)| {
            points.sort_by_key(|p| (p.generation_no, p.id));
            FamilyTrace { family_no, points }
        })
        .collect()
}

/// Every metric at default settings; absent entries could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullReport {
    pub summary: SummaryReport,
    pub histogram: Option<ClassWeights>,
    pub windows: Vec<WindowMean>,
    pub parent_offspring: Option<ParentOffspring>,
    pub families: Vec<FamilyReportRow>,
    pub traces: Vec<FamilyTrace>,
}

pub fn full_report(store: &IdeaStore) -> Result<FullReport, AnalysisError> {
    Ok(FullReport {
        summary: summary(store)?,
        histogram: isr_histogram(store).ok(),
        windows: windowed_mean_isr(store, DEFAULT_WINDOW, DEFAULT_ID_CUTOFF)?,
        parent_offspring: parent_offspring_matrices(store).ok(),
        families: family_report(store, DEFAULT_GOOD_THRESHOLD),
        traces: generation_traces(store),
    })
}

pub const REPORT_FILES: [&str; 7] = [
    "summary.json",
    "histogram.csv",
    "windows.csv",
    "joint.csv",
    "transition.csv",
    "families.csv",
    "traces.csv",
];

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn write_matrix(path: &Path, m: Option<&Matrix>) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(
        std::iter::once("offspring_class".to_string()).chain(CLASS_LABELS.iter().map(|l| format!("parent {l}"))),
    )?;
    if let Some(m) = m {
        for (row, label) in m.iter().zip(CLASS_LABELS) {
            w.write_record(std::iter::once(label.to_string()).chain(row.iter().map(f64::to_string)))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Write every report file into `dir` (created if missing). Metrics that
/// cannot be computed yield a header-only CSV.
pub fn write_reports(store: &IdeaStore, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, AnalysisError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let report = full_report(store)?;
    let path = |name: &str| dir.join(name);

    fs::write(path("summary.json"), serde_json::to_string_pretty(&report.summary)? + "\n")?;

    let mut w = csv::Writer::from_path(path("histogram.csv"))?;
    w.write_record(["class", "lower", "upper", "mass"])?;
    if let Some(h) = report.histogram {
        for (k, mass) in h.iter().enumerate() {
            w.write_record([
                CLASS_LABELS[k].to_string(),
                (k as f64 * 0.25).to_string(),
                ((k + 1) as f64 * 0.25).to_string(),
                mass.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(path("windows.csv"))?;
    w.write_record(["window", "first_id", "last_id", "eligible", "mean_isr"])?;
    for win in &report.windows {
        w.write_record([
            win.index.to_string(),
            win.first_id.to_string(),
            win.last_id.to_string(),
            win.eligible.to_string(),
            opt(win.mean),
        ])?;
    }
    w.flush()?;

    write_matrix(&path("joint.csv"), report.parent_offspring.as_ref().map(|p| &p.joint))?;
    write_matrix(&path("transition.csv"), report.parent_offspring.as_ref().map(|p| &p.transition))?;

    let mut w = csv::Writer::from_path(path("families.csv"))?;
    w.write_record(["family", "fsr", "idea_count", "good_count", "good_proportion"])?;
    for row in &report.families {
        w.write_record([
            row.family_no.to_string(),
            opt(row.fsr),
            row.idea_count.to_string(),
            row.good_count.to_string(),
            row.good_proportion.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(path("traces.csv"))?;
    w.write_record(["family", "generation", "id", "isr", "presentations", "eligible", "branched"])?;
    for trace in &report.traces {
        for p in &trace.points {
            w.write_record([
                trace.family_no.to_string(),
                p.generation_no.to_string(),
                p.id.to_string(),
                p.isr.to_string(),
                p.presentations.to_string(),
                p.eligible.to_string(),
                p.branched.to_string(),
            ])?;
        }
    }
    w.flush()?;

    Ok(REPORT_FILES.iter().map(|n| path(n)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::idea_store::{CommitEvent, StoreConfig};

    fn roots(n: u32) -> IdeaStore {
        let mut s = IdeaStore::new(StoreConfig::with_sizes(210, n.max(3))).unwrap();
        for i in 0..n {
            s.append_initial(format!("r{i}"), 1).unwrap();
        }
        s
    }

    fn score(s: &mut IdeaStore, id: IdeaId, e: u32, v: u32) {
        for t in 0..e {
            s.commit(CommitEvent {
                participant: 50,
                presented: vec![id],
                voted: if t < v { vec![id] } else { vec![] },
                new_ideas: vec![],
            })
            .unwrap();
        }
    }

    #[test]
    fn class_boundaries_split() {
        assert_eq!(class_weights(1, 2), [0.0, 0.5, 0.5, 0.0]);
        assert_eq!(class_weights(1, 4), [0.5, 0.5, 0.0, 0.0]);
        assert_eq!(class_weights(3, 4), [0.0, 0.0, 0.5, 0.5]);
        assert_eq!(class_weights(0, 3), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(class_weights(1, 3), [0.0, 1.0, 0.0, 0.0]);
        assert_eq!(class_weights(2, 3), [0.0, 0.0, 1.0, 0.0]);
        assert_eq!(class_weights(3, 3), [0.0, 0.0, 0.0, 1.0]);
        for (s, e) in [(0u32, 5u32), (1, 5), (2, 5), (3, 5), (4, 5), (5, 5), (2, 8), (6, 8)] {
            assert_eq!(class_weights(s, e), class_weights_for_rate(s as f64 / e as f64));
        }
    }

    #[test]
    fn summary_examples() {
        let mut s = roots(3);
        assert_eq!(summary(&s).unwrap().total_score_rate, None);
        assert_eq!(summary(&s).unwrap().mean_isr_eligible, None);
        for id in 1..=3 {
            score(&mut s, id, 2, 1);
        }
        let r = summary(&s).unwrap();
        assert_eq!(r.mean_isr_eligible, Some(0.5));
        assert_eq!((r.total_presentations, r.total_score), (6, 3));
        assert_eq!(r.participant_count, 2);
        assert!(matches!(
            summary(&IdeaStore::new(StoreConfig::default()).unwrap()),
            Err(AnalysisError::EmptyStore)
        ));
    }

    #[test]
    fn histogram_examples() {
        let mut s = roots(4);
        score(&mut s, 1, 2, 1);
        score(&mut s, 4, 1, 1); // not eligible
        assert_eq!(isr_histogram(&s).unwrap(), [0.0, 0.5, 0.5, 0.0]);

        let mut s = roots(4);
        for (id, v) in [(1, 0), (2, 1), (3, 2), (4, 3)] {
            score(&mut s, id, 3, v);
        }
        assert_eq!(isr_histogram(&s).unwrap(), [0.25; 4]);
        assert!(matches!(isr_histogram(&roots(3)), Err(AnalysisError::NoEligibleIdeas)));
    }

    #[test]
    fn windows() {
        let mut s = roots(12);
        let mut parent = 1;
        while s.len() < 200 {
            parent = s.append_offspring("c", 2, parent).unwrap().id;
        }
        for id in 1..=200 {
            score(&mut s, id, 3, 2);
        }
        let w = windowed_mean_isr(&s, 24, 168).unwrap();
        assert_eq!(w.len(), 7);
        assert!(w.iter().all(|x| (x.mean.unwrap() - 2.0 / 3.0).abs() < 1e-12 && x.eligible == 24));
        assert_eq!((w[6].first_id, w[6].last_id), (145, 168));
        assert!(windowed_mean_isr(&s, 0, 168).is_err());

        let fresh = roots(12);
        let w = windowed_mean_isr(&fresh, 5, 168).unwrap();
        assert_eq!(w.len(), 3);
        assert!(w.iter().all(|x| x.mean.is_none()));
        assert_eq!(w[2].last_id, 12);
    }

    #[test]
    fn parent_offspring_single_pair() {
        let mut s = roots(3);
        let c = s.append_offspring("c", 2, 1).unwrap().id;
        score(&mut s, 1, 2, 2);
        score(&mut s, c, 2, 0);
        let m = parent_offspring_matrices(&s).unwrap();
        assert_eq!(m.pairs, 1);
        assert_eq!(m.joint[0][3], 1.0);
        assert_eq!((0..4).map(|r| m.transition[r][3]).collect::<Vec<_>>(), vec![1.0, 0.0, 0.0, 0.0]);
        assert!((0..4).all(|r| m.transition[r][0] == 0.0));
    }

    #[test]
    fn parent_on_boundary_splits() {
        let mut s = roots(3);
        let c = s.append_offspring("c", 2, 1).unwrap().id;
        score(&mut s, 1, 2, 1);
        score(&mut s, c, 3, 3);
        let m = parent_offspring_matrices(&s).unwrap();
        assert_eq!(m.joint[3][1], 0.5);
        assert_eq!(m.joint[3][2], 0.5);
        assert_eq!(m.transition[3][1], 1.0);
        assert_eq!(m.transition[3][2], 1.0);
        // ineligible endpoints are skipped
        let mut s = roots(3);
        let c = s.append_offspring("c", 2, 1).unwrap().id;
        score(&mut s, 1, 1, 1);
        score(&mut s, c, 3, 3);
        assert!(matches!(parent_offspring_matrices(&s), Err(AnalysisError::NoEligiblePairs)));
    }

    #[test]
    fn family_report_table_rows() {
        let mut s = roots(3);
        let b = s.append_offspring("b", 2, 2).unwrap().id;
        let c = s.append_offspring("c", 2, b).unwrap().id;
        score(&mut s, 2, 5, 5);
        score(&mut s, b, 2, 2);
        score(&mut s, c, 2, 1);
        let rows = family_report(&s, 0.75);
        let f2 = rows.iter().find(|r| r.family_no == 2).unwrap();
        assert!((f2.fsr.unwrap() - 8.0 / 9.0).abs() < 1e-15);
        assert_eq!(f2.good_count, 2.0);
        assert_eq!(f2.idea_count, 3);
        assert!((f2.good_proportion - 2.0 / 3.0).abs() < 1e-15);

        let f1 = rows.iter().find(|r| r.family_no == 1).unwrap();
        assert_eq!((f1.fsr, f1.good_count), (None, 0.0));
        score(&mut s, 1, 4, 0);
        let f1 = family_report(&s, 0.75).into_iter().find(|r| r.family_no == 1).unwrap();
        assert_eq!((f1.fsr, f1.good_count), (Some(0.0), 0.0));

        score(&mut s, 3, 4, 3);
        let f3 = family_report(&s, 0.75).into_iter().find(|r| r.family_no == 3).unwrap();
        assert_eq!(f3.good_count, 0.5);
    }

    #[test]
    fn traces_flag_branches() {
        let mut s = roots(3);
        let a = s.append_offspring("a", 2, 1).unwrap().id;
        let b = s.append_offspring("b", 2, a).unwrap().id;
        let x = s.append_offspring("x", 2, 2).unwrap().id;
        let y = s.append_offspring("y", 2, 2).unwrap().id;
        let all: Vec<IdeaId> = (1..=s.len() as u32).collect();
        s.commit(CommitEvent { participant: 9, presented: all.clone(), voted: vec![], new_ideas: vec![] }).unwrap();
        s.commit(CommitEvent { participant: 9, presented: vec![1, a], voted: vec![a], new_ideas: vec![] }).unwrap();
        let traces = generation_traces(&s);
        assert_eq!(traces.len(), 3);
        assert!(traces[0].points.iter().all(|p| !p.branched));
        assert_eq!(traces[0].points.iter().map(|p| p.id).collect::<Vec<_>>(), vec![1, a, b]);
        assert_eq!(traces[0].points.iter().map(|p| p.eligible).collect::<Vec<_>>(), vec![true, true, false]);
        let f2: Vec<(IdeaId, bool)> = traces[1].points.iter().map(|p| (p.id, p.branched)).collect();
        assert_eq!(f2, vec![(2, false), (x, true), (y, true)]);
    }

    #[test]
    fn report_files_written() {
        let mut s = roots(3);
        let c = s.append_offspring("c", 2, 1).unwrap().id;
        score(&mut s, 1, 2, 1);
        score(&mut s, c, 2, 2);
        let dir = tempfile::tempdir().unwrap();
        let files = write_reports(&s, dir.path()).unwrap();
        assert_eq!(files.len(), 7);
        for f in &files {
            assert!(f.exists(), "{f:?}");
        }
        let summary: SummaryReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary.total_presentations, 4);
        let joint = std::fs::read_to_string(dir.path().join("joint.csv")).unwrap();
        assert_eq!(joint.lines().count(), 5);
    }
}
