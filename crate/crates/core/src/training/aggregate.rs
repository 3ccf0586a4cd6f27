//! Best-when-averaged and best-over-all summaries per (task, family, size).

use std::collections::{BTreeMap, BTreeSet};

use super::store::RunRecord;
use crate::model::{Family, SizeBucket};
use crate::stream::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub task: Task,
    pub family: Family,
    pub size: SizeBucket,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub error: f64,
    pub config: String,
    pub learning_rate: f64,
    /// Seeds behind `error`: all of them for BWA, the winning one for BOA.
    pub seeds: Vec<u64>,
}

fn groups(records: &[RunRecord]) -> BTreeMap<CellKey, Vec<&RunRecord>> {
    let mut out: BTreeMap<CellKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in records
        .iter()
        .filter(|r| r.is_ok() && r.test_error.is_finite())
    {
        let key = CellKey {
            task: r.task,
            family: r.family,
            size: r.size,
        };
        out.entry(key).or_default().push(r);
    }
    out
}

/// For each group, the (config, lr) cell with the lowest seed-mean test
/// error among cells that have every seed seen in the group.
pub fn aggregate_bwa(records: &[RunRecord]) -> BTreeMap<CellKey, CellSummary> {
    let mut out = BTreeMap::new();
    for (key, runs) in groups(records) {
        let all_seeds: BTreeSet<u64> = runs.iter().map(|r| r.seed).collect();
        let mut cells: BTreeMap<(String, u64), BTreeMap<u64, f64>> = BTreeMap::new();
        for r in &runs {
            cells
                .entry((r.config.clone(), r.learning_rate.to_bits()))
                .or_default()
                .insert(r.seed, r.test_error);
        }
        let best = cells
            .into_iter()
            .filter(|(_, by_seed)| by_seed.keys().copied().collect::<BTreeSet<_>>() == all_seeds)
            .map(|((config, lr), by_seed)| {
                let mean = by_seed.values().sum::<f64>() / by_seed.len() as f64;
                CellSummary {
                    error: mean,
                    config,
                    learning_rate: f64::from_bits(lr),
                    seeds: by_seed.keys().copied().collect(),
                }
            })
            .min_by(|a, b| a.error.total_cmp(&b.error));
        if let Some(best) = best {
            out.insert(key, best);
        }
    }
    out
}

/// For each group, the single run with the lowest test error.
pub fn aggregate_boa(records: &[RunRecord]) -> BTreeMap<CellKey, CellSummary> {
    groups(records)
        .into_iter()
        .filter_map(|(key, runs)| {
            runs.into_iter()
                .min_by(|a, b| a.test_error.total_cmp(&b.test_error))
                .map(|r| {
                    let summary = CellSummary {
                        error: r.test_error,
                        config: r.config.clone(),
                        learning_rate: r.learning_rate,
                        seeds: vec![r.seed],
                    };
                    (key, summary)
                })
        })
        .collect()
}
