//! Result tables: per task rows, per family columns, each cell the best
//! size's error formatted as `error / size`.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::aggregate::{aggregate_boa, aggregate_bwa, CellKey, CellSummary};
use super::store::RunRecord;
use crate::model::{named_configs, Family};
use crate::stream::Task;

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub bwa: BTreeMap<CellKey, CellSummary>,
    pub boa: BTreeMap<CellKey, CellSummary>,
}

impl Report {
    pub fn from_records(records: &[RunRecord]) -> Self {
        Report {
            bwa: aggregate_bwa(records),
            boa: aggregate_boa(records),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.bwa.is_empty() && self.boa.is_empty()
    }
}

pub fn format_cell(error: f64, size: &str) -> String {
    format!("{error:.3} / {size}")
}

/// Best size per (task, family).
fn best_by_family(
    table: &BTreeMap<CellKey, CellSummary>,
) -> BTreeMap<(Task, Family), (f64, String)> {
    let mut out: BTreeMap<(Task, Family), (f64, String)> = BTreeMap::new();
    for (k, s) in table {
        let slot = out
            .entry((k.task, k.family))
            .or_insert((f64::INFINITY, String::new()));
        if s.error < slot.0 {
            *slot = (s.error, k.size.label().to_string());
        }
    }
    out
}

fn render_table(title: &str, table: &BTreeMap<CellKey, CellSummary>, out: &mut String) {
    let best = best_by_family(table);
    let tasks: Vec<Task> = Task::ALL
        .into_iter()
        .filter(|t| best.keys().any(|(bt, _)| bt == t))
        .collect();
    let families: Vec<Family> = Family::ALL
        .into_iter()
        .filter(|f| best.keys().any(|(_, bf)| bf == f))
        .collect();
    let _ = writeln!(out, "{title}");
    let mut header = format!("{:<32}", "task");
    for f in &families {
        let _ = write!(header, "{:>16}", f.name());
    }
    let _ = writeln!(out, "{}", header.trim_end());
    for t in tasks {
        let mut row = format!("{:<32}", t.title());
        for f in &families {
            let cell = best
                .get(&(t, *f))
                .map_or("-".to_string(), |(e, s)| format_cell(*e, s));
            let _ = write!(row, "{cell:>16}");
        }
        let _ = writeln!(out, "{}", row.trim_end());
    }
    let _ = writeln!(out);
}

/// Parameter counts of every published configuration at `io` channels in and
/// out, flagging those outside `[0.5×, 2×]` of their bucket.
pub fn render_param_buckets(io: usize) -> String {
    let mut out = format!("parameter counts (input_dim = output_dim = {io})\n");
    let mut outside = Vec::new();
    for c in named_configs() {
        let count = c.config.clone().with_io(io, io).count_parameters();
        let ok = c.bucket.contains(count);
        let _ = writeln!(
            out,
            "{:<22}{:>10}  {}",
            c.name,
            count,
            if ok { "in band" } else { "OUTSIDE band" }
        );
        if !ok {
            outside.push(format!(
                "{}: {count} parameters, {:.2}× the nominal {}; published dimensions kept as listed",
                c.name,
                count as f64 / c.bucket.nominal() as f64,
                c.bucket.label()
            ));
        }
    }
    if !outside.is_empty() {
        let _ = writeln!(out, "documented deviations:");
        for line in outside {
            let _ = writeln!(out, "  {line}");
        }
    }
    out
}

pub fn render_text(report: &Report) -> String {
    let mut out = String::new();
    if report.is_empty() {
        out.push_str("no completed runs\n");
        return out;
    }
    render_table("best when averaged (BWA)", &report.bwa, &mut out);
    render_table("best over all (BOA)", &report.boa, &mut out);
    out.push_str(&render_param_buckets(4));
    out
}

pub fn render_csv(report: &Report) -> String {
    let mut out = String::from("metric,task,family,size,error,config,lr,seeds\n");
    for (metric, table) in [("bwa", &report.bwa), ("boa", &report.boa)] {
        for (k, s) in table {
            let seeds: Vec<String> = s.seeds.iter().map(u64::to_string).collect();
            let _ = writeln!(
                out,
                "{metric},{},{},{},{},{},{},{}",
                k.task.name(),
                k.family.name(),
                k.size.label(),
                s.error,
                s.config,
                s.learning_rate,
                seeds.join(" ")
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SizeBucket;
    use crate::training::store::RunStatus;

    #[test]
    fn cell_format() {
        assert_eq!(format_cell(0.2321, "1k"), "0.232 / 1k");
        assert_eq!(format_cell(0.0, "10k"), "0.000 / 10k");
    }

    #[test]
    fn empty_report() {
        let r = Report::from_records(&[]);
        assert_eq!(render_text(&r), "no completed runs\n");
        assert_eq!(render_csv(&r).lines().count(), 1);
    }

    #[test]
    fn best_size_is_chosen() {
        let rec = |size, err| RunRecord {
            task: Task::SimpleCopy,
            family: Family::Lstm,
            size,
            config: format!("lstm-{size}"),
            learning_rate: 0.001,
            seed: 0,
            val_error: err,
            test_error: err,
            epochs: 1,
            wall_ms: 0,
            status: RunStatus::Ok,
        };
        let r = Report::from_records(&[rec(SizeBucket::K1, 0.3), rec(SizeBucket::K10, 0.1)]);
        let text = render_text(&r);
        assert!(text.contains("0.100 / 10k"), "{text}");
        assert!(render_csv(&r).contains("bwa,simple-copy,lstm,10k,0.1,lstm-10k,0.001,0"));
    }
}
