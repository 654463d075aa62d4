use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::domain::StepTimings;

/// Timings CSV that is flushed after every row, so an aborted run leaves
/// the steps it finished on disk.
pub struct TimingsLog {
    out: BufWriter<File>,
}

impl TimingsLog {
    pub fn create(path: &Path) -> std::io::Result<TimingsLog> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", StepTimings::CSV_HEADER)?;
        out.flush()?;
        Ok(TimingsLog { out })
    }

    pub fn append(&mut self, t: &StepTimings) -> std::io::Result<()> {
        writeln!(self.out, "{}", t.to_csv_row())?;
        self.out.flush()
    }
}

pub fn write_timings_csv(path: &Path, rows: &[StepTimings]) -> std::io::Result<()> {
    let mut log = TimingsLog::create(path)?;
    for r in rows {
        log.append(r)?;
    }
    Ok(())
}

pub fn read_timings_csv(path: &Path) -> std::io::Result<Vec<StepTimings>> {
    let bad = |m: String| std::io::Error::new(std::io::ErrorKind::InvalidData, m);
    let mut lines = BufReader::new(File::open(path)?).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == StepTimings::CSV_HEADER => {}
        Some(Err(e)) => return Err(e),
        _ => return Err(bad("missing timings header".into())),
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(StepTimings::from_csv_row(&line).ok_or_else(|| bad(format!("bad timings row {line:?}")))?);
    }
    Ok(rows)
}

/// One row per step for the whole run: each time column is the slowest
/// site's value (the step cannot finish before it), interactions are summed.
pub fn merge_site_timings(per_site: &[Vec<StepTimings>]) -> Vec<StepTimings> {
    let steps = per_site.iter().map(Vec::len).min().unwrap_or(0);
    (0..steps)
        .map(|i| {
            let mut m = StepTimings { step: per_site[0][i].step, z: per_site[0][i].z, ..Default::default() };
            for site in per_site {
                let t = &site[i];
                m.calc_s = m.calc_s.max(t.calc_s);
                m.migrate_s = m.migrate_s.max(t.migrate_s);
                m.sample_s = m.sample_s.max(t.sample_s);
                m.let_s = m.let_s.max(t.let_s);
                m.mesh_s = m.mesh_s.max(t.mesh_s);
                m.total_s = m.total_s.max(t.total_s);
                m.interactions += t.interactions;
            }
            m
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunSummary {
    pub steps: u64,
    /// Wall time of the whole run including setup and output.
    pub wall_time_s: f64,
    pub total_interactions: u64,
    /// Total interactions over the summed step times.
    pub sustained_interactions_per_s: f64,
    /// Best single step.
    pub peak_interactions_per_s: f64,
}

impl RunSummary {
    pub fn from_rows(rows: &[StepTimings], wall_time_s: f64) -> RunSummary {
        let total_interactions: u64 = rows.iter().map(|r| r.interactions).sum();
        let total_s: f64 = rows.iter().map(|r| r.total_s).sum();
        let rate = |i: u64, s: f64| if s > 0.0 { i as f64 / s } else { 0.0 };
        RunSummary {
            steps: rows.len() as u64,
            wall_time_s,
            total_interactions,
            sustained_interactions_per_s: rate(total_interactions, total_s),
            peak_interactions_per_s: rows.iter().map(|r| rate(r.interactions, r.total_s)).fold(0.0, f64::max),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: u64, total: f64, inter: u64) -> StepTimings {
        StepTimings { step, z: 0.1, calc_s: total / 2.0, total_s: total, interactions: inter, ..Default::default() }
    }

    #[test]
    fn csv_round_trip_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![row(0, 0.5, 100), row(1, 0.25, 100), row(2, 1.0, 300)];
        write_timings_csv(&path, &rows).unwrap();
        let back = read_timings_csv(&path).unwrap();
        assert_eq!(back, rows);
        let s = RunSummary::from_rows(&back, 2.0);
        assert_eq!(s.steps, 3);
        assert_eq!(s.total_interactions, 500);
        assert_eq!(s.sustained_interactions_per_s, 500.0 / 1.75);
        assert_eq!(s.peak_interactions_per_s, 400.0);
    }

    #[test]
    fn empty_run_has_zero_rates() {
        let s = RunSummary::from_rows(&[], 0.1);
        assert_eq!((s.steps, s.total_interactions, s.sustained_interactions_per_s), (0, 0, 0.0));
    }

    #[test]
    fn merge_takes_slowest_and_sums_work() {
        let a = vec![StepTimings { mesh_s: 0.2, ..row(0, 1.0, 10) }];
        let b = vec![StepTimings { mesh_s: 0.1, ..row(0, 2.0, 5) }];
        let m = merge_site_timings(&[a, b]);
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].mesh_s, m[0].total_s, m[0].interactions), (0.2, 2.0, 15));
    }
}
