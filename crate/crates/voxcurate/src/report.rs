//! `report`: corpus statistics, the eps sweep grid and before/after
//! verification results, as text and JSON.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use voxcurate_core::model::{corpus_statistics, StatisticsReport};

use crate::error::CliResult;
use crate::layout::{read_json, write_bytes, write_json, Layout};
use crate::stages::{EvalSummary, SweepSummary, TrackingSummary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub statistics: StatisticsReport,
    pub tracking: Option<TrackingSummary>,
    pub sweep: Option<SweepSummary>,
    pub eval: Option<EvalSummary>,
}

fn optional<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> CliResult<Option<T>> {
    if path.is_file() {
        read_json(path).map(Some)
    } else {
        Ok(None)
    }
}

pub fn build(layout: &Layout) -> CliResult<Report> {
    let manifest = layout.load_manifest()?;
    Ok(Report {
        statistics: corpus_statistics(&manifest),
        tracking: optional(&layout.report("tracking.json"))?,
        sweep: optional(&layout.report("sweep.json"))?,
        eval: optional(&layout.report("eval.json"))?,
    })
}

pub fn render(r: &Report) -> String {
    let s = &r.statistics;
    let mut out = String::new();
    let nat: Vec<String> = s.poi_per_nationality.iter().map(|(k, v)| format!("{k} {v}")).collect();
    let _ = writeln!(out, "Corpus statistics");
    let _ = writeln!(out, "  # POI per nationality       {}", if nat.is_empty() { "-".into() } else { nat.join(", ") });
    let _ = writeln!(out, "  # POI listed                {}", s.speakers_listed);
    let _ = writeln!(out, "  # POI with utterances       {}", s.speakers_with_utterances);
    let _ = writeln!(out, "  # utterances                {}", s.total_utterances);
    let _ = writeln!(out, "  Avg # utterances per POI    {:.1}", s.mean_utterances_per_poi);
    let _ = writeln!(out, "  Avg duration per utt (s)    {:.2}", s.mean_duration_s);
    let _ = writeln!(out, "  # total audio hours         {:.2}", s.total_hours);
    if let Some(t) = &r.tracking {
        let _ = writeln!(out, "\nTracking over {} videos", t.videos);
        let _ = writeln!(out, "  cost tracked / baseline     {:.1} / {:.1}", t.tracked.cost, t.baseline.cost);
        let _ = writeln!(out, "  speedup                     {:.2}x", t.cost_ratio);
        let _ = writeln!(out, "  frame agreement             {:.4}", t.frame_agreement);
    }
    if let Some(sw) = &r.sweep {
        let unit = if sw.relative { " (fraction of max distance)" } else { "" };
        let _ = writeln!(out, "\nCleaning sweep, min_pts {}{unit}", sw.min_pts);
        let _ = writeln!(out, "  {:>8} {:>10} {:>6} {:>8} {:>7}", "eps", "distance", "VSR", "EER(%)", "minDCF");
        let _ = writeln!(out, "  {:>8} {:>10} {:>6.2} {:>8.3} {:>7.3}", "none", "-", 1.0, sw.before.eer, sw.before.min_dcf);
        for row in &sw.rows {
            let _ = writeln!(
                out,
                "  {:>8} {:>10.3} {:>6.2} {:>8.3} {:>7.3}",
                row.eps, row.eps_used, row.mean_vsr, row.report.eer, row.report.min_dcf
            );
        }
    }
    if let Some(ev) = &r.eval {
        let _ = writeln!(out, "\nVerification");
        let _ = writeln!(out, "  {:<22} {:>8} {:>7} {:>7}", "", "EER(%)", "minDCF", "utts");
        let b = &ev.before;
        let _ = writeln!(out, "  {:<22} {:>8.3} {:>7.3} {:>7}", "before cleaning", b.report.eer, b.report.min_dcf, b.utterances);
        if let Some(a) = &ev.after {
            let _ = writeln!(out, "  {:<22} {:>8.3} {:>7.3} {:>7}", "after cleaning", a.report.eer, a.report.min_dcf, a.utterances);
        }
    }
    out
}

/// Builds the report, writes `reports/report.{txt,json}` and returns the text.
pub fn report(layout: &Layout) -> CliResult<String> {
    let r = build(layout)?;
    let text = render(&r);
    write_json(&layout.report("report.json"), &r)?;
    write_bytes(&layout.report("report.txt"), text.as_bytes())?;
    Ok(text)
}
