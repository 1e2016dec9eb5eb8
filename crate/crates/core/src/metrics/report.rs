//! Text serializations of metric reports.
//!
//! Summaries are `key = value` lines. Per-class scores are CSV with header
//! `class,name,f1,iou`; per-sample SPIE is CSV with header
//! `sample,residual`. Numbers use Rust's shortest round-trip formatting, so
//! parsing them back yields the exact same values.

use std::collections::BTreeMap;

use super::confusion::MetricsReport;
use super::spie::SpieReport;
use crate::data::ColorLegend;
use crate::error::{Error, Result};

impl MetricsReport {
    pub fn summary_text(&self) -> String {
        let excluded = self.excluded_class.map_or_else(|| "none".to_string(), |c| c.to_string());
        format!(
            "overall_accuracy = {}\nmean_f1 = {}\nmean_iou = {}\ndice = {}\nexcluded_class = {}\nclasses_scored = {}\n",
            self.overall_accuracy,
            self.mean_f1,
            self.mean_iou,
            self.dice,
            excluded,
            self.classes.len()
        )
    }

    pub fn per_class_csv(&self, legend: Option<&ColorLegend>) -> String {
        let mut out = String::from("class,name,f1,iou\n");
        for (i, &c) in self.classes.iter().enumerate() {
            let name = legend.and_then(|l| l.name(c)).unwrap_or("");
            out.push_str(&format!("{c},{name},{},{}\n", self.per_class_f1[i], self.per_class_iou[i]));
        }
        out
    }
}

impl SpieReport {
    pub fn summary_text(&self) -> String {
        format!("spie = {}\nnum_samples = {}\n", self.spie, self.num_samples())
    }
}

/// One row per sample; `ids` must match the sample count.
pub fn spie_csv(report: &SpieReport, ids: &[String]) -> Result<String> {
    if ids.len() != report.num_samples() {
        return Err(Error::Contract(format!("{} ids for {} samples", ids.len(), report.num_samples())));
    }
    let mut out = String::from("sample,residual\n");
    for (id, v) in ids.iter().zip(&report.per_sample) {
        out.push_str(&format!("{id},{v}\n"));
    }
    Ok(out)
}

/// Parses `key = value` lines, skipping blanks.
pub fn parse_summary(text: &str) -> Result<BTreeMap<String, String>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("summary line without '=': {l:?}")))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerClassRow {
    pub class: usize,
    pub name: String,
    pub f1: f64,
    pub iou: f64,
}

pub fn parse_per_class_csv(text: &str) -> Result<Vec<PerClassRow>> {
    let mut lines = text.lines();
    if lines.next() != Some("class,name,f1,iou") {
        return Err(Error::Format("missing per-class CSV header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let bad = || Error::Format(format!("bad per-class row {l:?}"));
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(PerClassRow {
                class: f[0].parse().map_err(|_| bad())?,
                name: f[1].to_string(),
                f1: f[2].parse().map_err(|_| bad())?,
                iou: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
