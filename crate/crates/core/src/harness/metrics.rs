use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Confusion counts with malware as the positive class, plus derived rates.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub scenario: String,
    pub modality: String,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    pub acc: f64,
    pub pre: f64,
    pub rec: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    pub fn from_counts(tp: usize, tn: usize, fp: usize, fn_: usize) -> Result<Self> {
        let n = tp + tn + fp + fn_;
        if n == 0 {
            return Err(Error::Usage("metrics over an empty test set".into()));
        }
        let pre = ratio(tp, tp + fp);
        let rec = ratio(tp, tp + fn_);
        let f1 = if pre + rec == 0.0 { 0.0 } else { 2.0 * pre * rec / (pre + rec) };
        Ok(Self {
            scenario: String::new(),
            modality: String::new(),
            tp,
            tn,
            fp,
            fn_,
            acc: ratio(tp + tn, n),
            pre,
            rec,
            f1,
        })
    }

    /// `predicted[i]` and `actual[i]` are true for malware.
    pub fn from_predictions(predicted: &[bool], actual: &[bool]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::dim("metrics", &[predicted.len()], &[actual.len()]));
        }
        let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
            }
        }
        Self::from_counts(tp, tn, fp, fn_)
    }

    pub fn tagged(mut self, scenario: &str, modality: &str) -> Self {
        self.scenario = scenario.into();
        self.modality = modality.into();
        self
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Writes `scenario,modality,acc,pre,rec,f1` rows. Values use Rust's
/// shortest round-trip float formatting, so parsing reproduces them exactly.
pub fn write_metrics_csv<W: Write>(w: W, rows: &[MetricsReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["scenario", "modality", "acc", "pre", "rec", "f1"])?;
    for r in rows {
        out.write_record([
            r.scenario.clone(),
            r.modality.clone(),
            r.acc.to_string(),
            r.pre.to_string(),
            r.rec.to_string(),
            r.f1.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Row of a parsed `metrics.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub scenario: String,
    pub modality: String,
    pub acc: f64,
    pub pre: f64,
    pub rec: f64,
    pub f1: f64,
}

impl From<&MetricsReport> for MetricsRow {
    fn from(r: &MetricsReport) -> Self {
        Self {
            scenario: r.scenario.clone(),
            modality: r.modality.clone(),
            acc: r.acc,
            pre: r.pre,
            rec: r.rec,
            f1: r.f1,
        }
    }
}

pub fn read_metrics_csv<R: Read>(r: R) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ["scenario", "modality", "acc", "pre", "rec", "f1"] {
        return Err(Error::Format(format!("unexpected metrics header {header:?}")));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(format!("metric `{s}`: {e}")));
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(MetricsRow {
            scenario: rec[0].to_string(),
            modality: rec[1].to_string(),
            acc: num(&rec[2])?,
            pre: num(&rec[3])?,
            rec: num(&rec[4])?,
            f1: num(&rec[5])?,
        });
    }
    Ok(rows)
}

/// F1 per model (rows, first-seen order) and scenario (columns), in percent.
pub fn render_f1_table(rows: &[MetricsRow]) -> String {
    let mut models: Vec<&str> = Vec::new();
    let mut scenarios: Vec<&str> = Vec::new();
    for r in rows {
        if !models.contains(&r.modality.as_str()) {
            models.push(&r.modality);
        }
        if !scenarios.contains(&r.scenario.as_str()) {
            scenarios.push(&r.scenario);
        }
    }
    let width = models.iter().map(|m| m.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}", "model");
    for s in &scenarios {
        out.push_str(&format!(" {s:>11}"));
    }
    out.push('\n');
    for m in &models {
        out.push_str(&format!("{m:<width$}"));
        for s in &scenarios {
            match rows.iter().find(|r| r.modality == *m && r.scenario == *s) {
                Some(r) => out.push_str(&format!(" {:>11.2}", 100.0 * r.f1)),
                None => out.push_str(&format!(" {:>11}", "-")),
            }
        }
        out.push('\n');
    }
    out
}
