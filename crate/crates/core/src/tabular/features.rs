use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use log::warn;

use crate::error::{Error, Result};
use crate::nnkit::RealMatrix;
use crate::sample::Label;

/// `m × n` presence matrix over permissions, intents, services and categories.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryFeatureMatrix {
    pub sample_ids: Vec<String>,
    pub feature_names: Vec<String>,
    bits: Vec<u8>,
}

impl BinaryFeatureMatrix {
    pub fn new(sample_ids: Vec<String>, feature_names: Vec<String>, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != sample_ids.len() * feature_names.len() {
            return Err(Error::dim(
                "BinaryFeatureMatrix",
                &[sample_ids.len(), feature_names.len()],
                &[bits.len()],
            ));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Ingestion("feature cells must be 0 or 1".into()));
        }
        let mut seen = BTreeSet::new();
        for id in &sample_ids {
            if !seen.insert(id) {
                return Err(Error::Ingestion(format!("duplicate sample id `{id}`")));
            }
        }
        Ok(Self {
            sample_ids,
            feature_names,
            bits,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn row(&self, i: usize) -> &[u8] {
        let n = self.n_features();
        &self.bits[i * n..(i + 1) * n]
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.bits[i * self.n_features() + j]
    }

    pub fn to_real(&self) -> RealMatrix {
        RealMatrix::new(
            self.n_samples(),
            self.n_features(),
            self.bits.iter().map(|&b| b as f64).collect(),
        )
        .expect("shape checked at construction")
    }

    /// Re-indexes columns onto `names`: absent columns become zero, columns
    /// unknown to `names` are dropped with a warning.
    pub fn align(&self, names: &[String]) -> BinaryFeatureMatrix {
        let index: HashMap<&str, usize> = self
            .feature_names
            .iter()
            .enumerate()
            .map(|(j, n)| (n.as_str(), j))
            .collect();
        let known: BTreeSet<&str> = names.iter().map(String::as_str).collect();
        let dropped = self
            .feature_names
            .iter()
            .filter(|n| !known.contains(n.as_str()))
            .count();
        if dropped > 0 {
            warn!("dropping {dropped} feature column(s) unknown to the fitted vocabulary");
        }
        let mut bits = Vec::with_capacity(self.n_samples() * names.len());
        for i in 0..self.n_samples() {
            for n in names {
                bits.push(index.get(n.as_str()).map_or(0, |&j| self.get(i, j)));
            }
        }
        BinaryFeatureMatrix {
            sample_ids: self.sample_ids.clone(),
            feature_names: names.to_vec(),
            bits,
        }
    }
}

/// Builds the presence matrix from `(id, feature set)` records.
///
/// Rows are sorted by id and columns by feature name, so the result does not
/// depend on record order.
pub fn build_feature_matrix<S: AsRef<str>>(
    records: &[(String, BTreeSet<S>)],
) -> Result<BinaryFeatureMatrix> {
    let mut by_id: BTreeMap<&str, &BTreeSet<S>> = BTreeMap::new();
    for (id, feats) in records {
        if by_id.insert(id.as_str(), feats).is_some() {
            return Err(Error::Ingestion(format!("duplicate sample id `{id}`")));
        }
    }
    let universe: BTreeSet<&str> = records
        .iter()
        .flat_map(|(_, f)| f.iter().map(AsRef::as_ref))
        .collect();
    let feature_names: Vec<String> = universe.iter().map(|s| s.to_string()).collect();
    let mut bits = Vec::with_capacity(by_id.len() * feature_names.len());
    for feats in by_id.values() {
        let present: BTreeSet<&str> = feats.iter().map(AsRef::as_ref).collect();
        bits.extend(universe.iter().map(|f| present.contains(f) as u8));
    }
    BinaryFeatureMatrix::new(
        by_id.keys().map(|s| s.to_string()).collect(),
        feature_names,
        bits,
    )
}

/// A parsed tabular CSV: matrix, labels and the optional AE `origin_id` column.
#[derive(Clone, Debug)]
pub struct TabularCsv {
    pub matrix: BinaryFeatureMatrix,
    pub labels: Vec<Label>,
    pub origin_ids: Option<Vec<String>>,
}

/// Reads `sha256,feat_1,...,feat_n,label[,origin_id]`.
pub fn read_tabular_csv<R: Read>(reader: R) -> Result<TabularCsv> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let has_origin = header.last().map(String::as_str) == Some("origin_id");
    let label_col = header.len().saturating_sub(if has_origin { 2 } else { 1 });
    if header.len() < 2 || header[label_col] != "label" {
        return Err(Error::Ingestion(
            "tabular CSV header must be `sha256,<features...>,label`".into(),
        ));
    }
    let feature_names = header[1..label_col].to_vec();
    let mut ids = Vec::new();
    let mut bits = Vec::new();
    let mut labels = Vec::new();
    let mut origins = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Ingestion(format!("row {} has {} cells", line + 2, rec.len())));
        }
        ids.push(rec[0].to_string());
        for cell in rec.iter().skip(1).take(feature_names.len()) {
            bits.push(parse_bit(cell, line)?);
        }
        let label = Label::from_bit(parse_bit(&rec[label_col], line)?).expect("bit");
        labels.push(label);
        if has_origin {
            origins.push(rec[label_col + 1].to_string());
        }
    }
    Ok(TabularCsv {
        matrix: BinaryFeatureMatrix::new(ids, feature_names, bits)?,
        labels,
        origin_ids: has_origin.then_some(origins),
    })
}

fn parse_bit(cell: &str, line: usize) -> Result<u8> {
    match cell.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Ingestion(format!(
            "row {}: expected 0/1, found `{other}`",
            line + 2
        ))),
    }
}

pub fn write_tabular_csv<W: Write>(
    writer: W,
    matrix: &BinaryFeatureMatrix,
    labels: &[Label],
    origin_ids: Option<&[String]>,
) -> Result<()> {
    if labels.len() != matrix.n_samples() {
        return Err(Error::dim("write_tabular_csv", &[matrix.n_samples()], &[labels.len()]));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["sha256".to_string()];
    header.extend(matrix.feature_names.iter().cloned());
    header.push("label".into());
    if origin_ids.is_some() {
        header.push("origin_id".into());
    }
    w.write_record(&header)?;
    for i in 0..matrix.n_samples() {
        let mut rec = vec![matrix.sample_ids[i].clone()];
        rec.extend(matrix.row(i).iter().map(|b| b.to_string()));
        rec.push((labels[i] as u8).to_string());
        if let Some(o) = origin_ids {
            rec.push(o[i].clone());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, f: &[&str]) -> (String, BTreeSet<String>) {
        (id.into(), f.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn presence_matrix() {
        let m = build_feature_matrix(&[rec("A", &["INTERNET"]), rec("B", &[])]).unwrap();
        assert_eq!(m.feature_names, vec!["INTERNET"]);
        assert_eq!(m.bits(), &[1, 0]);
    }

    #[test]
    fn manifest_feature_kinds_become_columns() {
        let m = build_feature_matrix(&[
            rec("x", &["ACCESS_COARSE_LOCATION", "ACTION_BOOT_COMPLETED"]),
            rec("y", &["KeepAliveService", "BROWSABLE"]),
        ])
        .unwrap();
        assert_eq!(m.n_features(), 4);
        assert_eq!(m.feature_names[0], "ACCESS_COARSE_LOCATION");
    }

    #[test]
    fn record_order_does_not_matter() {
        let a = build_feature_matrix(&[rec("b", &["X", "Y"]), rec("a", &["Y"]), rec("c", &[])]).unwrap();
        let b = build_feature_matrix(&[rec("c", &[]), rec("a", &["Y"]), rec("b", &["Y", "X"])]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let e = build_feature_matrix(&[rec("a", &["X"]), rec("a", &[])]).unwrap_err();
        assert!(matches!(e, Error::Ingestion(_)));
    }

    #[test]
    fn csv_round_trip_and_header_only() {
        let m = build_feature_matrix(&[rec("h1", &["A", "B"]), rec("h2", &["B"])]).unwrap();
        let labels = [Label::Malware, Label::Benign];
        let mut buf = Vec::new();
        write_tabular_csv(&mut buf, &m, &labels, None).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("sha256,A,B,label\n"));
        let back = read_tabular_csv(buf.as_slice()).unwrap();
        assert_eq!(back.matrix, m);
        assert_eq!(back.labels, labels);

        let empty = read_tabular_csv("sha256,A,label\n".as_bytes()).unwrap();
        assert_eq!(empty.matrix.n_samples(), 0);
    }

    #[test]
    fn origin_column_is_read() {
        let text = "sha256,A,label,origin_id\nae1,1,1,h1\n";
        let t = read_tabular_csv(text.as_bytes()).unwrap();
        assert_eq!(t.origin_ids.unwrap(), vec!["h1"]);
    }

    #[test]
    fn bad_cell_rejected() {
        assert!(read_tabular_csv("sha256,A,label\nx,2,1\n".as_bytes()).is_err());
    }

    #[test]
    fn align_drops_unknown_and_zero_fills() {
        let m = build_feature_matrix(&[rec("a", &["A", "Z"])]).unwrap();
        let aligned = m.align(&["A".into(), "B".into()]);
        assert_eq!(aligned.bits(), &[1, 0]);
    }
}
