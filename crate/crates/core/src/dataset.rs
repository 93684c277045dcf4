//! Observation tables: a nonnegative integer response plus categorical
//! factors, the embedded Trajan rooting experiment, and CSV input/output.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Factor {
    pub name: String,
    pub levels: Vec<String>,
    /// Level index per row.
    pub codes: Vec<usize>,
}

impl Factor {
    pub fn level_of(&self, row: usize) -> &str {
        &self.levels[self.codes[row]]
    }

    /// Indicator of `level` per row.
    pub fn indicator(&self, level: usize) -> impl Iterator<Item = f64> + '_ {
        self.codes.iter().map(move |&c| if c == level { 1.0 } else { 0.0 })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationTable {
    pub response_name: String,
    pub response: Vec<u64>,
    pub factors: Vec<Factor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    /// One level per factor, in factor order.
    pub levels: Vec<String>,
    pub n: usize,
    pub mean: f64,
    /// Sample variance with divisor `n - 1`; absent for single-row cells.
    pub variance: Option<f64>,
}

/// Frequency table of the Trajan experiment: for each number of roots, the
/// count of shoots in each (photoperiod, BAP) cell. Cells run 8h at 2.2, 4.4,
/// 8.8, 17.6 μM, then 16h at the same concentrations.
const TRAJAN_FREQUENCIES: [(u64, [usize; 8]); 16] = [
    (0, [0, 0, 0, 2, 15, 16, 12, 19]),
    (1, [3, 0, 0, 0, 0, 2, 3, 2]),
    (2, [2, 3, 1, 0, 2, 1, 2, 2]),
    (3, [3, 0, 2, 2, 2, 1, 1, 4]),
    (4, [6, 1, 4, 2, 1, 2, 2, 3]),
    (5, [3, 0, 4, 5, 2, 1, 2, 1]),
    (6, [2, 3, 4, 5, 1, 2, 3, 4]),
    (7, [2, 7, 4, 4, 0, 0, 1, 3]),
    (8, [3, 3, 7, 8, 1, 1, 0, 0]),
    (9, [1, 5, 5, 3, 3, 0, 2, 2]),
    (10, [2, 3, 4, 4, 1, 3, 0, 0]),
    (11, [1, 4, 1, 4, 1, 0, 1, 0]),
    (12, [0, 0, 2, 0, 1, 1, 1, 0]),
    (13, [1, 1, 0, 0, 0, 0, 0, 0]),
    (14, [0, 0, 2, 1, 0, 0, 0, 0]),
    (17, [1, 0, 0, 0, 0, 0, 0, 0]),
];

/// The Trajan apple shoot rooting data in long form (270 rows).
///
/// Rows are ordered cell by cell (8h then 16h, BAP ascending within each),
/// and by number of roots within a cell.
pub fn trajan() -> ObservationTable {
    let photo_levels = ["8", "16"];
    let bap_levels = ["2.2", "4.4", "8.8", "17.6"];
    let mut response = Vec::with_capacity(270);
    let mut photo = Vec::with_capacity(270);
    let mut bap = Vec::with_capacity(270);
    for cell in 0..8 {
        for (roots, counts) in TRAJAN_FREQUENCIES.iter() {
            for _ in 0..counts[cell] {
                response.push(*roots);
                photo.push(cell / 4);
                bap.push(cell % 4);
            }
        }
    }
    ObservationTable {
        response_name: "roots".into(),
        response,
        factors: vec![
            Factor {
                name: "photoperiod".into(),
                levels: photo_levels.iter().map(|s| s.to_string()).collect(),
                codes: photo,
            },
            Factor {
                name: "bap".into(),
                levels: bap_levels.iter().map(|s| s.to_string()).collect(),
                codes: bap,
            },
        ],
    }
}

impl ObservationTable {
    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn factor(&self, name: &str) -> Result<&Factor> {
        self.factors
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| Error::UnknownFactor(name.to_string()))
    }

    /// Replace the level order of a factor; `levels` must be a permutation of
    /// the existing levels.
    pub fn reorder_levels(&mut self, name: &str, levels: &[String]) -> Result<()> {
        let factor = self
            .factors
            .iter_mut()
            .find(|f| f.name == name)
            .ok_or_else(|| Error::UnknownFactor(name.to_string()))?;
        let mut sorted_new = levels.to_vec();
        let mut sorted_old = factor.levels.clone();
        sorted_new.sort();
        sorted_old.sort();
        if sorted_new != sorted_old {
            return Err(Error::Schema(format!(
                "levels {levels:?} are not a permutation of {:?}",
                factor.levels
            )));
        }
        let remap: Vec<usize> = factor
            .levels
            .iter()
            .map(|l| levels.iter().position(|m| m == l).expect("checked permutation"))
            .collect();
        for c in factor.codes.iter_mut() {
            *c = remap[*c];
        }
        factor.levels = levels.to_vec();
        Ok(())
    }

    /// Rows whose `factor` equals `level`, as a new table.
    pub fn subset(&self, factor: &str, level: &str) -> Result<ObservationTable> {
        let f = self.factor(factor)?;
        let rows: Vec<usize> = (0..self.n_rows()).filter(|&i| f.level_of(i) == level).collect();
        Ok(self.select_rows(&rows))
    }

    /// The given rows, in the given order. Level lists are kept as they are.
    pub fn select_rows(&self, rows: &[usize]) -> ObservationTable {
        ObservationTable {
            response_name: self.response_name.clone(),
            response: rows.iter().map(|&i| self.response[i]).collect(),
            factors: self
                .factors
                .iter()
                .map(|f| Factor {
                    name: f.name.clone(),
                    levels: f.levels.clone(),
                    codes: rows.iter().map(|&i| f.codes[i]).collect(),
                })
                .collect(),
        }
    }

    /// Same covariates, new response.
    pub fn with_response(&self, response: Vec<u64>) -> Result<ObservationTable> {
        if response.len() != self.n_rows() {
            return Err(Error::Dimension { expected: self.n_rows(), got: response.len() });
        }
        Ok(ObservationTable { response, ..self.clone() })
    }

    /// Per-cell size, mean and variance over every combination of factor
    /// levels present in the data, in level order.
    pub fn cell_summaries(&self) -> Vec<CellSummary> {
        let mut cells: HashMap<Vec<usize>, Vec<u64>> = HashMap::new();
        for (i, &y) in self.response.iter().enumerate() {
            let key: Vec<usize> = self.factors.iter().map(|f| f.codes[i]).collect();
            cells.entry(key).or_default().push(y);
        }
        let mut keys: Vec<Vec<usize>> = cells.keys().cloned().collect();
        keys.sort();
        keys.into_iter()
            .map(|key| {
                let ys = &cells[&key];
                let n = ys.len();
                let mean = ys.iter().sum::<u64>() as f64 / n as f64;
                let variance = (n > 1).then(|| {
                    ys.iter().map(|&y| (y as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64
                });
                CellSummary {
                    levels: key
                        .iter()
                        .zip(&self.factors)
                        .map(|(&c, f)| f.levels[c].clone())
                        .collect(),
                    n,
                    mean,
                    variance,
                }
            })
            .collect()
    }

    /// FNV-1a hash of the response and factor codes.
    pub fn fingerprint(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        feed(self.n_rows() as u64);
        for &y in &self.response {
            feed(y);
        }
        for f in &self.factors {
            for &c in &f.codes {
                feed(c as u64);
            }
        }
        h
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![self.response_name.as_str()];
        header.extend(self.factors.iter().map(|f| f.name.as_str()));
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut record = vec![self.response[i].to_string()];
            record.extend(self.factors.iter().map(|f| f.level_of(i).to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Columns to pull out of a CSV file.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub response: String,
    pub factors: Vec<String>,
}

pub fn read_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<ObservationTable> {
    let file = std::fs::File::open(path)?;
    read_csv_from(file, schema)
}

/// Parse comma-delimited text with a header row. Factor levels are collected
/// in order of first appearance. Row numbers in errors count data rows from 1.
pub fn read_csv_from<R: Read>(reader: R, schema: &CsvSchema) -> Result<ObservationTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::Schema("empty file: no header row".into()));
    }
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let response_col = column(&schema.response)?;
    let factor_cols = schema.factors.iter().map(|f| column(f)).collect::<Result<Vec<_>>>()?;

    let mut response = Vec::new();
    let mut factors: Vec<Factor> = schema
        .factors
        .iter()
        .map(|name| Factor { name: name.clone(), levels: Vec::new(), codes: Vec::new() })
        .collect();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let raw = record.get(response_col).unwrap_or("");
        let y: u64 = raw.parse().map_err(|_| Error::Row {
            row,
            reason: format!("response `{raw}` is not a nonnegative integer"),
        })?;
        response.push(y);
        for (factor, &col) in factors.iter_mut().zip(&factor_cols) {
            let value = record.get(col).unwrap_or("").to_string();
            let code = match factor.levels.iter().position(|l| *l == value) {
                Some(c) => c,
                None => {
                    factor.levels.push(value);
                    factor.levels.len() - 1
                }
            };
            factor.codes.push(code);
        }
    }
    if response.is_empty() {
        return Err(Error::Schema("file has no data rows".into()));
    }
    Ok(ObservationTable { response_name: schema.response.clone(), response, factors })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trajan_schema() -> CsvSchema {
        CsvSchema { response: "roots".into(), factors: vec!["photoperiod".into(), "bap".into()] }
    }

    #[test]
    fn trajan_shape() {
        let d = trajan();
        assert_eq!(d.n_rows(), 270);
        let photo = d.factor("photoperiod").unwrap();
        let zeros16 = (0..270).filter(|&i| photo.level_of(i) == "16" && d.response[i] == 0).count();
        assert_eq!(zeros16, 62);
        let seventeen: Vec<usize> = (0..270).filter(|&i| d.response[i] == 17).collect();
        assert_eq!(seventeen.len(), 1);
        let bap = d.factor("bap").unwrap();
        assert_eq!(photo.level_of(seventeen[0]), "8");
        assert_eq!(bap.level_of(seventeen[0]), "2.2");
    }

    #[test]
    fn trajan_cell_table() {
        let s = trajan().cell_summaries();
        let ns: Vec<usize> = s.iter().map(|c| c.n).collect();
        assert_eq!(ns, vec![30, 30, 40, 40, 30, 30, 30, 40]);
        assert_eq!(s[0].levels, vec!["8", "2.2"]);
        assert_eq!(format!("{:.1}", s[0].mean), "5.8");
        assert_eq!(format!("{:.1}", s[0].variance.unwrap()), "14.1");
        assert_eq!(s[7].levels, vec!["16", "17.6"]);
        assert_eq!(format!("{:.1}", s[7].mean), "2.5");
        assert_eq!(format!("{:.1}", s[7].variance.unwrap()), "8.5");
    }

    #[test]
    fn single_row_cell_has_no_variance() {
        let d = trajan().select_rows(&[0]);
        let s = d.cell_summaries();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].n, 1);
        assert!(s[0].variance.is_none());
    }

    #[test]
    fn csv_round_trip() {
        let d = trajan();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = read_csv_from(buf.as_slice(), &trajan_schema()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn csv_rejects_negative_response_with_row() {
        let text = "roots,photoperiod,bap\n1,8,2.2\n2,8,2.2\n3,8,2.2\n4,8,2.2\n-1,8,2.2\n";
        match read_csv_from(text.as_bytes(), &trajan_schema()) {
            Err(Error::Row { row, .. }) => assert_eq!(row, 5),
            other => panic!("unexpected {other:?}"),
        }
        let text = "roots,photoperiod,bap\n1.5,8,2.2\n";
        assert!(matches!(read_csv_from(text.as_bytes(), &trajan_schema()), Err(Error::Row { row: 1, .. })));
    }

    #[test]
    fn csv_schema_errors() {
        let text = "roots,photoperiod\n1,8\n";
        assert!(matches!(read_csv_from(text.as_bytes(), &trajan_schema()), Err(Error::Schema(_))));
        assert!(matches!(read_csv_from("".as_bytes(), &trajan_schema()), Err(Error::Schema(_))));
        let header_only = "roots,photoperiod,bap\n";
        assert!(matches!(read_csv_from(header_only.as_bytes(), &trajan_schema()), Err(Error::Schema(_))));
    }

    #[test]
    fn level_reordering() {
        let mut d = trajan();
        d.reorder_levels("photoperiod", &["16".into(), "8".into()]).unwrap();
        let photo = d.factor("photoperiod").unwrap();
        assert_eq!(photo.levels, vec!["16", "8"]);
        assert_eq!(photo.level_of(0), "8");
        assert_eq!(photo.codes[0], 1);
        assert!(d.reorder_levels("photoperiod", &["8".into()]).is_err());
        assert!(d.reorder_levels("nope", &[]).is_err());
    }
}
