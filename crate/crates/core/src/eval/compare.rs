use std::fmt;

use serde::{Deserialize, Serialize};

use super::report::EvalReport;
use super::EvalError;

/// Accuracies closer than this are treated as equal when ranking.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Marker {
    Best,
    Second,
}

impl Marker {
    pub fn symbol(self) -> &'static str {
        match self {
            Marker::Best => "*",
            Marker::Second => "+",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// Mean accuracy over the runs in this cell, as a fraction.
    pub accuracy: f64,
    pub runs: usize,
    pub marker: Option<Marker>,
}

/// Methods as rows, datasets as columns. Runs sharing a row and column are
/// averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub columns: Vec<String>,
    pub rows: Vec<String>,
    pub cells: Vec<Vec<Option<Cell>>>,
}

fn row_key(r: &EvalReport, qualify: bool) -> String {
    if qualify {
        format!("{} {} {}", r.meta.model, r.meta.mode, r.meta.method)
    } else {
        r.meta.method.clone()
    }
}

/// Builds the comparison table and marks the best and second-best row in
/// each column; equal accuracies share a marker.
pub fn compare_runs(reports: &[EvalReport]) -> ComparisonTable {
    let qualify = reports
        .iter()
        .any(|r| r.meta.model != reports[0].meta.model || r.meta.mode != reports[0].meta.mode);
    let mut rows: Vec<String> = Vec::new();
    let mut columns: Vec<String> = Vec::new();
    for r in reports {
        let key = row_key(r, qualify);
        if !rows.contains(&key) {
            rows.push(key);
        }
        if !columns.contains(&r.meta.dataset) {
            columns.push(r.meta.dataset.clone());
        }
    }
    let mut sums = vec![vec![(0.0f64, 0usize); columns.len()]; rows.len()];
    for r in reports {
        let i = rows.iter().position(|k| *k == row_key(r, qualify)).expect("row collected");
        let j = columns.iter().position(|c| *c == r.meta.dataset).expect("column collected");
        sums[i][j].0 += r.accuracy;
        sums[i][j].1 += 1;
    }
    let mut cells: Vec<Vec<Option<Cell>>> = sums
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|(sum, runs)| {
                    (runs > 0).then(|| Cell {
                        accuracy: sum / runs as f64,
                        runs,
                        marker: None,
                    })
                })
                .collect()
        })
        .collect();

    for j in 0..columns.len() {
        let mut values: Vec<f64> = cells.iter().filter_map(|row| row[j].as_ref().map(|c| c.accuracy)).collect();
        values.sort_by(|a, b| b.total_cmp(a));
        values.dedup_by(|a, b| (*a - *b).abs() <= TIE_TOLERANCE);
        for row in cells.iter_mut() {
            if let Some(cell) = row[j].as_mut() {
                cell.marker = if (cell.accuracy - values[0]).abs() <= TIE_TOLERANCE {
                    Some(Marker::Best)
                } else if values.get(1).is_some_and(|v| (cell.accuracy - v).abs() <= TIE_TOLERANCE) {
                    Some(Marker::Second)
                } else {
                    None
                };
            }
        }
    }
    ComparisonTable { columns, rows, cells }
}

impl ComparisonTable {
    fn cell_text(cell: &Option<Cell>) -> String {
        match cell {
            Some(c) => format!("{:.2}{}", 100.0 * c.accuracy, c.marker.map_or("", Marker::symbol)),
            None => "-".into(),
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["method".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.rows.iter().zip(&self.cells) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(Self::cell_text));
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Aligned plain text; `*` marks the best and `+` the second-best entry of
/// each column.
impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut table: Vec<Vec<String>> = Vec::with_capacity(self.rows.len() + 1);
        table.push(std::iter::once("method".to_string()).chain(self.columns.iter().cloned()).collect());
        for (name, row) in self.rows.iter().zip(&self.cells) {
            table.push(std::iter::once(name.clone()).chain(row.iter().map(Self::cell_text)).collect());
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|j| table.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        for row in &table {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(j, v)| if j == 0 { format!("{v:<w$}", w = widths[j]) } else { format!("{v:>w$}", w = widths[j]) })
                .collect();
            writeln!(f, "{}", line.join("  ").trim_end())?;
        }
        Ok(())
    }
}
