//! Comparison tables, as aligned text and as tab-separated values.

use std::collections::BTreeMap;
use std::path::PathBuf;

use draftlab_core::train::Regime;

use crate::error::{CliError, Result};
use crate::summary::Summary;

/// A header row plus data rows of preformatted cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Lines printed under the aligned table.
    pub notes: Vec<String>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new(), notes: Vec::new() }
    }

    pub fn tsv(&self) -> String {
        std::iter::once(&self.header).chain(&self.rows).map(|r| format!("{}\n", r.join("\t"))).collect()
    }

    /// Left-aligned first column, right-aligned numbers.
    pub fn text(&self) -> String {
        let n = self.header.len();
        let width: Vec<usize> =
            (0..n).map(|c| std::iter::once(&self.header).chain(&self.rows).map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
        let line = |r: &Vec<String>| {
            let cells: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(c, v)| if c < self.left_columns() { format!("{v:<w$}", w = width[c]) } else { format!("{v:>w$}", w = width[c]) })
                .collect();
            format!("{}\n", cells.join("  ").trim_end())
        };
        let mut out = line(&self.header);
        out.push_str(&format!("{}\n", "-".repeat(width.iter().sum::<usize>() + 2 * n.saturating_sub(1))));
        for r in &self.rows {
            out.push_str(&line(r));
        }
        for note in &self.notes {
            out.push_str(&format!("{note}\n"));
        }
        out
    }

    fn left_columns(&self) -> usize {
        self.header.iter().take_while(|h| matches!(h.as_str(), "objective" | "corpus" | "regime")).count()
    }
}

pub fn percent(rate: f64) -> String {
    format!("{:.1}", 100.0 * rate)
}

pub fn millions(n: usize) -> String {
    format!("{:.1}M", n as f64 / 1e6)
}

fn wer_cell(rate: Option<f64>, nc: bool) -> String {
    match (rate, nc) {
        (_, true) => "NC".into(),
        (Some(r), false) => percent(r),
        (None, false) => "-".into(),
    }
}

type Key = (String, String, Regime, Option<usize>);

/// Merges run summaries into one row per objective, corpus, regime and
/// d_ada. Identical duplicates collapse; differing ones are an error.
pub fn merge(runs: &[(Summary, PathBuf)]) -> Result<Vec<(Summary, PathBuf)>> {
    let mut cells: BTreeMap<Key, (Summary, PathBuf)> = BTreeMap::new();
    for (s, dir) in runs {
        let key = (s.objective.clone(), s.corpus.clone(), s.regime, s.d_ada);
        if let Some((prev, prev_dir)) = cells.get(&key) {
            if prev != s {
                return Err(CliError::Conflict {
                    cell: format!("{}/{}/{}/d_ada={}", key.0, key.1, key.2, key.3.map_or("-".into(), |d| d.to_string())),
                    first: prev_dir.clone(),
                    second: dir.clone(),
                });
            }
            continue;
        }
        cells.insert(key, (s.clone(), dir.clone()));
    }
    Ok(cells.into_values().collect())
}

/// Word-error comparison grouped by objective, corpus and regime.
pub fn comparison(runs: &[(Summary, PathBuf)]) -> Result<Table> {
    let mut t = Table::new(&["objective", "corpus", "regime", "d_ada", "dev_wer", "test_wer", "updated", "relative"]);
    for (s, _) in merge(runs)? {
        t.rows.push(vec![
            s.objective.clone(),
            s.corpus.clone(),
            s.regime.to_string(),
            s.d_ada.map_or("-".into(), |d| d.to_string()),
            wer_cell(s.dev_wer, s.nc),
            wer_cell(Some(s.test_wer), s.nc),
            s.updated_params_total.to_string(),
            format!("{}%", percent(s.updated_params_relative)),
        ]);
    }
    t.notes.push("error rates in %; NC: no convergence".into());
    Ok(t)
}

/// One row of the d_ada table.
#[derive(Debug, Clone, PartialEq)]
pub struct DadaRow {
    pub d_ada: usize,
    pub dev_wer: Option<f64>,
    pub test_wer: Option<f64>,
    pub nc: bool,
    pub updated: usize,
    pub relative: f64,
}

/// Rows = d_ada values; columns = errors and updated parameters. Fails if
/// the parameter column does not grow with d_ada.
pub fn dada_table(rows: &[DadaRow]) -> Result<Table> {
    let mut sorted = rows.to_vec();
    sorted.sort_by_key(|r| r.d_ada);
    if let Some(w) = sorted.windows(2).find(|w| w[1].updated <= w[0].updated) {
        return Err(draftlab_core::Error::State(format!(
            "updated parameters do not grow with d_ada: {} at {} vs {} at {}",
            w[0].updated, w[0].d_ada, w[1].updated, w[1].d_ada
        ))
        .into());
    }
    let mut t = Table::new(&["d_ada", "dev_wer", "test_wer", "updated", "updated_M", "relative"]);
    for r in rows {
        t.rows.push(vec![
            r.d_ada.to_string(),
            wer_cell(r.dev_wer, r.nc),
            wer_cell(r.test_wer, r.nc && r.test_wer.is_some()),
            r.updated.to_string(),
            millions(r.updated),
            format!("{}%", percent(r.relative)),
        ]);
    }
    t.notes.push("updated parameters increase with d_ada".into());
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(regime: Regime, test: f64) -> Summary {
        Summary {
            regime,
            objective: "apc".into(),
            corpus: "target".into(),
            d_ada: None,
            dev_wer: None,
            test_wer: test,
            updated_params_total: 10,
            updated_params_relative: 0.5,
            nc: Summary::is_nc(test),
        }
    }

    #[test]
    fn nc_cell_and_alignment() {
        let runs = vec![(summary(Regime::Finetune, 0.2), PathBuf::from("a")), (summary(Regime::Baseline, 0.97), PathBuf::from("b"))];
        let t = comparison(&runs).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0][2], "baseline");
        assert_eq!(t.rows[0][5], "NC");
        assert_eq!(t.rows[1][5], "20.0");
        let text = t.text();
        let lens: Vec<usize> = text.lines().take(4).map(|l| l.len()).collect();
        assert!(lens.iter().all(|l| *l == lens[0]), "{text}");
        assert_eq!(t.tsv().lines().count(), 3);
    }

    #[test]
    fn conflicting_duplicates() {
        let a = (summary(Regime::Finetune, 0.2), PathBuf::from("run-a"));
        let b = (summary(Regime::Finetune, 0.3), PathBuf::from("run-b"));
        assert_eq!(merge(&[a.clone(), a.clone()]).unwrap().len(), 1);
        let msg = merge(&[a, b]).unwrap_err().to_string();
        assert!(msg.contains("run-a") && msg.contains("run-b"), "{msg}");
    }

    #[test]
    fn dada_monotone() {
        let row = |d, u| DadaRow { d_ada: d, dev_wer: None, test_wer: None, nc: false, updated: u, relative: 0.0 };
        assert!(dada_table(&[row(2, 20), row(1, 10)]).is_ok());
        assert!(dada_table(&[row(1, 10), row(2, 10)]).is_err());
    }
}
