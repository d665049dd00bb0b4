use std::path::Path;

use draftlab_core::train::{Regime, NC_THRESHOLD};

use crate::error::{CliError, Result};

pub const SUMMARY_FILE: &str = "summary.tsv";
pub const HEADER_FILE: &str = "summary.header.tsv";

pub const COLUMNS: [&str; 9] =
    ["regime", "objective", "corpus", "d_ada", "dev_wer", "test_wer", "updated_params_total", "updated_params_relative", "nc"];

/// One run, as a single tab-separated row.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub regime: Regime,
    pub objective: String,
    pub corpus: String,
    pub d_ada: Option<usize>,
    pub dev_wer: Option<f64>,
    pub test_wer: f64,
    pub updated_params_total: usize,
    /// Fraction of the full-model SAFT update of the same preset.
    pub updated_params_relative: f64,
    /// Test error rate at or above the non-convergence threshold.
    pub nc: bool,
}

impl Summary {
    pub fn is_nc(test_wer: f64) -> bool {
        test_wer >= NC_THRESHOLD
    }

    pub fn header() -> String {
        format!("{}\n", COLUMNS.join("\t"))
    }

    pub fn row(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        format!(
            "{}\t{}\t{}\t{}\t{}\t{:.6}\t{}\t{:.6}\t{}\n",
            self.regime,
            self.objective,
            self.corpus,
            opt(self.d_ada.map(|d| d.to_string())),
            opt(self.dev_wer.map(|w| format!("{w:.6}"))),
            self.test_wer,
            self.updated_params_total,
            self.updated_params_relative,
            u8::from(self.nc)
        )
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        for (name, text) in [(SUMMARY_FILE, self.row()), (HEADER_FILE, Self::header())] {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
        }
        Ok(())
    }

    /// Reads `summary.tsv` using the column order of the header file.
    pub fn read(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))
        };
        let path = dir.join(SUMMARY_FILE);
        let bad = |msg: String| CliError::Summary { path: path.clone(), msg };
        let header = read(HEADER_FILE)?;
        let row = read(SUMMARY_FILE)?;
        let names: Vec<&str> = header.trim_end().split('\t').collect();
        let values: Vec<&str> = row.trim_end_matches('\n').split('\t').collect();
        if names.len() != values.len() {
            return Err(bad(format!("{} header columns but {} values", names.len(), values.len())));
        }
        let get = |col: &str| names.iter().position(|n| *n == col).map(|i| values[i]).ok_or_else(|| bad(format!("missing column {col}")));
        let num = |col: &str| -> Result<f64> {
            let v = get(col)?;
            v.parse().map_err(|_| bad(format!("{col}: not a number: {v}")))
        };
        let opt = |col: &str| -> Result<Option<f64>> {
            match get(col)? {
                "-" => Ok(None),
                _ => num(col).map(Some),
            }
        };
        Ok(Self {
            regime: get("regime")?.parse().map_err(|e: draftlab_core::Error| bad(e.to_string()))?,
            objective: get("objective")?.to_string(),
            corpus: get("corpus")?.to_string(),
            d_ada: opt("d_ada")?.map(|d| d as usize),
            dev_wer: opt("dev_wer")?,
            test_wer: num("test_wer")?,
            updated_params_total: num("updated_params_total")? as usize,
            updated_params_relative: num("updated_params_relative")?,
            nc: get("nc")? == "1",
        })
    }
}
