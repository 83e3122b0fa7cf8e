use std::path::Path;

use crate::error::{Error, Result};

/// Declared CSV layouts, by file name.
pub const SCHEMAS: &[(&str, &[&str])] = &[
    ("tdnv_curve.csv", &["layer", "value"]),
    ("grid_tdnv.csv", &["layer", "sep", "value"]),
    ("bias_variance.csv", &["K", "bias_ratio", "variance"]),
    ("pca.csv", &["task", "instance", "x", "y"]),
    (
        "probe_report.csv",
        &[
            "layer",
            "tv_acc",
            "mean_tv_acc",
            "early_exit_acc",
            "baseline",
        ],
    ),
    (
        "training_log.csv",
        &[
            "step",
            "ce",
            "contrastive",
            "total",
            "eval_acc",
            "tdnv_at_contrast_layer",
        ],
    ),
    (
        "theorem_report.csv",
        &[
            "K",
            "var_est",
            "var_stderr",
            "lambda_est",
            "lambda_pred",
            "residual",
        ],
    ),
    (
        "sweep.csv",
        &["setting", "value", "opt_layer", "tdnv_at_opt", "accuracy"],
    ),
    (
        "contrastive_compare.csv",
        &[
            "variant",
            "tdnv_at_contrast_layer",
            "opt_layer",
            "tv_acc",
            "icl_acc",
        ],
    ),
];

/// Columns declared for a file name (the stem before any `_suffix` variant also matches).
pub fn schema_for(file_name: &str) -> Option<&'static [&'static str]> {
    SCHEMAS
        .iter()
        .find(|(n, _)| *n == file_name)
        .map(|(_, c)| *c)
        .or_else(|| {
            SCHEMAS
                .iter()
                .find(|(n, _)| {
                    let stem = n.trim_end_matches(".csv");
                    file_name.starts_with(&format!("{stem}_")) && file_name.ends_with(".csv")
                })
                .map(|(_, c)| *c)
        })
}

/// A header plus string cells; numbers are written in shortest round-trip form.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Formats an `f64` so that it parses back to the same bits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::shape(
                "table row",
                &[self.header.len()],
                &[row.len()],
            ));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| {
            Error::Invalid(format!(
                "missing column `{name}` (have: {})",
                self.header.join(", ")
            ))
        })
    }

    pub fn column(&self, name: &str) -> Result<Vec<&str>> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    /// Numeric column; empty cells become NaN.
    pub fn column_f64(&self, name: &str) -> Result<Vec<f64>> {
        self.column(name)?
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                if s.is_empty() {
                    Ok(f64::NAN)
                } else {
                    s.parse().map_err(|_| {
                        Error::Invalid(format!(
                            "column `{name}` row {}: `{s}` is not a number",
                            i + 1
                        ))
                    })
                }
            })
            .collect()
    }

    /// Checks the header against the schema declared for `file_name`, if any.
    pub fn check_schema(&self, file_name: &str) -> Result<()> {
        if let Some(cols) = schema_for(file_name) {
            for c in cols {
                self.column_index(c)?;
            }
        }
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner()
            .map_err(|e| Error::Invalid(format!("csv buffer: {e}")))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
            self.check_schema(name)?;
        }
        let bytes = self.to_csv_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(file);
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { header, rows })
    }
}
