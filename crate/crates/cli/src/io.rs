//! Delimited text input and output.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use mixhmm_core::hmm::map_classify;
use mixhmm_core::{BenchReport, CriteriaReport, Dataset, Matrix};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Tsv,
}

impl Format {
    fn delimiter(self) -> u8 {
        match self {
            Format::Csv => b',',
            Format::Tsv => b'\t',
        }
    }

    /// Guesses from the file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("tsv") || e.eq_ignore_ascii_case("tab") => Format::Tsv,
            _ => Format::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestOptions {
    pub format: Format,
    pub has_header: bool,
    /// Coordinate columns by header name; all non-label columns if absent.
    pub columns: Option<Vec<String>>,
    pub state_column: Option<String>,
    pub component_column: Option<String>,
}

pub fn ingest(path: &Path, opts: &IngestOptions) -> Result<Dataset> {
    let file = File::open(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    read_dataset(file, &path.display().to_string(), opts)
}

fn column_index(header: &csv::StringRecord, name: &str, source: &str) -> Result<usize> {
    header.iter().position(|h| h == name).ok_or_else(|| CliError::Parse {
        path: source.to_string(),
        line: 1,
        message: format!("no column named {name:?}"),
    })
}

pub fn read_dataset(reader: impl Read, source: &str, opts: &IngestOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.format.delimiter())
        .has_headers(opts.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let parse_err = |line: u64, message: String| CliError::Parse {
        path: source.to_string(),
        line,
        message,
    };

    let named = opts.columns.is_some() || opts.state_column.is_some() || opts.component_column.is_some();
    if named && !opts.has_header {
        return Err(CliError::Config("selecting columns by name requires a header".into()));
    }
    let header = if opts.has_header {
        Some(rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone())
    } else {
        None
    };
    let state_col = match (&header, &opts.state_column) {
        (Some(h), Some(name)) => Some(column_index(h, name, source)?),
        _ => None,
    };
    let comp_col = match (&header, &opts.component_column) {
        (Some(h), Some(name)) => Some(column_index(h, name, source)?),
        _ => None,
    };
    let mut coords: Option<Vec<usize>> = match (&header, &opts.columns) {
        (Some(h), Some(names)) => Some(names.iter().map(|n| column_index(h, n, source)).collect::<Result<_>>()?),
        (Some(h), None) => Some((0..h.len()).filter(|&i| Some(i) != state_col && Some(i) != comp_col).collect()),
        _ => None,
    };
    let mut width = header.as_ref().map(|h| h.len());

    let mut values = Vec::new();
    let mut states = Vec::new();
    let mut comps = Vec::new();
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(parse_err(line, format!("expected {w} fields, found {}", record.len())));
        }
        let cols = coords.get_or_insert_with(|| (0..w).collect());
        for &c in cols.iter() {
            let cell = &record[c];
            if cell.is_empty() {
                return Err(parse_err(line, format!("missing value in column {}", c + 1)));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("non-numeric value {cell:?} in column {}", c + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value {cell:?} in column {}", c + 1)));
            }
            values.push(v);
        }
        for (col, out) in [(state_col, &mut states), (comp_col, &mut comps)] {
            if let Some(c) = col {
                let cell = &record[c];
                out.push(
                    cell.parse::<usize>()
                        .map_err(|_| parse_err(line, format!("label {cell:?} in column {} is not a non-negative integer", c + 1)))?,
                );
            }
        }
        rows += 1;
    }
    let q = coords.map_or(0, |c| c.len());
    if q == 0 || rows == 0 {
        return Err(parse_err(1, "no numeric data".into()));
    }
    let matrix = Matrix::from_vec(rows, q, values).expect("rows have equal width");
    let data = Dataset::new(matrix, source).map_err(|e| parse_err(1, e.to_string()))?;
    let states = state_col.map(|_| states);
    let comps = comp_col.map(|_| comps);
    data.with_truth(states, comps).map_err(|e| parse_err(1, e.to_string()))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_writer(path: &Path, format: Format) -> Result<csv::Writer<File>> {
    Ok(csv::WriterBuilder::new().delimiter(format.delimiter()).from_writer(create(path)?))
}

fn write_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Write {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

/// Shortest text that parses back to the same `f64`, with an exponent for
/// very large or small magnitudes.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Header `x1..xQ`, one row per observation.
pub fn write_dataset(path: &Path, data: &Dataset, format: Format) -> Result<()> {
    let mut w = csv_writer(path, format)?;
    let err = write_err(path);
    w.write_record((1..=data.dim()).map(|j| format!("x{j}"))).map_err(&err)?;
    for t in 0..data.len() {
        w.write_record(data.point(t).iter().map(|&v| fmt_f64(v))).map_err(&err)?;
    }
    w.flush().map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// `state, component, tau_0..tau_{D-1}`.
pub fn write_truth(path: &Path, states: &[usize], components: &[usize], tau: &Matrix) -> Result<()> {
    let mut w = csv_writer(path, Format::Csv)?;
    let err = write_err(path);
    let mut header = vec!["state".to_string(), "component".to_string()];
    header.extend((0..tau.cols()).map(|d| format!("tau_{d}")));
    w.write_record(&header).map_err(&err)?;
    for t in 0..states.len() {
        let mut row = vec![states[t].to_string(), components[t].to_string()];
        row.extend(tau.row(t).iter().map(|&v| fmt_f64(v)));
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// `tau_0..tau_{D-1}, map`.
pub fn write_posterior(path: &Path, tau: &Matrix) -> Result<()> {
    let mut w = csv_writer(path, Format::Csv)?;
    let err = write_err(path);
    let mut header: Vec<String> = (0..tau.cols()).map(|d| format!("tau_{d}")).collect();
    header.push("map".into());
    w.write_record(&header).map_err(&err)?;
    for (t, label) in map_classify(tau).into_iter().enumerate() {
        let mut row: Vec<String> = tau.row(t).iter().map(|&v| fmt_f64(v)).collect();
        row.push(label.to_string());
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_criteria(path: &Path, report: &CriteriaReport) -> Result<()> {
    let mut w = csv_writer(path, Format::Csv)?;
    let err = write_err(path);
    w.write_record(["G", "loglik", "nu", "BIC", "ICL", "ICL_S", "H_S", "H_Z_given_S"]).map_err(&err)?;
    for r in &report.records {
        w.write_record([
            r.clusters.to_string(),
            fmt_f64(r.loglik),
            r.nu.to_string(),
            fmt_f64(r.bic),
            fmt_f64(r.icl),
            fmt_f64(r.icl_s),
            fmt_f64(r.entropy_s),
            fmt_f64(r.entropy_z_given_s),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_benchmark(path: &Path, report: &BenchReport) -> Result<()> {
    let mut w = csv_writer(path, Format::Csv)?;
    let err = write_err(path);
    w.write_record([
        "a",
        "b",
        "criterion",
        "mean_mse",
        "sd_mse",
        "mean_rate",
        "sd_rate",
        "cluster_hit_rate",
        "icl_hit_rate",
        "bic_hit_rate",
        "mean_mse_selected",
        "sd_mse_selected",
        "replicates",
        "failures",
    ])
    .map_err(&err)?;
    for r in &report.rows {
        w.write_record([
            fmt_f64(r.a),
            fmt_f64(r.b),
            r.method.label().to_string(),
            fmt_f64(r.mean_mse),
            fmt_f64(r.sd_mse),
            fmt_f64(r.mean_rate),
            fmt_f64(r.sd_rate),
            fmt_f64(r.cluster_hit_rate),
            fmt_f64(r.icl_hit_rate),
            fmt_f64(r.bic_hit_rate),
            fmt_f64(r.mean_mse_selected),
            fmt_f64(r.sd_mse_selected),
            r.replicates.to_string(),
            r.failures.to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// One line per replicate and method; failed runs carry their error text.
pub fn write_replicates(path: &Path, report: &BenchReport) -> Result<()> {
    let mut w = csv_writer(path, Format::Csv)?;
    let err = write_err(path);
    w.write_record([
        "a", "b", "replicate", "criterion", "rate", "mse", "mse_selected", "D_BIC", "D_ICL", "D_ICL_S", "error",
    ])
    .map_err(&err)?;
    for r in &report.replicates {
        let mut row = vec![fmt_f64(r.a), fmt_f64(r.b), r.replicate.to_string(), r.method.label().to_string()];
        match &r.outcome {
            Ok(o) => row.extend([
                fmt_f64(o.rate),
                fmt_f64(o.mse),
                fmt_f64(o.mse_selected),
                o.selected_bic.to_string(),
                o.selected_icl.to_string(),
                o.selected_icl_s.to_string(),
                String::new(),
            ]),
            Err(e) => {
                row.extend(std::iter::repeat_n(String::new(), 6));
                row.push(e.clone());
            }
        }
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = create(path)?;
    let text = serde_json::to_string_pretty(value).expect("serialisable");
    f.write_all(text.as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .map_err(|source| CliError::Write {
            path: path.to_path_buf(),
            source,
        })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &'static str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Document {
        what,
        message: format!("{}: {e}", path.display()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(has_header: bool) -> IngestOptions {
        IngestOptions {
            has_header,
            ..IngestOptions::default()
        }
    }

    #[test]
    fn header_and_trailing_newline() {
        let a = read_dataset("x,y\n1,2\n3,4.5\n".as_bytes(), "a", &opts(true)).unwrap();
        let b = read_dataset("1,2\n3,4.5".as_bytes(), "b", &opts(false)).unwrap();
        assert_eq!(a.observations(), b.observations());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let ragged = read_dataset("1,2\n3,4\n5\n".as_bytes(), "f", &opts(false)).unwrap_err();
        assert!(matches!(ragged, CliError::Parse { line: 3, .. }), "{ragged}");
        let text = read_dataset("x,y\n1,2\n3,abc\n".as_bytes(), "f", &opts(true)).unwrap_err();
        assert!(matches!(text, CliError::Parse { line: 3, .. }), "{text}");
        let missing = read_dataset("1,2\n,4\n".as_bytes(), "f", &opts(false)).unwrap_err();
        assert!(matches!(missing, CliError::Parse { line: 2, .. }), "{missing}");
        assert_eq!(missing.exit_code(), 2);
    }

    #[test]
    fn label_columns() {
        let o = IngestOptions {
            has_header: true,
            state_column: Some("s".into()),
            ..IngestOptions::default()
        };
        let d = read_dataset("x,s,y\n1,0,2\n3,1,4\n".as_bytes(), "f", &o).unwrap();
        assert_eq!(d.dim(), 2);
        assert_eq!(d.true_states, Some(vec![0, 1]));
        assert_eq!(d.point(1), &[3.0, 4.0]);
    }

    #[test]
    fn tsv() {
        let o = IngestOptions {
            format: Format::Tsv,
            ..opts(false)
        };
        let d = read_dataset("1\t2\n3\t4\n".as_bytes(), "f", &o).unwrap();
        assert_eq!(d.len(), 2);
    }
}
