//! Deterministic result emission: one CSV per data series, a JSON manifest
//! carrying the config echo and hashes, and optional gnuplot-ready files.
//!
//! CSV bodies are byte-reproducible: full round-trip float formatting, LF
//! endings, rows pre-sorted on their keys. The manifest's content hash
//! covers the CSV bodies only, so timestamps never break determinism.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::CliError;

/// One rectangular block of results, emitted as `<name>.csv`.
#[derive(Debug, Clone)]
pub struct DataSeries {
    pub name: &'static str,
    pub columns: Vec<&'static str>,
    /// Unit per column, same order ("1" marks a dimensionless quantity).
    pub units: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl DataSeries {
    pub fn csv_body(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            debug_assert_eq!(row.len(), self.columns.len());
            let cells: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// A completed experiment: the effective config, its data, and run notes.
#[derive(Debug, Clone)]
pub struct ResultRecord {
    pub kind: ExperimentKind,
    pub config_toml: String,
    pub config_hash: String,
    pub series: Vec<DataSeries>,
    pub environment: BTreeMap<String, String>,
    pub log: Vec<String>,
    /// Set when the run completed but its outcome is a numeric failure
    /// (e.g. a truncation sweep that never converged); the record is still
    /// written before the failure is reported.
    pub failure: Option<String>,
}

impl ResultRecord {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let echo = cfg.to_toml();
        let hash = sha256_hex(echo.as_bytes());
        ResultRecord {
            kind: cfg.kind,
            config_toml: echo,
            config_hash: hash,
            series: Vec::new(),
            environment: BTreeMap::new(),
            log: Vec::new(),
            failure: None,
        }
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.environment.insert(key.into(), value.to_string());
    }

    /// Hash of all CSV bodies in series order; independent of timestamps.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.series {
            h.update(s.name.as_bytes());
            h.update(b"\n");
            h.update(s.csv_body().as_bytes());
        }
        hex(&h.finalize())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmittedFile {
    pub name: String,
    pub rows: usize,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnDoc {
    pub name: String,
    pub unit: String,
}

/// `manifest.json`: everything needed to reproduce each CSV row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub config_hash: String,
    pub content_hash: String,
    pub generated_unix: u64,
    pub environment: BTreeMap<String, String>,
    pub columns: BTreeMap<String, Vec<ColumnDoc>>,
    pub files: Vec<EmittedFile>,
    pub log: Vec<String>,
    pub config_toml: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex(&h.finalize())
}

fn hex(digest: &[u8]) -> String {
    let mut out = String::with_capacity(2 * digest.len());
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn write_atomic(path: &Path, body: &str) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, body)
        .map_err(|e| CliError::Io(format!("write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::Io(format!("rename to {}: {e}", path.display())))
}

/// Writes all files for a record under `out_dir` and returns the manifest.
pub fn emit(record: &ResultRecord, out_dir: &Path, gnuplot: bool) -> Result<Manifest, CliError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("create {}: {e}", out_dir.display())))?;

    let mut files = Vec::new();
    let mut columns = BTreeMap::new();
    for s in &record.series {
        let body = s.csv_body();
        let name = format!("{}.csv", s.name);
        write_atomic(&out_dir.join(&name), &body)?;
        files.push(EmittedFile {
            name,
            rows: s.rows.len(),
            bytes: body.len(),
            sha256: sha256_hex(body.as_bytes()),
        });
        columns.insert(
            s.name.to_string(),
            s.columns
                .iter()
                .zip(&s.units)
                .map(|(&n, &u)| ColumnDoc {
                    name: n.into(),
                    unit: u.into(),
                })
                .collect(),
        );
    }

    if gnuplot {
        for (name, body) in plot_files(record) {
            write_atomic(&out_dir.join(&name), &body)?;
            files.push(EmittedFile {
                name,
                rows: 0,
                bytes: body.len(),
                sha256: sha256_hex(body.as_bytes()),
            });
        }
    }

    let manifest = Manifest {
        kind: record.kind.label().into(),
        config_hash: record.config_hash.clone(),
        content_hash: record.content_hash(),
        generated_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        environment: record.environment.clone(),
        columns,
        files,
        log: record.log.clone(),
        config_toml: record.config_toml.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Io(format!("manifest encode: {e}")))?;
    write_atomic(&out_dir.join("manifest.json"), &json)?;
    Ok(manifest)
}

fn plot_block(header: &str, rows: &[(f64, f64)]) -> String {
    let mut out = format!("# {header}\n");
    for (x, y) in rows {
        out.push_str(&format!("{x:.16e} {y:.16e}\n"));
    }
    out
}

/// Plot-ready two-column files matching the natural axes of each kind.
pub(crate) fn plot_files(record: &ResultRecord) -> Vec<(String, String)> {
    let mut out = Vec::new();
    match record.kind {
        ExperimentKind::VarianceSweep => {
            if let Some(s) = record.series.first() {
                let rows: Vec<(f64, f64)> = s.rows.iter().map(|r| (r[0], r[1])).collect();
                out.push((
                    "plot_variance.dat".into(),
                    plot_block("reduced_energy sigma2_C", &rows),
                ));
            }
        }
        ExperimentKind::Scaling => {
            // one gnuplot index block per target: size vs gap (log-scale y)
            if let Some(s) = record.series.first() {
                let mut targets: Vec<f64> = s.rows.iter().map(|r| r[1]).collect();
                targets.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
                targets.dedup();
                let mut body = String::new();
                for (bi, t) in targets.iter().enumerate() {
                    if bi > 0 {
                        body.push_str("\n\n");
                    }
                    let rows: Vec<(f64, f64)> = s
                        .rows
                        .iter()
                        .filter(|r| r[1] == *t)
                        .map(|r| (r[0], r[3]))
                        .collect();
                    body.push_str(&plot_block(
                        &format!("size doublet_gap_reduced (target {t})"),
                        &rows,
                    ));
                }
                out.push(("plot_gap_scaling.dat".into(), body));
            }
        }
        ExperimentKind::QuenchMap => {
            if let Some(s) = record.series.first() {
                // charge at t=0 against each long-time average
                let pick = |j: usize| -> Vec<(f64, f64)> {
                    let mut rows: Vec<(f64, f64)> =
                        s.rows.iter().map(|r| (r[3], r[j])).collect();
                    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
                    rows
                };
                let mut body = plot_block("C_t0 Jx_avg", &pick(7));
                body.push_str("\n\n");
                body.push_str(&plot_block("C_t0 X_avg", &pick(8)));
                body.push_str("\n\n");
                body.push_str(&plot_block("C_t0 n_avg", &pick(9)));
                out.push(("plot_observables_vs_charge.dat".into(), body));
            }
        }
        ExperimentKind::Convergence => {}
    }
    out
}
