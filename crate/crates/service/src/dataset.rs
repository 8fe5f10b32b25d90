//! Dataset ingestion: delimiter-separated files with a header row turn
//! into normalized plain records plus a manifest that records everything
//! needed to interpret queries later (column types, category tables, and
//! per-column normalization).
//!
//! Categorical columns map category j (in first-appearance order) to the
//! integer j, and an equality condition on a category becomes the closed
//! range `[j - 0.4, j + 0.4]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rasp_core::ope::CATEGORY_HALF_WIDTH;
use rasp_core::perturb::normalize_dataset;
use rasp_core::PlainRecord;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnType {
    Numeric,
    Categorical,
}

/// Declared searchable column.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSchema {
    pub name: String,
    pub ty: ColumnType,
}

/// Parses a compact schema string like `age:num,workclass:cat,hours:num`.
pub fn parse_schema(spec: &str) -> Result<Vec<ColumnSchema>> {
    spec.split(',')
        .map(|part| {
            let (name, ty) = part
                .split_once(':')
                .ok_or_else(|| Error::Ingest(format!("schema entry '{part}' lacks ':'")))?;
            let ty = match ty.trim() {
                "num" | "numeric" => ColumnType::Numeric,
                "cat" | "categorical" => ColumnType::Categorical,
                other => return Err(Error::Ingest(format!("unknown column type '{other}'"))),
            };
            Ok(ColumnSchema {
                name: name.trim().to_string(),
                ty,
            })
        })
        .collect()
}

/// Everything needed to interpret query constants against the stored
/// (normalized) data.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMeta {
    pub name: String,
    pub ty: ColumnType,
    pub mean: f64,
    pub sd: f64,
    /// Category value table; index + 1 is the mapped integer.
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub columns: Vec<ColumnMeta>,
    pub records: usize,
}

impl DatasetManifest {
    pub fn dims(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    /// Raw-domain value to the stored normalized domain.
    pub fn normalize(&self, dim: usize, raw: f64) -> f64 {
        let c = &self.columns[dim];
        (raw - c.mean) / c.sd
    }

    /// Stored normalized value back to the raw domain.
    pub fn denormalize(&self, dim: usize, v: f64) -> f64 {
        let c = &self.columns[dim];
        v * c.sd + c.mean
    }

    /// Mapped integer for a category token (1-based, footnote mapping).
    pub fn category_value(&self, dim: usize, token: &str) -> Result<f64> {
        let c = &self.columns[dim];
        c.categories
            .iter()
            .position(|v| v == token)
            .map(|j| (j + 1) as f64)
            .ok_or_else(|| Error::UnknownCategory {
                column: c.name.clone(),
                value: token.to_string(),
            })
    }

    /// The raw-domain closed interval an equality condition on a
    /// categorical column expands to.
    pub fn category_interval(&self, dim: usize, token: &str) -> Result<(f64, f64)> {
        let j = self.category_value(dim, token)?;
        Ok((j - CATEGORY_HALF_WIDTH, j + CATEGORY_HALF_WIDTH))
    }

    /// Renders one normalized record back into display fields, mapping
    /// categorical integers to their tokens.
    pub fn render_row(&self, record: &PlainRecord) -> Vec<String> {
        let mut out: Vec<String> = record
            .values
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                let raw = self.denormalize(j, v);
                match self.columns[j].ty {
                    ColumnType::Numeric => format!("{raw}"),
                    ColumnType::Categorical => {
                        let idx = raw.round() as usize;
                        self.columns[j]
                            .categories
                            .get(idx.saturating_sub(1))
                            .cloned()
                            .unwrap_or_else(|| format!("{raw}"))
                    }
                }
            })
            .collect();
        if !record.payload.is_empty() {
            out.push(String::from_utf8_lossy(&record.payload).into_owned());
        }
        out
    }
}

/// A row the ingester refused, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRow {
    pub line: usize,
    pub reason: String,
}

pub struct IngestOutput {
    pub records: Vec<PlainRecord>,
    pub manifest: DatasetManifest,
    pub rejected: Vec<RejectedRow>,
}

/// Ingests a delimiter-separated file with a header row. Columns named in
/// the schema become searchable dimensions; all remaining columns are
/// concatenated into the opaque payload. Rows with missing or unparsable
/// values are rejected with a diagnostic.
pub fn ingest_csv(path: &std::path::Path, schema: &[ColumnSchema]) -> Result<IngestOutput> {
    let text = std::fs::read_to_string(path)?;
    ingest_text(&text, schema, ',')
}

pub fn ingest_text(text: &str, schema: &[ColumnSchema], delimiter: char) -> Result<IngestOutput> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Ingest("empty input".into()))?;
    let header_fields: Vec<&str> = header.split(delimiter).map(str::trim).collect();
    let mut column_pos = Vec::with_capacity(schema.len());
    for col in schema {
        let pos = header_fields
            .iter()
            .position(|h| *h == col.name)
            .ok_or_else(|| Error::UnknownColumn(col.name.clone()))?;
        column_pos.push(pos);
    }
    let payload_pos: Vec<usize> = (0..header_fields.len())
        .filter(|p| !column_pos.contains(p))
        .collect();

    let mut categories: Vec<Vec<String>> = vec![Vec::new(); schema.len()];
    let mut raw_rows: Vec<Vec<f64>> = Vec::new();
    let mut payloads: Vec<Vec<u8>> = Vec::new();
    let mut rejected = Vec::new();

    'rows: for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(delimiter).map(str::trim).collect();
        if fields.len() != header_fields.len() {
            rejected.push(RejectedRow {
                line: lineno + 1,
                reason: format!(
                    "expected {} fields, found {}",
                    header_fields.len(),
                    fields.len()
                ),
            });
            continue;
        }
        let mut row = Vec::with_capacity(schema.len());
        for (j, (&pos, col)) in column_pos.iter().zip(schema).enumerate() {
            let field = fields[pos];
            if field.is_empty() || field == "?" {
                rejected.push(RejectedRow {
                    line: lineno + 1,
                    reason: format!("missing value in column '{}'", col.name),
                });
                continue 'rows;
            }
            match col.ty {
                ColumnType::Numeric => match field.parse::<f64>() {
                    Ok(v) if v.is_finite() => row.push(v),
                    _ => {
                        rejected.push(RejectedRow {
                            line: lineno + 1,
                            reason: format!("'{field}' is not numeric in column '{}'", col.name),
                        });
                        continue 'rows;
                    }
                },
                ColumnType::Categorical => {
                    let table = &mut categories[j];
                    let idx = match table.iter().position(|v| v == field) {
                        Some(i) => i,
                        None => {
                            table.push(field.to_string());
                            table.len() - 1
                        }
                    };
                    row.push((idx + 1) as f64);
                }
            }
        }
        let payload = payload_pos
            .iter()
            .map(|&p| fields[p])
            .collect::<Vec<_>>()
            .join(&delimiter.to_string());
        raw_rows.push(row);
        payloads.push(payload.into_bytes());
    }

    if raw_rows.is_empty() {
        return Err(Error::Ingest("no usable rows".into()));
    }

    let (normalized, stats) = normalize_dataset(&raw_rows)?;
    let columns = schema
        .iter()
        .zip(&stats)
        .zip(categories)
        .map(|((col, &(mean, sd)), cats)| ColumnMeta {
            name: col.name.clone(),
            ty: col.ty,
            mean,
            sd,
            categories: cats,
        })
        .collect();
    let records: Vec<PlainRecord> = normalized
        .into_iter()
        .zip(payloads)
        .map(|(values, payload)| PlainRecord { values, payload })
        .collect();
    Ok(IngestOutput {
        manifest: DatasetManifest {
            columns,
            records: records.len(),
        },
        records,
        rejected,
    })
}

/// Synthetic benchmark table: n uniform draws from [0, 1]^d, normalized,
/// with column names `x0..x{d-1}`.
pub fn synthetic_uniform(n: usize, d: usize, seed: u64) -> Result<IngestOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.gen::<f64>()).collect())
        .collect();
    let (normalized, stats) = normalize_dataset(&raw)?;
    let columns = (0..d)
        .map(|j| ColumnMeta {
            name: format!("x{j}"),
            ty: ColumnType::Numeric,
            mean: stats[j].0,
            sd: stats[j].1,
            categories: Vec::new(),
        })
        .collect();
    Ok(IngestOutput {
        manifest: DatasetManifest {
            columns,
            records: n,
        },
        records: normalized.into_iter().map(PlainRecord::new).collect(),
        rejected: Vec::new(),
    })
}

/// Mixed strongly non-Gaussian table (uniform, exponential-like, and
/// bimodal columns in rotation), normalized. The distributional attack
/// experiments run against this.
pub fn synthetic_non_gaussian(n: usize, dims: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..dims)
                .map(|j| match j % 3 {
                    0 => rng.gen::<f64>(),
                    1 => -(1.0 - rng.gen::<f64>()).ln(),
                    _ => {
                        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                        sign + 0.3 * rng.gen::<f64>()
                    }
                })
                .collect()
        })
        .collect();
    normalize_dataset(&raw)
        .expect("synthetic columns have positive variance")
        .0
}
