//! Tiny query language for the CLI: conjunctions of simple conditions,
//! e.g. `age >= 30 and workclass = Private and hours <= 45`. Disjunctions
//! are not part of the grammar; callers issue one query per conjunction
//! and union results by record id.

use rasp_core::query::{CompareOp, RangeQuerySpec, SimpleCondition};

use crate::dataset::{ColumnType, DatasetManifest};
use crate::error::{Error, Result};

/// Parses a conjunctive filter against the manifest and produces the
/// normalized-domain range spec ready for transformation.
pub fn parse_filter(manifest: &DatasetManifest, filter: &str) -> Result<RangeQuerySpec> {
    let mut spec = RangeQuerySpec::full_domain(manifest.dims());
    let trimmed = filter.trim();
    if trimmed.is_empty() {
        return Ok(spec);
    }
    for clause in split_conjunctions(trimmed) {
        let (column, op, value) = parse_clause(&clause)?;
        let dim = manifest.column_index(&column)?;
        let meta = &manifest.columns[dim];
        match (meta.ty, op) {
            (ColumnType::Categorical, CompareOp::Eq) => {
                let (lo, hi) = manifest.category_interval(dim, &value)?;
                apply(&mut spec, dim, CompareOp::Ge, manifest.normalize(dim, lo))?;
                apply(&mut spec, dim, CompareOp::Le, manifest.normalize(dim, hi))?;
            }
            (ColumnType::Categorical, _) => {
                return Err(Error::Filter(format!(
                    "column '{column}' is categorical; only '=' applies"
                )));
            }
            (ColumnType::Numeric, op) => {
                let raw: f64 = value.parse().map_err(|_| {
                    Error::Filter(format!("'{value}' is not a number for column '{column}'"))
                })?;
                let normalized = manifest.normalize(dim, raw);
                match op {
                    CompareOp::Eq => {
                        apply(&mut spec, dim, CompareOp::Ge, normalized)?;
                        apply(&mut spec, dim, CompareOp::Le, normalized)?;
                    }
                    other => apply(&mut spec, dim, other, normalized)?,
                }
            }
        }
    }
    Ok(spec)
}

fn apply(spec: &mut RangeQuerySpec, dim: usize, op: CompareOp, constant: f64) -> Result<()> {
    spec.apply(&SimpleCondition { dim, op, constant })
        .map_err(|e| Error::Filter(e.to_string()))
}

fn split_conjunctions(filter: &str) -> Vec<String> {
    let mut clauses = Vec::new();
    let mut current = Vec::new();
    for token in filter.split_whitespace() {
        if token.eq_ignore_ascii_case("and") {
            if !current.is_empty() {
                clauses.push(current.join(" "));
                current.clear();
            }
        } else {
            current.push(token);
        }
    }
    if !current.is_empty() {
        clauses.push(current.join(" "));
    }
    clauses
}

fn parse_clause(clause: &str) -> Result<(String, CompareOp, String)> {
    // Longest operators first so '<=' never parses as '<'.
    for (symbol, op) in [
        ("<=", CompareOp::Le),
        (">=", CompareOp::Ge),
        ("!=", CompareOp::Eq), // rejected below with a pointer to disjunctions
        ("==", CompareOp::Eq),
        ("<", CompareOp::Lt),
        (">", CompareOp::Gt),
        ("=", CompareOp::Eq),
    ] {
        if let Some(pos) = clause.find(symbol) {
            if symbol == "!=" {
                return Err(Error::Filter(
                    "'!=' is not supported; issue two range queries and union the results".into(),
                ));
            }
            let column = clause[..pos].trim();
            let value = clause[pos + symbol.len()..].trim();
            if column.is_empty() || value.is_empty() {
                return Err(Error::Filter(format!("clause '{clause}' is incomplete")));
            }
            return Ok((column.to_string(), op, value.to_string()));
        }
    }
    Err(Error::Filter(format!(
        "clause '{clause}' has no comparison operator"
    )))
}
