//! On-disk artifacts. Three secured artifacts (key file, perturbed
//! dataset, index) plus the proxy-side plain dataset, each versioned with
//! magic bytes; reports are plain tab-separated text with a header row.
//!
//! The key file exists only on the proxy side. The server loads perturbed
//! datasets and index files; nothing in those formats can express key
//! material.

use std::fs;
use std::path::Path;

use rasp_core::index::{ExportNode, IndexStore};
use rasp_core::ope::{OpeDimensionKey, OpeKey};
use rasp_core::{NoiseSpec, PerturbedRecord, PlainRecord, RaspKey};

use crate::dataset::{ColumnMeta, ColumnType, DatasetManifest};
use crate::error::{Error, Result};
use crate::wire::{Reader, Writer};

const MAGIC_KEY: &[u8; 8] = b"RASPKEY\x01";
const MAGIC_PLAIN: &[u8; 8] = b"RASPPLN\x01";
const MAGIC_PERTURBED: &[u8; 8] = b"RASPPTB\x01";
const MAGIC_INDEX: &[u8; 8] = b"RASPIDX\x01";

fn check_magic(data: &[u8], magic: &[u8; 8], what: &str) -> Result<()> {
    if data.len() < 8 || &data[..8] != magic {
        return Err(Error::FileFormat(format!("not a {what} file")));
    }
    Ok(())
}

fn write_manifest(w: &mut Writer, m: &DatasetManifest) {
    w.u32(m.columns.len() as u32);
    for c in &m.columns {
        w.string(&c.name);
        w.u8(match c.ty {
            ColumnType::Numeric => 0,
            ColumnType::Categorical => 1,
        });
        w.f64(c.mean);
        w.f64(c.sd);
        w.u32(c.categories.len() as u32);
        for cat in &c.categories {
            w.string(cat);
        }
    }
    w.u64(m.records as u64);
}

fn read_manifest(r: &mut Reader) -> Result<DatasetManifest> {
    let ncols = r.u32()? as usize;
    let mut columns = Vec::with_capacity(ncols);
    for _ in 0..ncols {
        let name = r.string()?;
        let ty = match r.u8()? {
            0 => ColumnType::Numeric,
            1 => ColumnType::Categorical,
            other => return Err(Error::FileFormat(format!("bad column type {other}"))),
        };
        let mean = r.f64()?;
        let sd = r.f64()?;
        let ncat = r.u32()? as usize;
        let mut categories = Vec::with_capacity(ncat);
        for _ in 0..ncat {
            categories.push(r.string()?);
        }
        columns.push(ColumnMeta {
            name,
            ty,
            mean,
            sd,
            categories,
        });
    }
    let records = r.u64()? as usize;
    Ok(DatasetManifest { columns, records })
}

// ---------------------------------------------------------------------
// Key file (proxy-only artifact; carries the manifest for query
// interpretation)
// ---------------------------------------------------------------------

pub fn save_key(path: &Path, key: &RaspKey, manifest: &DatasetManifest) -> Result<()> {
    let mut w = Writer::new();
    w.u32(key.dims() as u32);
    w.u32(key.ope().buckets() as u32);
    w.f64(key.noise().v0);
    w.f64(key.noise().v1);
    w.mat(key.matrix());
    for j in 0..key.dims() {
        let dim = key.ope().dim(j);
        w.f64(dim.beta());
        w.f64_slice(dim.source_boundaries());
        w.f64_slice(dim.target_boundaries());
    }
    let env = key.envelope_key();
    for b in env {
        w.u8(*b);
    }
    write_manifest(&mut w, manifest);
    let mut out = MAGIC_KEY.to_vec();
    out.extend(w.into_bytes());
    fs::write(path, out)?;
    Ok(())
}

pub fn load_key(path: &Path) -> Result<(RaspKey, DatasetManifest)> {
    let data = fs::read(path)?;
    check_magic(&data, MAGIC_KEY, "key")?;
    let mut r = Reader::new(&data[8..]);
    let d = r.u32()? as usize;
    let buckets = r.u32()? as usize;
    let v0 = r.f64()?;
    let v1 = r.f64()?;
    let a = r.mat()?;
    let mut dims = Vec::with_capacity(d);
    for _ in 0..d {
        let beta = r.f64()?;
        let src = r.f64_vec()?;
        let tgt = r.f64_vec()?;
        dims.push(OpeDimensionKey::from_boundaries(src, tgt, beta)?);
    }
    let mut env = [0u8; 32];
    for b in env.iter_mut() {
        *b = r.u8()?;
    }
    let manifest = read_manifest(&mut r)?;
    let key = RaspKey::from_parts(
        a,
        OpeKey::from_dims(dims, buckets),
        NoiseSpec::new(v0, v1)?,
        env,
    )?;
    Ok((key, manifest))
}

// ---------------------------------------------------------------------
// Plain dataset (proxy-side artifact)
// ---------------------------------------------------------------------

pub fn save_plain(path: &Path, manifest: &DatasetManifest, records: &[PlainRecord]) -> Result<()> {
    let mut w = Writer::new();
    write_manifest(&mut w, manifest);
    w.u64(records.len() as u64);
    for rec in records {
        w.f64_slice(&rec.values);
        w.bytes(&rec.payload);
    }
    let mut out = MAGIC_PLAIN.to_vec();
    out.extend(w.into_bytes());
    fs::write(path, out)?;
    Ok(())
}

pub fn load_plain(path: &Path) -> Result<(DatasetManifest, Vec<PlainRecord>)> {
    let data = fs::read(path)?;
    check_magic(&data, MAGIC_PLAIN, "plain dataset")?;
    let mut r = Reader::new(&data[8..]);
    let manifest = read_manifest(&mut r)?;
    let n = r.u64()? as usize;
    let mut records = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        records.push(PlainRecord {
            values: r.f64_vec()?,
            payload: r.bytes()?,
        });
    }
    Ok((manifest, records))
}

// ---------------------------------------------------------------------
// Perturbed dataset (the only record form the server sees)
// ---------------------------------------------------------------------

pub fn save_perturbed(path: &Path, records: &[PerturbedRecord]) -> Result<()> {
    let mut w = Writer::new();
    let dims = records.first().map_or(0, |r| r.y.len());
    w.u32(dims as u32);
    w.u64(records.len() as u64);
    for rec in records {
        w.u64(rec.id);
        for v in &rec.y {
            w.f64(*v);
        }
        w.bytes(&rec.envelope);
    }
    let mut out = MAGIC_PERTURBED.to_vec();
    out.extend(w.into_bytes());
    fs::write(path, out)?;
    Ok(())
}

pub fn load_perturbed(path: &Path) -> Result<Vec<PerturbedRecord>> {
    let data = fs::read(path)?;
    check_magic(&data, MAGIC_PERTURBED, "perturbed dataset")?;
    let mut r = Reader::new(&data[8..]);
    let dims = r.u32()? as usize;
    let n = r.u64()? as usize;
    let mut records = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let id = r.u64()?;
        let mut y = Vec::with_capacity(dims);
        for _ in 0..dims {
            y.push(r.f64()?);
        }
        records.push(PerturbedRecord {
            id,
            y,
            envelope: r.bytes()?,
        });
    }
    Ok(records)
}

// ---------------------------------------------------------------------
// Index file (node layout, capacity, dimension count)
// ---------------------------------------------------------------------

pub fn save_index(path: &Path, index: &IndexStore) -> Result<()> {
    let nodes = index.export_nodes();
    let mut w = Writer::new();
    w.u32(index.capacity() as u32);
    w.u32(index.dims() as u32);
    w.u32(nodes.len() as u32);
    for node in &nodes {
        match node {
            ExportNode::Leaf { mbr, entries } => {
                w.u8(0);
                w.mbr(mbr);
                w.u32(entries.len() as u32);
                for id in entries {
                    w.u64(*id);
                }
            }
            ExportNode::Internal { mbr, children } => {
                w.u8(1);
                w.mbr(mbr);
                w.u32(children.len() as u32);
                for c in children {
                    w.u32(*c as u32);
                }
            }
        }
    }
    let mut out = MAGIC_INDEX.to_vec();
    out.extend(w.into_bytes());
    fs::write(path, out)?;
    Ok(())
}

/// Loads the node layout and re-attaches it to the given records.
pub fn load_index(path: &Path, records: Vec<PerturbedRecord>) -> Result<IndexStore> {
    let data = fs::read(path)?;
    check_magic(&data, MAGIC_INDEX, "index")?;
    let mut r = Reader::new(&data[8..]);
    let capacity = r.u32()? as usize;
    let dims = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut nodes = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        let kind = r.u8()?;
        let mbr = r.mbr()?;
        if mbr.dims() != dims {
            return Err(Error::FileFormat("node dimensionality mismatch".into()));
        }
        let n = r.u32()? as usize;
        match kind {
            0 => {
                let mut entries = Vec::with_capacity(n);
                for _ in 0..n {
                    entries.push(r.u64()?);
                }
                nodes.push(ExportNode::Leaf { mbr, entries });
            }
            1 => {
                let mut children = Vec::with_capacity(n);
                for _ in 0..n {
                    children.push(r.u32()? as usize);
                }
                nodes.push(ExportNode::Internal { mbr, children });
            }
            other => return Err(Error::FileFormat(format!("bad node kind {other}"))),
        }
    }
    Ok(IndexStore::from_export(&nodes, records, capacity)?)
}

// ---------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------

/// Tab-separated report with a header row.
pub fn write_report(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut text = header.join("\t");
    text.push('\n');
    for row in rows {
        text.push_str(&row.join("\t"));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}
