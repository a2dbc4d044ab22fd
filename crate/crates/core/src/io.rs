//! Artifact persistence.
//!
//! Embeddings travel either as a compact little-endian binary (magic
//! `GRNREDE1`) or as CSV with an `item_id,e0,...` header; the reader sniffs
//! the magic, and both encodings reproduce the exact same matrix because
//! CSV floats are written in shortest round-trip form. Recommendation and
//! interaction logs are JSONL with a self-describing header record carrying
//! the effective config, so downstream commands can re-run from artifacts
//! alone. Sweep results are plain CSV behind a `# config` comment line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::partition::ItemEmbeddings;
use crate::sandbox::{InteractionLog, SyntheticCatalog};
use crate::verifier::{RecommendationList, VerificationReport};

/// Leading magic of the binary embeddings encoding.
pub const EMBEDDINGS_MAGIC: &[u8; 8] = b"GRNREDE1";

/// Writes embeddings as binary: magic, item count and dimension as `u32`
/// little endian, then the row-major matrix as `f64` little endian.
pub fn write_embeddings_binary(path: &Path, emb: &ItemEmbeddings) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(EMBEDDINGS_MAGIC)?;
    w.write_all(&(emb.n_items() as u32).to_le_bytes())?;
    w.write_all(&(emb.dim() as u32).to_le_bytes())?;
    for v in emb.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Writes embeddings as CSV with an `item_id,e0,...,e{d-1}` header. Floats
/// use shortest round-trip formatting, so reading the file back yields the
/// bit-identical matrix.
pub fn write_embeddings_csv(path: &Path, emb: &ItemEmbeddings) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "item_id")?;
    for j in 0..emb.dim() {
        write!(w, ",e{j}")?;
    }
    writeln!(w)?;
    for i in 0..emb.n_items() {
        write!(w, "{i}")?;
        for v in emb.row(i) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads embeddings in either encoding, deciding by the leading magic.
pub fn read_embeddings(path: &Path) -> Result<ItemEmbeddings> {
    let mut file = File::open(path)?;
    let mut head = [0u8; 8];
    let got = {
        let mut filled = 0;
        loop {
            let n = file.read(&mut head[filled..])?;
            if n == 0 {
                break filled;
            }
            filled += n;
            if filled == head.len() {
                break filled;
            }
        }
    };
    if got == 8 && &head == EMBEDDINGS_MAGIC {
        read_embeddings_binary_body(&mut file, path)
    } else {
        drop(file);
        read_embeddings_csv(path)
    }
}

fn read_embeddings_binary_body(file: &mut File, path: &Path) -> Result<ItemEmbeddings> {
    let mut dims = [0u8; 8];
    file.read_exact(&mut dims)
        .map_err(|_| truncated(path, "header"))?;
    let n_items = u32::from_le_bytes(dims[..4].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(dims[4..].try_into().unwrap()) as usize;
    let count = n_items
        .checked_mul(dim)
        .ok_or_else(|| truncated(path, "header"))?;
    let mut body = Vec::new();
    file.read_to_end(&mut body)?;
    if body.len() != count * 8 {
        return Err(Error::Parse(format!(
            "{}: expected {} matrix bytes, found {}",
            path.display(),
            count * 8,
            body.len()
        )));
    }
    let data: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ItemEmbeddings::new(data, n_items, dim)
}

fn read_embeddings_csv(path: &Path) -> Result<ItemEmbeddings> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| truncated(path, "CSV header"))??;
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    if cols.first() != Some(&"item_id") || cols.len() < 2 {
        return Err(Error::Parse(format!(
            "{}: expected an item_id,e0,... header",
            path.display()
        )));
    }
    for (j, col) in cols[1..].iter().enumerate() {
        if *col != format!("e{j}") {
            return Err(Error::Parse(format!(
                "{}: header column {} is {col:?}, expected \"e{j}\"",
                path.display(),
                j + 1
            )));
        }
    }
    let dim = cols.len() - 1;
    let mut data = Vec::new();
    let mut n_items = 0usize;
    for line in lines {
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::Parse(format!(
                "{}: row {n_items} has {} fields, expected {}",
                path.display(),
                fields.len(),
                dim + 1
            )));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|_| Error::Parse(format!("{}: bad item id {:?}", path.display(), fields[0])))?;
        if id != n_items {
            return Err(Error::Parse(format!(
                "{}: item ids must ascend from 0; row {n_items} has id {id}",
                path.display()
            )));
        }
        for f in &fields[1..] {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::Parse(format!("{}: bad float {f:?}", path.display())))?;
            data.push(v);
        }
        n_items += 1;
    }
    ItemEmbeddings::new(data, n_items, dim)
}

fn truncated(path: &Path, what: &str) -> Error {
    Error::Parse(format!("{}: truncated {what}", path.display()))
}

/// Catalog metadata stored beside the embeddings binary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogSidecar {
    pub cluster_of: Vec<u32>,
    pub popularity: Vec<f64>,
    /// Seed the catalog was generated from.
    pub rng_seed: u64,
    /// Effective run config at generation time.
    pub params: Value,
}

/// Writes the catalog as embeddings binary plus JSON sidecar.
pub fn write_catalog(
    bin_path: &Path,
    sidecar_path: &Path,
    catalog: &SyntheticCatalog,
    rng_seed: u64,
    params: Value,
) -> Result<()> {
    write_embeddings_binary(bin_path, &catalog.embeddings)?;
    let sidecar = CatalogSidecar {
        cluster_of: catalog.cluster_of.clone(),
        popularity: catalog.popularity.clone(),
        rng_seed,
        params,
    };
    write_json_pretty(sidecar_path, &serde_json::to_value(&sidecar).expect("sidecar serializes"))
}

/// Reads a catalog back from binary plus sidecar.
pub fn read_catalog(bin_path: &Path, sidecar_path: &Path) -> Result<(SyntheticCatalog, CatalogSidecar)> {
    let embeddings = read_embeddings(bin_path)?;
    let text = std::fs::read_to_string(sidecar_path)?;
    let sidecar: CatalogSidecar = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", sidecar_path.display())))?;
    let n = embeddings.n_items();
    if sidecar.cluster_of.len() != n || sidecar.popularity.len() != n {
        return Err(Error::Parse(format!(
            "{}: sidecar describes {} clusters / {} popularities for {} items",
            sidecar_path.display(),
            sidecar.cluster_of.len(),
            sidecar.popularity.len(),
            n
        )));
    }
    let catalog = SyntheticCatalog {
        embeddings,
        cluster_of: sidecar.cluster_of.clone(),
        popularity: sidecar.popularity.clone(),
    };
    Ok((catalog, sidecar))
}

/// Writes a JSONL log: one header record (an object without an `items`
/// field, normally `{"config": ...}`), then one record per list.
pub fn write_lists_jsonl(path: &Path, header: &Value, lists: &[RecommendationList]) -> Result<()> {
    if header.get("items").is_some() {
        return Err(Error::InvalidArgument(
            "log header must not carry an items field".into(),
        ));
    }
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, header).map_err(|e| Error::Parse(e.to_string()))?;
    writeln!(w)?;
    for list in lists {
        serde_json::to_writer(&mut w, list).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a JSONL log, returning the header record (if present) and lists.
pub fn read_lists_jsonl(path: &Path) -> Result<(Option<Value>, Vec<RecommendationList>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut header = None;
    let mut lists = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), idx + 1)))?;
        if idx == 0 && value.get("items").is_none() {
            header = Some(value);
            continue;
        }
        let list: RecommendationList = serde_json::from_value(value)
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), idx + 1)))?;
        lists.push(list);
    }
    Ok((header, lists))
}

/// Writes interaction sequences in the shared JSONL schema: empty history,
/// full sequence in `items`.
pub fn write_interactions_jsonl(path: &Path, header: &Value, log: &InteractionLog) -> Result<()> {
    let lists: Vec<RecommendationList> = log
        .sequences
        .iter()
        .enumerate()
        .map(|(u, seq)| RecommendationList {
            user_id: u as u64,
            history: Vec::new(),
            items: seq.clone(),
        })
        .collect();
    write_lists_jsonl(path, header, &lists)
}

/// Reads interaction sequences written by [`write_interactions_jsonl`].
pub fn read_interactions_jsonl(path: &Path) -> Result<(Option<Value>, InteractionLog)> {
    let (header, lists) = read_lists_jsonl(path)?;
    let mut sequences = Vec::with_capacity(lists.len());
    for (u, list) in lists.iter().enumerate() {
        if list.user_id != u as u64 {
            return Err(Error::Parse(format!(
                "{}: interaction records must cover users in order; record {u} is user {}",
                path.display(),
                list.user_id
            )));
        }
        if !list.history.is_empty() {
            return Err(Error::Parse(format!(
                "{}: interaction records carry the sequence in items; user {u} has a history",
                path.display()
            )));
        }
        sequences.push(list.items.clone());
    }
    Ok((header, InteractionLog { sequences }))
}

/// Bundles a verification report with the effective config for provenance.
pub fn report_document(report: &VerificationReport, config_echo: Value) -> Value {
    serde_json::json!({
        "config": config_echo,
        "report": report,
    })
}

/// Writes a pretty-printed JSON document with a trailing newline.
pub fn write_json_pretty(path: &Path, value: &Value) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Parse(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// One sweep measurement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub green_rate: f64,
    pub z_score: f64,
}

/// Writes sweep results: a `# config` comment, a header row naming the
/// evaluation cutoff, then one row per swept value.
pub fn write_sweep_csv(
    path: &Path,
    config_echo: &Value,
    eval_k: usize,
    rows: &[SweepRow],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# config {config_echo}")?;
    writeln!(w, "value,recall_at_{eval_k},ndcg_at_{eval_k},green_rate,z_score")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.value, r.recall, r.ndcg, r.green_rate, r.z_score
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Reads sweep results back, skipping comment and header lines.
pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("value,") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse(format!(
                "{}: sweep row has {} fields, expected 5",
                path.display(),
                fields.len()
            )));
        }
        let mut parsed = [0.0f64; 5];
        for (slot, f) in parsed.iter_mut().zip(&fields) {
            *slot = f
                .parse()
                .map_err(|_| Error::Parse(format!("{}: bad float {f:?}", path.display())))?;
        }
        rows.push(SweepRow {
            value: parsed[0],
            recall: parsed[1],
            ndcg: parsed[2],
            green_rate: parsed[3],
            z_score: parsed[4],
        });
    }
    Ok(rows)
}
