//! Dataset directory format.
//!
//! ```text
//! manifest.json            schema + relative file paths
//! nodes_<type>.csv         header f0,f1,...; row i = features of node i
//! edges_<type>.csv         header src,dst
//! labels.csv               header node_id,class (optional leading node_type column)
//! ```
//!
//! A label cell may list several classes separated by `;` or `|`; only the
//! first is kept. Repeated node ids also keep their first class.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{EdgeTypeDef, HetGraph, NodeTypeDef, NodeTypeId, Schema};
use crate::error::{HgmpError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    node_types: Vec<ManifestNodeType>,
    edge_types: Vec<ManifestEdgeType>,
    target_type: String,
    num_classes: usize,
    labels: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestNodeType {
    name: String,
    dim: usize,
    file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEdgeType {
    name: String,
    src: String,
    dst: String,
    file: String,
}

/// Loads a dataset given either its directory or its `manifest.json`.
pub fn load_graph(path: impl AsRef<Path>) -> Result<HetGraph> {
    let path = path.as_ref();
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = fs::read_to_string(&manifest_path).map_err(|e| HgmpError::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| HgmpError::format(&manifest_path, e.line(), e.to_string()))?;

    let node_types: Vec<NodeTypeDef> = manifest
        .node_types
        .iter()
        .map(|t| NodeTypeDef {
            name: t.name.clone(),
            dim: t.dim,
        })
        .collect();
    let find = |name: &str| -> Result<NodeTypeId> {
        node_types
            .iter()
            .position(|t| t.name == name)
            .map(NodeTypeId)
            .ok_or_else(|| HgmpError::format(&manifest_path, 0, format!("unknown node type `{name}`")))
    };
    let edge_types = manifest
        .edge_types
        .iter()
        .map(|e| {
            Ok(EdgeTypeDef {
                name: e.name.clone(),
                src: find(&e.src)?,
                dst: find(&e.dst)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let schema = Schema {
        target: find(&manifest.target_type)?,
        node_types,
        edge_types,
        num_classes: manifest.num_classes,
    };
    if let Some(v) = schema.violations().first() {
        return Err(HgmpError::format(&manifest_path, 0, v.to_string()));
    }

    let features = manifest
        .node_types
        .iter()
        .map(|t| read_features(&dir.join(&t.file), t.dim))
        .collect::<Result<Vec<_>>>()?;
    let counts: Vec<usize> = features.iter().map(|f| f.nrows()).collect();

    let edges = manifest
        .edge_types
        .iter()
        .zip(&schema.edge_types)
        .map(|(m, def)| read_edges(&dir.join(&m.file), counts[def.src.0], counts[def.dst.0]))
        .collect::<Result<Vec<_>>>()?;

    let labels = read_labels(&dir.join(&manifest.labels), &schema, counts[schema.target.0])?;
    HetGraph::new(Arc::new(schema), features, edges, labels)
}

fn open_csv(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| HgmpError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> HgmpError {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => HgmpError::io(path, io),
        other => HgmpError::format(path, row, format!("{other:?}")),
    }
}

fn parse_cell<T: std::str::FromStr>(path: &Path, row: usize, cell: &str, what: &str) -> Result<T> {
    cell.parse()
        .map_err(|_| HgmpError::format(path, row, format!("cannot parse {what} `{cell}`")))
}

fn read_features(path: &Path, dim: usize) -> Result<Array2<f64>> {
    let mut reader = open_csv(path)?;
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        // Data rows are numbered from 1, after the header line.
        let row = i + 1;
        if rec.len() != dim {
            return Err(HgmpError::format(
                path,
                row,
                format!("dimension mismatch: {} values, type declares {dim}", rec.len()),
            ));
        }
        for cell in rec.iter() {
            data.push(parse_cell::<f64>(path, row, cell, "feature")?);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, dim), data).map_err(|e| HgmpError::format(path, 0, e.to_string()))
}

fn read_edges(path: &Path, src_count: usize, dst_count: usize) -> Result<Vec<(usize, usize)>> {
    let mut reader = open_csv(path)?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = i + 1;
        if rec.len() != 2 {
            return Err(HgmpError::format(path, row, "expected columns src,dst"));
        }
        let s: usize = parse_cell(path, row, &rec[0], "src")?;
        let d: usize = parse_cell(path, row, &rec[1], "dst")?;
        if s >= src_count || d >= dst_count {
            return Err(HgmpError::format(
                path,
                row,
                format!("dangling edge endpoint ({s}, {d}); type sizes are ({src_count}, {dst_count})"),
            ));
        }
        out.push((s, d));
    }
    Ok(out)
}

fn read_labels(path: &Path, schema: &Schema, target_count: usize) -> Result<BTreeMap<usize, usize>> {
    let mut reader = open_csv(path)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let typed = headers.len() == 3;
    if !(headers.len() == 2 || typed) {
        return Err(HgmpError::format(path, 0, "expected header node_id,class or node_type,node_id,class"));
    }
    let target_name = &schema.node_type(schema.target).name;
    let mut labels = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = i + 1;
        if rec.len() != headers.len() {
            return Err(HgmpError::format(path, row, "wrong column count"));
        }
        let (id_cell, class_cell) = if typed {
            if &rec[0] != target_name.as_str() {
                return Err(HgmpError::format(
                    path,
                    row,
                    format!("label on non-target type `{}` (target is `{target_name}`)", &rec[0]),
                ));
            }
            (&rec[1], &rec[2])
        } else {
            (&rec[0], &rec[1])
        };
        let node: usize = parse_cell(path, row, id_cell, "node_id")?;
        let first = class_cell.split([';', '|']).next().unwrap_or("").trim();
        let class: usize = parse_cell(path, row, first, "class")?;
        if node >= target_count {
            return Err(HgmpError::format(
                path,
                row,
                format!("label on node {node} but target type has {target_count} nodes"),
            ));
        }
        if class >= schema.num_classes {
            return Err(HgmpError::format(
                path,
                row,
                format!("class {class} out of range (class count {})", schema.num_classes),
            ));
        }
        labels.entry(node).or_insert(class);
    }
    Ok(labels)
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes `g` in the dataset directory format. Floats use Rust's shortest
/// round-trip representation so a reload is bit-exact.
pub fn save_graph(g: &HetGraph, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| HgmpError::io(dir, e))?;
    let schema = g.schema();

    let mut node_entries = Vec::new();
    for (t, def) in schema.node_types.iter().enumerate() {
        let file = format!("nodes_{}.csv", file_stem(&def.name));
        let path = dir.join(&file);
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        let header: Vec<String> = (0..def.dim).map(|i| format!("f{i}")).collect();
        w.write_record(&header).map_err(|e| csv_error(&path, e))?;
        for row in g.features(NodeTypeId(t)).rows() {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| HgmpError::io(&path, e))?;
        node_entries.push(ManifestNodeType {
            name: def.name.clone(),
            dim: def.dim,
            file,
        });
    }

    let mut edge_entries = Vec::new();
    for (et, def) in schema.edge_types.iter().enumerate() {
        let file = format!("edges_{}.csv", file_stem(&def.name));
        let path = dir.join(&file);
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        w.write_record(["src", "dst"]).map_err(|e| csv_error(&path, e))?;
        for &(s, d) in g.edges(super::EdgeTypeId(et)) {
            w.write_record([s.to_string(), d.to_string()]).map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| HgmpError::io(&path, e))?;
        edge_entries.push(ManifestEdgeType {
            name: def.name.clone(),
            src: schema.node_type(def.src).name.clone(),
            dst: schema.node_type(def.dst).name.clone(),
            file,
        });
    }

    let labels_path = dir.join("labels.csv");
    let mut w = csv::Writer::from_path(&labels_path).map_err(|e| csv_error(&labels_path, e))?;
    w.write_record(["node_id", "class"]).map_err(|e| csv_error(&labels_path, e))?;
    for (node, class) in g.labels() {
        w.write_record([node.to_string(), class.to_string()])
            .map_err(|e| csv_error(&labels_path, e))?;
    }
    w.flush().map_err(|e| HgmpError::io(&labels_path, e))?;

    let manifest = Manifest {
        node_types: node_entries,
        edge_types: edge_entries,
        target_type: schema.node_type(schema.target).name.clone(),
        num_classes: schema.num_classes,
        labels: "labels.csv".to_string(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text + "\n").map_err(|e| HgmpError::io(&manifest_path, e))?;
    Ok(manifest_path)
}
