//! Dataset directory layout:
//!
//! - `mesh.json`: version, nodes, elements and boundary tags
//! - `snapshots.csv`: `t,node,ux,uy`, one row per snapshot and node
//! - `constraints.json`: fixed groups with their DOFs and reaction histories
//! - `provenance.json`: origin and processing stage of the data

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Provenance, SnapshotDataset};
use crate::error::{Error, Result};
use crate::mesh::{Dof, DofPartition, FixedGroup, Mesh};

pub const FORMAT_VERSION: &str = "1";

const MESH_FILE: &str = "mesh.json";
const SNAPSHOT_FILE: &str = "snapshots.csv";
const CONSTRAINT_FILE: &str = "constraints.json";
const PROVENANCE_FILE: &str = "provenance.json";
const UNMEASURED: &str = "unmeasured";

#[derive(Serialize, Deserialize)]
struct MeshFile {
    version: String,
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 3]>,
    boundaries: BTreeMap<String, Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct ConstraintEntry {
    name: String,
    dofs: Vec<[usize; 2]>,
    reactions: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ProvenanceFile {
    version: String,
    #[serde(flatten)]
    provenance: Provenance,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("dataset values serialize")
}

pub fn write_dataset(ds: &SnapshotDataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mesh = MeshFile {
        version: FORMAT_VERSION.to_string(),
        nodes: ds.mesh.nodes.clone(),
        elements: ds.mesh.elements.clone(),
        boundaries: ds.mesh.boundaries.clone(),
    };
    write_file(&dir.join(MESH_FILE), &to_json(&mesh))?;

    let mut csv = String::from("t,node,ux,uy\n");
    for (t, u) in ds.displacements.iter().enumerate() {
        for (a, v) in u.iter().enumerate() {
            writeln!(csv, "{t},{a},{:.16e},{:.16e}", v[0], v[1]).expect("string write");
        }
    }
    write_file(&dir.join(SNAPSHOT_FILE), &csv)?;

    let mut entries: Vec<ConstraintEntry> = ds
        .partition
        .fixed_groups
        .iter()
        .enumerate()
        .map(|(g, group)| ConstraintEntry {
            name: group.name.clone(),
            dofs: group.dofs.iter().map(|d| [d.node, d.dir]).collect(),
            reactions: Some(ds.reactions.iter().map(|r| r[g]).collect()),
        })
        .collect();
    if !ds.partition.unmeasured.is_empty() {
        entries.push(ConstraintEntry {
            name: UNMEASURED.to_string(),
            dofs: ds.partition.unmeasured.iter().map(|d| [d.node, d.dir]).collect(),
            reactions: None,
        });
    }
    write_file(&dir.join(CONSTRAINT_FILE), &to_json(&entries))?;

    let prov = ProvenanceFile {
        version: FORMAT_VERSION.to_string(),
        provenance: ds.provenance.clone(),
    };
    write_file(&dir.join(PROVENANCE_FILE), &to_json(&prov))
}

fn read_text(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(Error::schema(name, "file is missing"));
    }
    fs::read_to_string(&path).map_err(|e| Error::io(path, e))
}

fn parse_json<T: for<'de> Deserialize<'de>>(name: &str, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::schema(name, e.to_string()))
}

fn check_version(name: &str, version: &str) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(Error::schema(
            format!("{name}/version"),
            format!("unsupported version {version:?}, expected {FORMAT_VERSION:?}"),
        ));
    }
    Ok(())
}

fn read_snapshots(text: &str, n_nodes: usize) -> Result<Vec<Vec<[f64; 2]>>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "t,node,ux,uy")) => {}
        _ => return Err(Error::schema(format!("{SNAPSHOT_FILE}/header"), "expected t,node,ux,uy")),
    }
    let mut out: Vec<Vec<[f64; 2]>> = Vec::new();
    for (line_no, line) in lines {
        if line.is_empty() {
            continue;
        }
        let loc = |col: &str| format!("{SNAPSHOT_FILE}/line {}/{col}", line_no + 1);
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::schema(loc("row"), "expected 4 fields"));
        }
        let t: usize = fields[0].parse().map_err(|_| Error::schema(loc("t"), fields[0]))?;
        let a: usize = fields[1].parse().map_err(|_| Error::schema(loc("node"), fields[1]))?;
        let ux: f64 = fields[2].parse().map_err(|_| Error::schema(loc("ux"), fields[2]))?;
        let uy: f64 = fields[3].parse().map_err(|_| Error::schema(loc("uy"), fields[3]))?;
        if t == out.len() {
            out.push(Vec::with_capacity(n_nodes));
        } else if t + 1 != out.len() {
            return Err(Error::schema(loc("t"), "snapshots must be contiguous and ordered"));
        }
        let snap = out.last_mut().expect("pushed above");
        if a != snap.len() {
            return Err(Error::schema(loc("node"), "nodes must be contiguous and ordered"));
        }
        snap.push([ux, uy]);
    }
    for (t, u) in out.iter().enumerate() {
        if u.len() != n_nodes {
            return Err(Error::schema(
                format!("{SNAPSHOT_FILE}/t={t}"),
                format!("{} nodes, mesh has {n_nodes}", u.len()),
            ));
        }
    }
    Ok(out)
}

pub fn read_dataset(dir: &Path) -> Result<SnapshotDataset> {
    let mesh_file: MeshFile = parse_json(MESH_FILE, &read_text(dir, MESH_FILE)?)?;
    check_version(MESH_FILE, &mesh_file.version)?;
    let prov_file: ProvenanceFile = parse_json(PROVENANCE_FILE, &read_text(dir, PROVENANCE_FILE)?)?;
    check_version(PROVENANCE_FILE, &prov_file.version)?;
    let entries: Vec<ConstraintEntry> =
        parse_json(CONSTRAINT_FILE, &read_text(dir, CONSTRAINT_FILE)?)?;
    let snapshots = read_text(dir, SNAPSHOT_FILE)?;

    let mesh = Mesh::new(mesh_file.nodes, mesh_file.elements, mesh_file.boundaries)
        .map_err(|e| Error::schema(MESH_FILE, e.to_string()))?;
    let n = mesh.n_nodes();
    let displacements = read_snapshots(&snapshots, n)?;
    let n_t = displacements.len();

    let mut taken = vec![false; 2 * n];
    let mut fixed_groups = Vec::new();
    let mut unmeasured = Vec::new();
    let mut histories = Vec::new();
    for (g, entry) in entries.into_iter().enumerate() {
        let mut dofs = Vec::with_capacity(entry.dofs.len());
        for (k, [node, dir]) in entry.dofs.into_iter().enumerate() {
            if node >= n || dir > 1 || taken[2 * node + dir] {
                return Err(Error::schema(
                    format!("{CONSTRAINT_FILE}/[{g}]/dofs/[{k}]"),
                    "DOF out of range or listed twice",
                ));
            }
            taken[2 * node + dir] = true;
            dofs.push(Dof::new(node, dir));
        }
        match entry.reactions {
            Some(r) => {
                if r.len() != n_t {
                    return Err(Error::schema(
                        format!("{CONSTRAINT_FILE}/[{g}]/reactions"),
                        format!("{} values for {n_t} snapshots", r.len()),
                    ));
                }
                histories.push(r);
                fixed_groups.push(FixedGroup {
                    name: entry.name,
                    dofs,
                });
            }
            None => unmeasured.extend(dofs),
        }
    }
    unmeasured.sort();
    let free = (0..2 * n)
        .filter(|&d| !taken[d])
        .map(|d| Dof::new(d / 2, d % 2))
        .collect();
    let reactions = (0..n_t)
        .map(|t| histories.iter().map(|h| h[t]).collect())
        .collect();

    let ds = SnapshotDataset {
        mesh,
        partition: DofPartition {
            free,
            fixed_groups,
            unmeasured,
        },
        displacements,
        reactions,
        provenance: prov_file.provenance,
    };
    ds.validate()?;
    Ok(ds)
}
