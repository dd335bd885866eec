//! Plain-text network and dataset files.
//!
//! Network: one `edge_id,src,dst,length_m,base_time_s` line per edge.
//!
//! Dataset: `path_id<TAB>e1 e2 ... eN` lines, optionally followed by
//! `label<TAB>path_id<TAB>key=value...` lines with keys `tt`, `rank` and
//! `split`. Blank lines and lines starting with `#` are skipped. Floats are
//! written in shortest round-trip form, so save/load is lossless.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path as FsPath;

use super::{check_labels, Edge, EdgeId, Path, PathDataset, PathRecord, RoadNetwork};
use crate::error::{Error, Result};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn field<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| parse_err(line, format!("bad {} `{}`", what, s)))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

pub fn parse_network(text: &str) -> Result<RoadNetwork> {
    let mut edges = Vec::new();
    for (n, line) in content_lines(text) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(parse_err(n, format!("expected 5 fields, got {}", cols.len())));
        }
        let id: EdgeId = field(cols[0], n, "edge id")?;
        let edge = Edge {
            src: field(cols[1], n, "source vertex")?,
            dst: field(cols[2], n, "target vertex")?,
            length_m: field(cols[3], n, "length")?,
            base_time_s: field(cols[4], n, "base time")?,
        };
        edges.push((id, edge));
    }
    RoadNetwork::from_edges(edges)
}

pub fn format_network(network: &RoadNetwork) -> String {
    let mut out = String::new();
    for (id, e) in network.edges() {
        writeln!(out, "{},{},{},{},{}", id, e.src, e.dst, e.length_m, e.base_time_s).unwrap();
    }
    out
}

pub fn load_network(file: impl AsRef<FsPath>) -> Result<RoadNetwork> {
    parse_network(&fs::read_to_string(file)?)
}

pub fn save_network(network: &RoadNetwork, file: impl AsRef<FsPath>) -> Result<()> {
    fs::write(file, format_network(network))?;
    Ok(())
}

/// Parses a dataset file; with a network, every edge id must exist in it.
pub fn parse_dataset(text: &str, network: Option<&RoadNetwork>) -> Result<PathDataset> {
    let mut records: Vec<PathRecord> = Vec::new();
    let mut index: HashMap<u64, usize> = HashMap::new();
    for (n, line) in content_lines(text) {
        let mut cols = line.split('\t');
        let head = cols.next().unwrap_or_default();
        if head == "label" {
            let id: u64 = field(cols.next().ok_or_else(|| parse_err(n, "label without path id"))?, n, "path id")?;
            let &i = index
                .get(&id)
                .ok_or_else(|| parse_err(n, format!("label for unknown path {}", id)))?;
            let rec = &mut records[i];
            for kv in cols {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| parse_err(n, format!("expected key=value, got `{}`", kv)))?;
                match k {
                    "tt" => rec.travel_time = Some(field(v, n, "travel time")?),
                    "rank" => rec.rank = Some(field(v, n, "ranking score")?),
                    "split" => rec.split = Some(v.parse().map_err(|e: Error| parse_err(n, e.to_string()))?),
                    other => return Err(parse_err(n, format!("unknown label key `{}`", other))),
                }
            }
            check_labels(rec).map_err(|e| parse_err(n, e.to_string()))?;
            continue;
        }
        let id: u64 = field(head, n, "path id")?;
        let body = cols.next().unwrap_or_default();
        if cols.next().is_some() {
            return Err(parse_err(n, "path line has extra fields"));
        }
        let edges = body
            .split_whitespace()
            .map(|e| field(e, n, "edge id"))
            .collect::<Result<Vec<EdgeId>>>()?;
        let path = Path::new(edges).map_err(|e| parse_err(n, e.to_string()))?;
        if let Some(net) = network {
            super::validate_path(net, &path).map_err(|e| parse_err(n, e.to_string()))?;
        }
        if index.insert(id, records.len()).is_some() {
            return Err(parse_err(n, format!("duplicate path id {}", id)));
        }
        records.push(PathRecord::unlabeled(id, path));
    }
    PathDataset::new(records)
}

pub fn format_dataset(dataset: &PathDataset) -> String {
    let mut out = String::new();
    for r in dataset.records() {
        let edges: Vec<String> = r.path.edges().iter().map(|e| e.to_string()).collect();
        writeln!(out, "{}\t{}", r.id, edges.join(" ")).unwrap();
    }
    for r in dataset.records() {
        let mut labels = Vec::new();
        if let Some(t) = r.travel_time {
            labels.push(format!("tt={}", t));
        }
        if let Some(s) = r.rank {
            labels.push(format!("rank={}", s));
        }
        if let Some(s) = r.split {
            labels.push(format!("split={}", s));
        }
        if !labels.is_empty() {
            writeln!(out, "label\t{}\t{}", r.id, labels.join("\t")).unwrap();
        }
    }
    out
}

pub fn load_dataset(file: impl AsRef<FsPath>, network: Option<&RoadNetwork>) -> Result<PathDataset> {
    parse_dataset(&fs::read_to_string(file)?, network)
}

pub fn save_dataset(dataset: &PathDataset, file: impl AsRef<FsPath>) -> Result<()> {
    fs::write(file, format_dataset(dataset))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_grid_network, generate_synthetic_paths, Split};

    #[test]
    fn network_text_round_trip() {
        let g = generate_grid_network(4, 3, 8).unwrap();
        assert_eq!(parse_network(&format_network(&g)).unwrap(), g);
    }

    #[test]
    fn dataset_text_round_trip_is_exact() {
        let g = generate_grid_network(5, 5, 1).unwrap();
        let mut ds = generate_synthetic_paths(&g, 6, 5, 2, 3).unwrap();
        ds.assign_splits(0.5, 0.25, 1).unwrap();
        for (i, r) in ds.records_mut().iter_mut().enumerate() {
            r.travel_time = Some(1.0 / (i as f64 + 3.0));
            if i % 2 == 0 {
                r.rank = Some(0.1 * i as f64 / 2.0);
            }
        }
        let back = parse_dataset(&format_dataset(&ds), Some(&g)).unwrap();
        assert_eq!(back, ds);
        assert!(back.split(Split::Train).len() > 0);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(parse_dataset("1\t3 4\nlabel\t1\trank=1.5\n", None).is_err());
        assert!(parse_dataset("1\t\n", None).is_err());
        assert!(parse_dataset("1\t5\n", None).is_err());
        assert!(parse_dataset("x\t1 2\n", None).is_err());
        assert!(parse_dataset("label\t9\ttt=1\n", None).is_err());
        assert!(parse_network("0,1,2,3\n").is_err());
    }

    #[test]
    fn unknown_edge_is_reported_against_network() {
        let g = generate_grid_network(2, 2, 0).unwrap();
        let err = parse_dataset("0\t0 999\n", Some(&g)).unwrap_err();
        assert!(err.to_string().contains("unknown edge"), "{err}");
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let ds = parse_dataset("# header\n\n7\t1 2\n", None).unwrap();
        assert_eq!(ds.records()[0].id, 7);
    }
}
