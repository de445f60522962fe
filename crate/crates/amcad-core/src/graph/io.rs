//! Graph serialization: a header line, node records, then edges, all
//! newline-delimited JSON in canonical sort order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EdgeType, GraphError, HeteroGraph, NodeRecord};

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    nodes: usize,
    edges: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeLine {
    etype: EdgeType,
    src: String,
    dst: String,
}

pub fn save_graph(g: &HeteroGraph, path: &Path) -> Result<(), GraphError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let edges = g.edges();
    let header =
        Header { format: "amcad-graph".into(), nodes: g.len(), edges: edges.len() };
    serde_json::to_writer(&mut w, &header).map_err(|e| GraphError::Parse(e.to_string()))?;
    w.write_all(b"\n")?;
    for (_, record) in g.nodes() {
        serde_json::to_writer(&mut w, record).map_err(|e| GraphError::Parse(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    for (etype, a, b) in edges {
        let line =
            EdgeLine { etype, src: g.id(a).to_string(), dst: g.id(b).to_string() };
        serde_json::to_writer(&mut w, &line).map_err(|e| GraphError::Parse(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_graph(path: &Path) -> Result<HeteroGraph, GraphError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let header: Header = match lines.next() {
        Some((_, Ok(line))) => serde_json::from_str(&line)
            .map_err(|e| GraphError::Parse(format!("line 1: {e}")))?,
        _ => return Err(GraphError::Parse("empty graph file".into())),
    };
    if header.format != "amcad-graph" {
        return Err(GraphError::Parse(format!("unexpected format tag {:?}", header.format)));
    }
    let mut records = Vec::with_capacity(header.nodes);
    let mut edge_lines: Vec<EdgeLine> = Vec::with_capacity(header.edges);
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        if records.len() < header.nodes {
            let r: NodeRecord = serde_json::from_str(&line)
                .map_err(|e| GraphError::Parse(format!("line {lineno}: {e}")))?;
            records.push(r);
        } else {
            let e: EdgeLine = serde_json::from_str(&line)
                .map_err(|e| GraphError::Parse(format!("line {lineno}: {e}")))?;
            edge_lines.push(e);
        }
    }
    if records.len() != header.nodes || edge_lines.len() != header.edges {
        return Err(GraphError::Parse(format!(
            "header claims {} nodes / {} edges, found {} / {}",
            header.nodes,
            header.edges,
            records.len(),
            edge_lines.len()
        )));
    }
    let index: std::collections::HashMap<&str, u32> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i as u32))
        .collect();
    let mut edges = Vec::with_capacity(edge_lines.len());
    for e in &edge_lines {
        let a = *index
            .get(e.src.as_str())
            .ok_or_else(|| GraphError::UnknownNode(e.src.clone()))?;
        let b = *index
            .get(e.dst.as_str())
            .ok_or_else(|| GraphError::UnknownNode(e.dst.clone()))?;
        edges.push((e.etype, a, b));
    }
    Ok(HeteroGraph::from_parts(records, &edges))
}
