//! Plain CSV and JSON writers for graphs, rotor states, traces and
//! per-vertex fields. Output depends only on the inputs.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{PrefractalGraph, VertexId};
use crate::lattice::LatticeCoord;
use crate::rotor::RotorConfig;

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

pub fn graph_json(graph: &PrefractalGraph) -> Result<Vec<u8>> {
    to_json_bytes(&graph.export())
}

/// `{"a,b": index}` for every set rotor, keys sorted as strings.
pub fn rotors_json(graph: &PrefractalGraph, rotors: &RotorConfig) -> Result<Vec<u8>> {
    check_len(graph, rotors.len())?;
    to_json_bytes(&rotors.export(graph))
}

pub fn parse_rotors_json(graph: &PrefractalGraph, bytes: &[u8]) -> Result<RotorConfig> {
    let map: BTreeMap<String, u8> = serde_json::from_slice(bytes)?;
    RotorConfig::import(graph, &map)
}

/// `t,a,b` per line.
pub fn write_trace_csv<W: Write>(trace: &[(u64, LatticeCoord)], mut w: W) -> Result<()> {
    writeln!(w, "t,a,b")?;
    for (t, c) in trace {
        writeln!(w, "{t},{},{}", c.a, c.b)?;
    }
    Ok(())
}

/// `a,b,<name>` for every vertex, in vertex order.
pub fn write_field_csv<W: Write, T: Display>(
    graph: &PrefractalGraph,
    name: &str,
    values: &[T],
    mut w: W,
) -> Result<()> {
    check_len(graph, values.len())?;
    writeln!(w, "a,b,{name}")?;
    for (i, v) in values.iter().enumerate() {
        let c = graph.coord(i as VertexId);
        writeln!(w, "{},{},{v}", c.a, c.b)?;
    }
    Ok(())
}

/// Several per-vertex columns side by side.
pub fn write_fields_csv<W: Write>(
    graph: &PrefractalGraph,
    columns: &[(&str, Vec<String>)],
    mut w: W,
) -> Result<()> {
    for (_, col) in columns {
        check_len(graph, col.len())?;
    }
    let names: Vec<&str> = columns.iter().map(|(n, _)| *n).collect();
    writeln!(w, "a,b,{}", names.join(","))?;
    for i in 0..graph.len() {
        let c = graph.coord(i as VertexId);
        let row: Vec<&str> = columns.iter().map(|(_, col)| col[i].as_str()).collect();
        writeln!(w, "{},{},{}", c.a, c.b, row.join(","))?;
    }
    Ok(())
}

/// Reads an `a,b,value` CSV back into a per-vertex vector; unlisted vertices get `default`.
pub fn read_field_csv<T: std::str::FromStr + Clone>(
    graph: &PrefractalGraph,
    text: &str,
    default: T,
) -> Result<Vec<T>> {
    let mut out = vec![default; graph.len()];
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::InvalidArgument(format!("line {}: expected a,b,value", lineno + 1));
        if parts.len() != 3 {
            return Err(bad());
        }
        let a = parts[0].parse().map_err(|_| bad())?;
        let b = parts[1].parse().map_err(|_| bad())?;
        let v = parts[2].parse().map_err(|_| bad())?;
        out[graph.require(LatticeCoord::new(a, b))? as usize] = v;
    }
    Ok(out)
}

fn check_len(graph: &PrefractalGraph, got: usize) -> Result<()> {
    if got == graph.len() {
        Ok(())
    } else {
        Err(Error::OverlayMismatch {
            expected: graph.len(),
            got,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Half;

    #[test]
    fn rotor_json_round_trip() {
        let g = PrefractalGraph::build(2, Half::Both).unwrap();
        let mut r = RotorConfig::unset(&g);
        r.set(g.require(LatticeCoord::new(4, 0)).unwrap(), 1);
        r.set(g.require(LatticeCoord::new(-1, 1)).unwrap(), 3);
        let bytes = rotors_json(&g, &r).unwrap();
        assert_eq!(String::from_utf8(bytes.clone()).unwrap(), "{\n  \"-1,1\": 3,\n  \"4,0\": 1\n}\n");
        assert_eq!(parse_rotors_json(&g, &bytes).unwrap(), r);
    }

    #[test]
    fn field_csv_round_trip() {
        let g = PrefractalGraph::build(1, Half::Plus).unwrap();
        let values: Vec<u32> = (0..g.len() as u32).collect();
        let mut buf = Vec::new();
        write_field_csv(&g, "height", &values, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("a,b,height\n0,0,0\n"));
        assert_eq!(read_field_csv(&g, &text, 0u32).unwrap(), values);
        assert!(write_field_csv(&g, "h", &values[1..], Vec::new()).is_err());
    }

    #[test]
    fn graph_json_shape() {
        let g = PrefractalGraph::build(0, Half::Plus).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&graph_json(&g).unwrap()).unwrap();
        assert_eq!(v["vertices"].as_array().unwrap().len(), 3);
        assert_eq!(v["edges"].as_array().unwrap().len(), 3);
        assert_eq!(v["half"], "plus");
    }
}
