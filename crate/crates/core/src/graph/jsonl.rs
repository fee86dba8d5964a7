//! One graph per line, UTF-8, `\n` separated.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Graph, GraphError};
use crate::io::write_atomic;

pub fn write_jsonl<W: Write>(graphs: &[Graph], mut out: W) -> Result<(), GraphError> {
    for g in graphs {
        serde_json::to_writer(&mut out, g).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<Graph>, GraphError> {
    let mut graphs = Vec::new();
    for (index, line) in input.lines().enumerate() {
        let line = line?;
        let number = index + 1;
        if line.trim().is_empty() {
            continue;
        }
        let graph: Graph = serde_json::from_str(&line).map_err(|e| GraphError::Parse {
            line: number,
            message: e.to_string(),
        })?;
        graph.validate().map_err(|message| GraphError::Parse {
            line: number,
            message,
        })?;
        graphs.push(graph);
    }
    Ok(graphs)
}

pub fn save_jsonl(graphs: &[Graph], path: &Path) -> Result<(), GraphError> {
    let mut buf = Vec::new();
    write_jsonl(graphs, BufWriter::new(&mut buf))?;
    write_atomic(path, &buf)?;
    Ok(())
}

pub fn load_jsonl(path: &Path) -> Result<Vec<Graph>, GraphError> {
    read_jsonl(BufReader::new(File::open(path)?))
}
