//! Plain-text description of a graph family and, optionally, agent blocks.
//!
//! ```text
//! # comment
//! n 4
//! bounds 2 4          # optional; exact bounds are computed when absent
//! graph
//! e 1 2               # vertices are 1-based
//! e 2 3
//! graph
//! ...
//! blocks              # optional
//! dims 1 1 1          # n_x n_w n_z
//! Ad 1                # row-major entries; omitted blocks are zero
//! Ac -0.1
//! Bd 1
//! Cp 1
//! ```

use std::fmt::Write as _;

use swmas_core::graphs::{Graph, GraphError, GraphFamily};
use swmas_core::model::{BlockTriple, DecomposableMatrices, ModelError};
use swmas_core::Matrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn syntax(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Syntax {
        line,
        message: message.into(),
    }
}

/// Parsed contents of a family or model file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub n_vertices: usize,
    pub bounds: Option<(f64, f64)>,
    pub graphs: Vec<Graph>,
    pub blocks: Option<DecomposableMatrices>,
}

const BLOCK_NAMES: [&str; 12] = [
    "Ad", "Ac", "Ap", "Bd", "Bc", "Bp", "Cd", "Cc", "Cp", "Dd", "Dc", "Dp",
];

enum Section {
    Header,
    Graph,
    Blocks,
}

pub fn parse(text: &str) -> Result<ModelFile, FormatError> {
    let mut n_vertices = None;
    let mut bounds = None;
    let mut edge_lists: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
    let mut dims: Option<(usize, usize, usize)> = None;
    let mut entries: [Option<Vec<f64>>; 12] = Default::default();
    let mut saw_blocks = false;
    let mut section = Section::Header;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut words = content.split_whitespace();
        let key = words.next().unwrap_or_default();
        let rest: Vec<&str> = words.collect();
        match (key, &section) {
            ("n", Section::Header) => {
                let [v] = rest[..] else {
                    return Err(syntax(line, "expected `n <N>`"));
                };
                n_vertices = Some(parse_num::<usize>(v, line)?);
            }
            ("bounds", Section::Header) => {
                let [lo, hi] = rest[..] else {
                    return Err(syntax(line, "expected `bounds <lo> <hi>`"));
                };
                bounds = Some((parse_num(lo, line)?, parse_num(hi, line)?));
            }
            ("graph", Section::Header | Section::Graph) => {
                if !rest.is_empty() {
                    return Err(syntax(line, "`graph` takes no arguments"));
                }
                edge_lists.push((line, Vec::new()));
                section = Section::Graph;
            }
            ("e", Section::Graph) => {
                let [a, b] = rest[..] else {
                    return Err(syntax(line, "expected `e <i> <j>`"));
                };
                let (a, b): (usize, usize) = (parse_num(a, line)?, parse_num(b, line)?);
                if a == 0 || b == 0 {
                    return Err(syntax(line, "vertices are numbered from 1"));
                }
                edge_lists
                    .last_mut()
                    .expect("inside graph")
                    .1
                    .push((a - 1, b - 1));
            }
            ("blocks", Section::Header | Section::Graph) => {
                if saw_blocks {
                    return Err(syntax(line, "duplicate `blocks` section"));
                }
                saw_blocks = true;
                section = Section::Blocks;
            }
            ("dims", Section::Blocks) => {
                let [x, w, z] = rest[..] else {
                    return Err(syntax(line, "expected `dims <n_x> <n_w> <n_z>`"));
                };
                dims = Some((
                    parse_num(x, line)?,
                    parse_num(w, line)?,
                    parse_num(z, line)?,
                ));
            }
            (name, Section::Blocks) if BLOCK_NAMES.contains(&name) => {
                let k = BLOCK_NAMES.iter().position(|b| *b == name).unwrap();
                if entries[k].is_some() {
                    return Err(syntax(line, format!("block {name} given twice")));
                }
                let values = rest
                    .iter()
                    .map(|v| parse_num::<f64>(v, line))
                    .collect::<Result<Vec<_>, _>>()?;
                entries[k] = Some(values);
            }
            (other, _) => {
                return Err(syntax(line, format!("unexpected `{other}` here")));
            }
        }
    }

    let n_vertices = n_vertices.ok_or_else(|| syntax(1, "missing `n <N>` line"))?;
    let graphs = edge_lists
        .into_iter()
        .map(|(line, edges)| {
            Graph::new(n_vertices, edges).map_err(|e| syntax(line, format!("graph: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let blocks = if saw_blocks {
        let (n_x, n_w, n_z) = dims.ok_or_else(|| syntax(1, "`blocks` needs a `dims` line"))?;
        let shape = |k: usize| match k / 3 {
            0 => (n_x, n_x),
            1 => (n_x, n_w),
            2 => (n_z, n_x),
            _ => (n_z, n_w),
        };
        let mut mats = Vec::with_capacity(12);
        for (k, values) in entries.into_iter().enumerate() {
            let (r, c) = shape(k);
            mats.push(match values {
                None => Matrix::zeros(r, c),
                Some(v) if v.len() == r * c => Matrix::from_vec(r, c, v),
                Some(v) => {
                    return Err(syntax(
                        1,
                        format!(
                            "block {} needs {} entries, got {}",
                            BLOCK_NAMES[k],
                            r * c,
                            v.len()
                        ),
                    ))
                }
            });
        }
        let mut it = mats.into_iter();
        let mut triple =
            || BlockTriple::new(it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
        let (a, b, c, d) = (triple(), triple(), triple(), triple());
        Some(DecomposableMatrices::new(a, b, c, d)?)
    } else {
        None
    };

    Ok(ModelFile {
        n_vertices,
        bounds,
        graphs,
        blocks,
    })
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T, FormatError> {
    s.parse()
        .map_err(|_| syntax(line, format!("cannot parse `{s}` as a number")))
}

impl ModelFile {
    /// Family with the file's bounds; exact bounds when the file has none.
    /// With `strict`, bounds given in the file must hold for every graph.
    pub fn family(&self, strict: bool) -> Result<GraphFamily, FormatError> {
        let graphs = self.graphs.clone();
        Ok(match self.bounds {
            None => GraphFamily::with_exact_bounds(graphs)?,
            Some((lo, hi)) if strict => GraphFamily::new(graphs, lo, hi)?,
            Some((lo, hi)) => GraphFamily::with_configured_bounds(graphs, lo, hi)?,
        })
    }
}

/// Writes a family in the same format; `parse` reads it back unchanged.
pub fn write_family(family: &GraphFamily, with_bounds: bool) -> String {
    let mut out = String::new();
    writeln!(out, "n {}", family.n_vertices()).unwrap();
    if with_bounds {
        writeln!(out, "bounds {} {}", family.lambda_lo(), family.lambda_hi()).unwrap();
    }
    for g in family.graphs() {
        out.push_str("graph\n");
        for e in g.edges() {
            writeln!(out, "e {} {}", e.lo() + 1, e.hi() + 1).unwrap();
        }
    }
    out
}

/// The `blocks` section for `blocks`, all twelve matrices written out.
pub fn write_blocks(blocks: &DecomposableMatrices) -> String {
    let mut out = String::from("blocks\n");
    writeln!(
        out,
        "dims {} {} {}",
        blocks.n_x(),
        blocks.n_w(),
        blocks.n_z()
    )
    .unwrap();
    let triples = [&blocks.a, &blocks.b, &blocks.c, &blocks.d];
    for (k, name) in BLOCK_NAMES.iter().enumerate() {
        let t = triples[k / 3];
        let m = [&t.decoupled, &t.coupled, &t.pattern][k % 3];
        out.push_str(name);
        for v in m.as_slice() {
            write!(out, " {v}").unwrap();
        }
        out.push('\n');
    }
    out
}
