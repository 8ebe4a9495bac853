//! Plain-text checkpoint format:
//!
//! ```text
//! recforget-checkpoint v1
//! kind <wmf|bpr|lightgcn>
//! shape <num_users> <num_items> <dim>
//! u <v_0> ... <v_dim-1>        (num_users lines)
//! i <v_0> ... <v_dim-1>        (num_items lines)
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a save/load
//! cycle reproduces the table exactly on the same platform.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{EmbeddingTable, ModelKind};

const MAGIC: &str = "recforget-checkpoint v1";

pub fn write_checkpoint(kind: ModelKind, t: &EmbeddingTable) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(s, "kind {kind}");
    let _ = writeln!(s, "shape {} {} {}", t.num_users, t.num_items, t.dim);
    for (tag, rows, n) in [("u", &t.user_vecs, t.num_users), ("i", &t.item_vecs, t.num_items)] {
        for r in 0..n {
            s.push_str(tag);
            for x in &rows[r * t.dim..(r + 1) * t.dim] {
                let _ = write!(s, " {x:e}");
            }
            s.push('\n');
        }
    }
    s
}

pub fn read_checkpoint(text: &str) -> Result<(ModelKind, EmbeddingTable)> {
    let bad = |line: usize, msg: &str| Error::Parse {
        line,
        msg: msg.to_string(),
    };
    let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        _ => return Err(bad(1, "missing checkpoint header")),
    }
    let (n, kind_line) = lines.next().ok_or_else(|| bad(2, "missing kind"))?;
    let kind: ModelKind = kind_line
        .strip_prefix("kind ")
        .ok_or_else(|| bad(n, "expected `kind <name>`"))?
        .trim()
        .parse()?;
    let (n, shape_line) = lines.next().ok_or_else(|| bad(3, "missing shape"))?;
    let dims: Vec<usize> = shape_line
        .strip_prefix("shape ")
        .ok_or_else(|| bad(n, "expected `shape <users> <items> <dim>`"))?
        .split_whitespace()
        .map(|x| x.parse().map_err(|_| bad(n, "bad shape value")))
        .collect::<Result<_>>()?;
    let [nu, ni, dim] = dims[..] else {
        return Err(bad(n, "shape needs three values"));
    };
    let mut t = EmbeddingTable::zeros(nu, ni, dim);
    for (tag, rows, count) in [("u", &mut t.user_vecs, nu), ("i", &mut t.item_vecs, ni)] {
        for r in 0..count {
            let (n, line) = lines.next().ok_or_else(|| bad(0, "truncated checkpoint"))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(tag) {
                return Err(bad(n, "unexpected row tag"));
            }
            let vals: Vec<f64> = parts
                .map(|x| x.parse().map_err(|_| bad(n, "bad float")))
                .collect::<Result<_>>()?;
            if vals.len() != dim {
                return Err(bad(n, "row length differs from dim"));
            }
            rows[r * dim..(r + 1) * dim].copy_from_slice(&vals);
        }
    }
    Ok((kind, t))
}

pub fn save_checkpoint(path: impl AsRef<Path>, kind: ModelKind, t: &EmbeddingTable) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint(kind, t)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelKind, EmbeddingTable)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&text)
}
