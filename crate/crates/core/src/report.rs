//! Coefficient report (`.rpt`): a flat, diff-friendly text format.
//!
//! ```text
//! # poro-report v1
//! command = cell elastic
//! geometry.porosity = 0.25
//! [block A0s] rows=6 cols=6
//! 1.5,0,0,0,0,0
//! ...
//! [end]
//! ```
//!
//! Scalar lines are `key = value`; keys are unique. Matrices are written as
//! blocks of comma-separated rows. Floats use the shortest representation
//! that round-trips, so identical runs give byte-identical reports. Lines
//! starting with `#` after the header are comments.

use crate::error::{Error, Result};
use crate::pde::tensor::{Mat3, Sym6};
use std::fmt::Write as _;
use std::path::Path;

pub const HEADER: &str = "# poro-report v1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub entries: Vec<(String, String)>,
    pub blocks: Vec<(String, Vec<Vec<f64>>)>,
}

/// Shortest round-trip formatting.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else if x == 0.0 || (1e-4..1e15).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    match s {
        "nan" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

pub fn mat3_rows(m: &Mat3) -> Vec<Vec<f64>> {
    m.iter().map(|r| r.to_vec()).collect()
}

pub fn sym6_rows(m: &Sym6) -> Vec<Vec<f64>> {
    m.0.iter().map(|r| r.to_vec()).collect()
}

pub fn rows_mat3(rows: &[Vec<f64>]) -> Option<Mat3> {
    if rows.len() != 3 || rows.iter().any(|r| r.len() != 3) {
        return None;
    }
    Some([[rows[0][0], rows[0][1], rows[0][2]], [rows[1][0], rows[1][1], rows[1][2]], [rows[2][0], rows[2][1], rows[2][2]]])
}

pub fn rows_sym6(rows: &[Vec<f64>]) -> Option<Sym6> {
    if rows.len() != 6 || rows.iter().any(|r| r.len() != 6) {
        return None;
    }
    let mut s = Sym6::zero();
    for (i, r) in rows.iter().enumerate() {
        s.0[i].copy_from_slice(r);
    }
    Some(s)
}

impl Report {
    pub fn new() -> Report {
        Report::default()
    }

    /// Sets a scalar entry, replacing an earlier value of the same key.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn set_f64(&mut self, key: impl Into<String>, value: f64) {
        self.set(key, fmt_f64(value));
    }

    pub fn block(&mut self, name: impl Into<String>, rows: Vec<Vec<f64>>) {
        let name = name.into();
        match self.blocks.iter_mut().find(|(n, _)| *n == name) {
            Some(b) => b.1 = rows,
            None => self.blocks.push((name, rows)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(parse_f64)
    }

    pub fn get_block(&self, name: &str) -> Option<&[Vec<f64>]> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, r)| r.as_slice())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(HEADER);
        s.push('\n');
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        for (name, rows) in &self.blocks {
            let cols = rows.first().map_or(0, Vec::len);
            let _ = writeln!(s, "[block {name}] rows={} cols={cols}", rows.len());
            for r in rows {
                let line: Vec<String> = r.iter().map(|&x| fmt_f64(x)).collect();
                s.push_str(&line.join(","));
                s.push('\n');
            }
            s.push_str("[end]\n");
        }
        s
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Report> {
        let err = |line: usize, msg: String| Error::Parse { source_name: source_name.to_string(), line, msg };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim_end() == HEADER => {}
            _ => return Err(err(1, format!("first line must be `{HEADER}`"))),
        }
        let mut rep = Report::new();
        while let Some((i, raw)) = lines.next() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("[block ") {
                let (name, dims) = rest.split_once(']').ok_or_else(|| err(i + 1, "unterminated block header".into()))?;
                let mut rows_n = None;
                let mut cols_n = None;
                for part in dims.split_whitespace() {
                    match part.split_once('=') {
                        Some(("rows", v)) => rows_n = v.parse::<usize>().ok(),
                        Some(("cols", v)) => cols_n = v.parse::<usize>().ok(),
                        _ => return Err(err(i + 1, format!("bad block attribute `{part}`"))),
                    }
                }
                let (rn, cn) = rows_n.zip(cols_n).ok_or_else(|| err(i + 1, "block needs rows= and cols=".into()))?;
                let mut rows = Vec::with_capacity(rn);
                loop {
                    let (j, l) = lines.next().ok_or_else(|| err(i + 1, format!("block `{name}` is not closed")))?;
                    let l = l.trim();
                    if l == "[end]" {
                        break;
                    }
                    let row: Vec<f64> =
                        l.split(',').map(|t| parse_f64(t.trim()).ok_or_else(|| err(j + 1, format!("bad number `{t}`")))).collect::<Result<_>>()?;
                    if row.len() != cn {
                        return Err(err(j + 1, format!("block `{name}` row has {} values, expected {cn}", row.len())));
                    }
                    rows.push(row);
                }
                if rows.len() != rn {
                    return Err(err(i + 1, format!("block `{name}` has {} rows, expected {rn}", rows.len())));
                }
                if rep.get_block(name).is_some() {
                    return Err(err(i + 1, format!("duplicate block `{name}`")));
                }
                rep.blocks.push((name.to_string(), rows));
                continue;
            }
            let (k, v) = line.split_once(" = ").ok_or_else(|| err(i + 1, format!("expected `key = value`, got `{line}`")))?;
            if rep.get(k).is_some() {
                return Err(err(i + 1, format!("duplicate key `{k}`")));
            }
            rep.entries.push((k.to_string(), v.to_string()));
        }
        Ok(rep)
    }

    pub fn load(path: &Path) -> Result<Report> {
        let text = std::fs::read_to_string(path).map_err(|err| Error::Io { path: path.display().to_string(), err })?;
        Report::parse(&text, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|err| Error::Io { path: path.display().to_string(), err })
    }

    /// Union of two reports. Keys or blocks present in both must agree.
    pub fn merge(&mut self, other: &Report) -> Result<()> {
        for (k, v) in &other.entries {
            match self.get(k) {
                Some(old) if old != v => return Err(Error::Invalid(format!("conflicting values for `{k}`: `{old}` vs `{v}`"))),
                Some(_) => {}
                None => self.entries.push((k.clone(), v.clone())),
            }
        }
        for (n, rows) in &other.blocks {
            match self.get_block(n) {
                Some(old) if old != rows.as_slice() => return Err(Error::Invalid(format!("conflicting contents for block `{n}`"))),
                Some(_) => {}
                None => self.blocks.push((n.clone(), rows.clone())),
            }
        }
        Ok(())
    }
}
