//! Text format for [`Grid3Field`] files.
//!
//! ```text
//! lsvcal-field 1
//! tag sigma2
//! dims <n_slices> <n_z> <n_v>
//! z <z_min> <dz>
//! v <v_min> <dv>
//! t <t_first> <dt>
//! data
//! <n_z values>        one line per Z node, slices in time order
//! ```
//!
//! Numbers use the shortest representation that parses back to the same
//! `f64`. Slice k sits at time `t_first + k·dt`.

use std::io::{BufRead, Write};

use crate::error::{LsvError, Result};
use crate::model::{FieldTag, Grid2D, Grid3Field};

const MAGIC: &str = "lsvcal-field 1";

/// A field together with the grid metadata stored in its header.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub field: Grid3Field,
    pub z_min: f64,
    pub dz: f64,
    pub v_min: f64,
    pub dv: f64,
    pub t_first: f64,
    pub dt: f64,
}

impl FieldFile {
    pub fn new(field: Grid3Field, grid: &Grid2D, t_first: f64, dt: f64) -> Self {
        Self {
            field,
            z_min: grid.z_min,
            dz: grid.dz,
            v_min: grid.v_min,
            dv: grid.dv,
            t_first,
            dt,
        }
    }

    /// Dimensions and spacings agree with `grid` to rounding.
    pub fn matches_grid(&self, grid: &Grid2D) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
        self.field.matches_grid(grid)
            && close(self.z_min, grid.z_min)
            && close(self.dz, grid.dz)
            && close(self.v_min, grid.v_min)
            && close(self.dv, grid.dv)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let f = &self.field;
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "tag {}", f.tag.as_str())?;
        writeln!(w, "dims {} {} {}", f.n_slices, f.n_z, f.n_v)?;
        writeln!(w, "z {:?} {:?}", self.z_min, self.dz)?;
        writeln!(w, "v {:?} {:?}", self.v_min, self.dv)?;
        writeln!(w, "t {:?} {:?}", self.t_first, self.dt)?;
        writeln!(w, "data")?;
        let mut line = String::new();
        for row in f.data.chunks(f.n_v) {
            line.clear();
            for (n, x) in row.iter().enumerate() {
                if n > 0 {
                    line.push(' ');
                }
                line.push_str(&format!("{x:?}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines().enumerate().map(|(n, l)| (n + 1, l));
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((n, Ok(l))) => Ok((n, l)),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(LsvError::Parse {
                    line: 0,
                    message: format!("unexpected end of file, expected {what}"),
                }),
            }
        };
        let (n, magic) = next("header")?;
        if magic.trim() != MAGIC {
            return Err(parse_err(n, format!("expected '{MAGIC}'")));
        }
        let (n, l) = next("tag")?;
        let tag = keyed(n, &l, "tag", 1)?;
        let tag = FieldTag::parse(tag[0]).ok_or_else(|| parse_err(n, format!("unknown tag '{}'", tag[0])))?;
        let (n, l) = next("dims")?;
        let dims: Vec<usize> = keyed(n, &l, "dims", 3)?
            .into_iter()
            .map(|s| s.parse().map_err(|_| parse_err(n, format!("bad dimension '{s}'"))))
            .collect::<Result<_>>()?;
        let mut pair = |key: &str| -> Result<(f64, f64)> {
            let (n, l) = next(key)?;
            let v = numbers(n, keyed(n, &l, key, 2)?)?;
            Ok((v[0], v[1]))
        };
        let (z_min, dz) = pair("z")?;
        let (v_min, dv) = pair("v")?;
        let (t_first, dt) = pair("t")?;
        let (n, l) = next("data")?;
        if l.trim() != "data" {
            return Err(parse_err(n, "expected 'data'".into()));
        }
        let (n_slices, n_z, n_v) = (dims[0], dims[1], dims[2]);
        let mut data = Vec::with_capacity(n_slices * n_z * n_v);
        for _ in 0..n_slices * n_z {
            let (n, l) = next("data row")?;
            let row = numbers(n, l.split_whitespace().collect())?;
            if row.len() != n_v {
                return Err(parse_err(n, format!("expected {n_v} values, found {}", row.len())));
            }
            data.extend(row);
        }
        Ok(Self {
            field: Grid3Field {
                tag,
                n_slices,
                n_z,
                n_v,
                data,
            },
            z_min,
            dz,
            v_min,
            dv,
            t_first,
            dt,
        })
    }
}

fn parse_err(line: usize, message: String) -> LsvError {
    LsvError::Parse { line, message }
}

fn keyed<'a>(n: usize, line: &'a str, key: &str, count: usize) -> Result<Vec<&'a str>> {
    let mut it = line.split_whitespace();
    if it.next() != Some(key) {
        return Err(parse_err(n, format!("expected '{key}'")));
    }
    let rest: Vec<&str> = it.collect();
    if rest.len() != count {
        return Err(parse_err(n, format!("'{key}' takes {count} values, found {}", rest.len())));
    }
    Ok(rest)
}

fn numbers(n: usize, items: Vec<&str>) -> Result<Vec<f64>> {
    items
        .into_iter()
        .map(|s| s.parse::<f64>().map_err(|_| parse_err(n, format!("bad number '{s}'"))))
        .collect()
}
