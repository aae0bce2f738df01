//! CSV input and output.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so every
//! value parses back to the identical `f64`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::LandmarkConfig;

pub const SHAPE_HEADER: [&str; 4] = ["shape", "landmark", "coord", "value"];

/// One shape of a shape file.
#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    pub id: u64,
    pub config: LandmarkConfig,
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Parses shape-file CSV text; shapes are returned in increasing id order.
pub fn parse_shapes<R: std::io::Read>(reader: R) -> Result<Vec<Shape>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != SHAPE_HEADER {
        return Err(Error::Config(format!(
            "shape file header must be {}, found {}",
            SHAPE_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut cells: BTreeMap<u64, BTreeMap<(usize, usize), f64>> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Config(format!("shape file row {}: invalid {what}", line + 2));
        let shape: u64 = rec[0].parse().map_err(|_| bad("shape id"))?;
        let lm: usize = rec[1].parse().map_err(|_| bad("landmark index"))?;
        let coord: usize = rec[2].parse().map_err(|_| bad("coordinate index"))?;
        let value: f64 = rec[3].parse().map_err(|_| bad("value"))?;
        if !value.is_finite() {
            return Err(bad("value"));
        }
        if cells.entry(shape).or_default().insert((lm, coord), value).is_some() {
            return Err(Error::Config(format!(
                "shape file row {}: duplicate entry for shape {shape}, landmark {lm}, coordinate {coord}",
                line + 2
            )));
        }
    }
    if cells.is_empty() {
        return Err(Error::Config("shape file contains no shapes".into()));
    }
    let mut shapes = Vec::with_capacity(cells.len());
    for (id, entries) in cells {
        let n = entries.keys().map(|k| k.0).max().unwrap_or(0) + 1;
        let d = entries.keys().map(|k| k.1).max().unwrap_or(0) + 1;
        if entries.len() != n * d {
            return Err(Error::Config(format!(
                "shape {id} is incomplete: {} entries for {n} landmarks in dimension {d}",
                entries.len()
            )));
        }
        // BTreeMap order is (landmark, coord), matching the flat layout
        let q: Vec<f64> = entries.into_values().collect();
        shapes.push(Shape { id, config: LandmarkConfig::new(d, q)? });
    }
    Ok(shapes)
}

pub fn read_shapes(path: &Path) -> Result<Vec<Shape>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open shape file {}: {e}", path.display())))?;
    parse_shapes(file)
}

pub fn write_shapes(path: &Path, shapes: &[Shape]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SHAPE_HEADER)?;
    for s in shapes {
        let d = s.config.d();
        for (k, v) in s.config.as_slice().iter().enumerate() {
            w.write_record([s.id.to_string(), (k / d).to_string(), (k % d).to_string(), num(*v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes a CSV table with the given header and rows of already formatted cells.
pub struct Table {
    w: csv::Writer<std::fs::File>,
}

impl Table {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(header)?;
        Ok(Table { w })
    }

    pub fn row(&mut self, cells: &[String]) -> Result<()> {
        self.w.write_record(cells)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

pub fn fmt(v: f64) -> String {
    num(v)
}
