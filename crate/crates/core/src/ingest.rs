//! Readers and writers for observation and association files.
//!
//! Point clouds come as ASCII PLY (a `vertex` element with `x`, `y`, `z`
//! properties) or CSV `x,y,z`. Lines are CSV `px,py,pz,vx,vy,vz`, planes
//! CSV `nx,ny,nz,d`, associations CSV `i,j[,inlier]`. CSV files may start
//! with a header row and may contain `#` comment lines.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::invariants::{AssociationSet, LineSet, PlaneSet, PointSet};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Reads the numeric rows of a CSV file. A first row that does not parse
/// as numbers is treated as a header.
fn read_csv_rows<R: Read>(reader: R, min_cols: usize, max_cols: usize) -> Result<Vec<Vec<String>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(idx + 1, e.to_string()))?;
        let line = rec.position().map_or(idx + 1, |p| p.line() as usize);
        let fields: Vec<String> = rec.iter().map(str::to_owned).collect();
        if fields.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rows.is_empty() && idx == 0 && fields[0].parse::<f64>().is_err() {
            continue;
        }
        if fields.len() < min_cols || fields.len() > max_cols {
            return Err(parse_err(
                line,
                format!(
                    "expected {min_cols}..={max_cols} columns, got {}",
                    fields.len()
                ),
            ));
        }
        rows.push(fields);
    }
    Ok(rows)
}

fn num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse()
        .map_err(|_| parse_err(line, format!("bad number '{s}'")))
}

fn vec3(f: &[String], line: usize) -> Result<Vector3<f64>> {
    Ok(Vector3::new(
        num(&f[0], line)?,
        num(&f[1], line)?,
        num(&f[2], line)?,
    ))
}

pub fn read_points_csv<R: Read>(reader: R) -> Result<PointSet> {
    let rows = read_csv_rows(reader, 3, 3)?;
    let pts = rows
        .iter()
        .enumerate()
        .map(|(k, r)| vec3(r, k + 1))
        .collect::<Result<_>>()?;
    Ok(PointSet::new(pts))
}

pub fn read_lines_csv<R: Read>(reader: R) -> Result<LineSet> {
    let rows = read_csv_rows(reader, 6, 6)?;
    let mut points = Vec::with_capacity(rows.len());
    let mut dirs = Vec::with_capacity(rows.len());
    for (k, r) in rows.iter().enumerate() {
        points.push(vec3(&r[..3], k + 1)?);
        dirs.push(vec3(&r[3..], k + 1)?);
    }
    LineSet::new(points, dirs)
}

pub fn read_planes_csv<R: Read>(reader: R) -> Result<PlaneSet> {
    let rows = read_csv_rows(reader, 4, 4)?;
    let mut normals = Vec::with_capacity(rows.len());
    let mut offsets = Vec::with_capacity(rows.len());
    for (k, r) in rows.iter().enumerate() {
        normals.push(vec3(&r[..3], k + 1)?);
        offsets.push(num(&r[3], k + 1)?);
    }
    PlaneSet::new(normals, offsets)
}

fn parse_flag(s: &str, line: usize) -> Result<bool> {
    match s {
        "1" | "true" | "True" | "TRUE" => Ok(true),
        "0" | "false" | "False" | "FALSE" => Ok(false),
        _ => Err(parse_err(line, format!("bad inlier flag '{s}'"))),
    }
}

/// `i,j` rows, optionally with a third inlier column. The inlier column must
/// be present on every row or on none.
pub fn read_associations_csv<R: Read>(reader: R) -> Result<AssociationSet> {
    let rows = read_csv_rows(reader, 2, 3)?;
    let labelled = rows.first().is_some_and(|r| r.len() == 3);
    let mut pairs = Vec::with_capacity(rows.len());
    let mut truth = Vec::with_capacity(rows.len());
    for (k, r) in rows.iter().enumerate() {
        if (r.len() == 3) != labelled {
            return Err(parse_err(
                k + 1,
                "inlier column must be present on all rows or none",
            ));
        }
        pairs.push((num(&r[0], k + 1)?, num(&r[1], k + 1)?));
        if labelled {
            truth.push(parse_flag(&r[2], k + 1)?);
        }
    }
    if labelled {
        AssociationSet::with_truth(pairs, truth)
    } else {
        AssociationSet::new(pairs)
    }
}

/// ASCII PLY reader. Only the `vertex` element is read; other elements are
/// skipped. Binary encodings are rejected.
pub fn read_points_ply<R: BufRead>(reader: R) -> Result<PointSet> {
    let mut lines = reader.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, l)) => Ok((i + 1, l?)),
            None => Err(parse_err(
                0,
                format!("unexpected end of file reading {what}"),
            )),
        }
    };

    let (_, magic) = next("magic")?;
    if magic.trim() != "ply" {
        return Err(parse_err(1, "missing 'ply' magic"));
    }
    // (element name, count, property names)
    let mut elements: Vec<(String, usize, Vec<String>)> = Vec::new();
    loop {
        let (ln, line) = next("header")?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => {}
            ["format", fmt, _] => {
                return Err(parse_err(ln, format!("unsupported PLY format '{fmt}'")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = num(count, ln)?;
                elements.push((name.to_string(), count, Vec::new()));
            }
            ["property", "list", ..] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(ln, "property before element"))?;
                el.2.push(toks.last().unwrap().to_string());
            }
            ["property", _ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(ln, "property before element"))?;
                el.2.push(name.to_string());
            }
            ["end_header"] => break,
            _ => return Err(parse_err(ln, format!("unrecognized header line '{line}'"))),
        }
    }

    let mut points = None;
    for (name, count, props) in &elements {
        if name != "vertex" {
            for _ in 0..*count {
                next(name)?;
            }
            continue;
        }
        let col = |axis: &str| {
            props
                .iter()
                .position(|p| p == axis)
                .ok_or_else(|| parse_err(0, format!("vertex element lacks '{axis}'")))
        };
        let (cx, cy, cz) = (col("x")?, col("y")?, col("z")?);
        let mut pts = Vec::with_capacity(*count);
        for _ in 0..*count {
            let (ln, line) = next("vertex")?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() < props.len() {
                return Err(parse_err(ln, "short vertex line"));
            }
            pts.push(Vector3::new(
                num(toks[cx], ln)?,
                num(toks[cy], ln)?,
                num(toks[cz], ln)?,
            ));
        }
        points = Some(pts);
        break;
    }
    points
        .map(PointSet::new)
        .ok_or_else(|| parse_err(0, "no vertex element"))
}

pub fn write_points_ply<W: Write>(points: &PointSet, mut w: W) -> Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", points.len())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    writeln!(w, "end_header")?;
    for p in &points.points {
        writeln!(w, "{:?} {:?} {:?}", p.x, p.y, p.z)?;
    }
    Ok(())
}

pub fn write_points_csv<W: Write>(points: &PointSet, mut w: W) -> Result<()> {
    for p in &points.points {
        writeln!(w, "{:?},{:?},{:?}", p.x, p.y, p.z)?;
    }
    Ok(())
}

pub fn write_associations_csv<W: Write>(assoc: &AssociationSet, mut w: W) -> Result<()> {
    for (k, &(i, j)) in assoc.pairs().iter().enumerate() {
        match assoc.truth() {
            Some(t) => writeln!(w, "{i},{j},{}", u8::from(t[k]))?,
            None => writeln!(w, "{i},{j}")?,
        }
    }
    Ok(())
}

/// Reads a point cloud, choosing the format from the file extension
/// (`.ply`, otherwise CSV).
pub fn load_points(path: &Path) -> Result<PointSet> {
    let file = File::open(path)?;
    let is_ply = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("ply"));
    if is_ply {
        read_points_ply(BufReader::new(file))
    } else {
        read_points_csv(file)
    }
}
