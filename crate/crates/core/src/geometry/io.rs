//! Readers and writers for OFF, OBJ (`v`/`f` records only) and ASCII PLY.
//!
//! Coordinates are written with 17 significant digits so that a save/load
//! round trip reproduces every `f64` exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::surface::{Surface, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    Off,
    Obj,
    Ply,
    Auto,
}

impl FromStr for MeshFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "off" => Ok(Self::Off),
            "obj" => Ok(Self::Obj),
            "ply" => Ok(Self::Ply),
            "auto" => Ok(Self::Auto),
            other => Err(Error::InvalidInput(format!("unknown mesh format '{other}'"))),
        }
    }
}

impl MeshFormat {
    fn resolve(self, path: &Path) -> Result<Self> {
        if self != Self::Auto {
            return Ok(self);
        }
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        ext.parse::<MeshFormat>()
            .ok()
            .filter(|f| *f != Self::Auto)
            .ok_or_else(|| {
                Error::InvalidInput(format!("cannot infer mesh format from {}", path.display()))
            })
    }
}

pub fn load_surface(path: impl AsRef<Path>, format: MeshFormat) -> Result<Surface> {
    let path = path.as_ref();
    let format = format.resolve(path)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("surface")
        .to_string();
    let (vertices, faces) = match format {
        MeshFormat::Off => parse_off(&text)?,
        MeshFormat::Obj => parse_obj(&text)?,
        MeshFormat::Ply => parse_ply(&text)?,
        MeshFormat::Auto => unreachable!("resolved above"),
    };
    Surface::new(id, vertices, faces)
}

pub fn save_surface(surface: &Surface, path: impl AsRef<Path>, format: MeshFormat) -> Result<()> {
    let path = path.as_ref();
    let text = match format.resolve(path)? {
        MeshFormat::Off => write_off(surface),
        MeshFormat::Obj => write_obj(surface),
        MeshFormat::Ply => write_ply(surface),
        MeshFormat::Auto => unreachable!("resolved above"),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn fmt_coord(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_off(s: &Surface) -> String {
    let mut out = String::with_capacity(64 * s.n_vertices());
    writeln!(out, "OFF").unwrap();
    writeln!(out, "{} {} 0", s.n_vertices(), s.n_faces()).unwrap();
    for v in s.vertices() {
        writeln!(out, "{} {} {}", fmt_coord(v.x), fmt_coord(v.y), fmt_coord(v.z)).unwrap();
    }
    for f in s.faces() {
        writeln!(out, "3 {} {} {}", f[0], f[1], f[2]).unwrap();
    }
    out
}

pub fn write_obj(s: &Surface) -> String {
    let mut out = String::with_capacity(64 * s.n_vertices());
    for v in s.vertices() {
        writeln!(out, "v {} {} {}", fmt_coord(v.x), fmt_coord(v.y), fmt_coord(v.z)).unwrap();
    }
    for f in s.faces() {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    out
}

pub fn write_ply(s: &Surface) -> String {
    let mut out = String::with_capacity(64 * s.n_vertices());
    out.push_str("ply\nformat ascii 1.0\n");
    writeln!(out, "element vertex {}", s.n_vertices()).unwrap();
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    writeln!(out, "element face {}", s.n_faces()).unwrap();
    out.push_str("property list uchar int vertex_indices\nend_header\n");
    for v in s.vertices() {
        writeln!(out, "{} {} {}", fmt_coord(v.x), fmt_coord(v.y), fmt_coord(v.z)).unwrap();
    }
    for f in s.faces() {
        writeln!(out, "3 {} {} {}", f[0], f[1], f[2]).unwrap();
    }
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_num<T: FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.parse::<T>()
        .map_err(|_| parse_err(line, format!("cannot parse '{tok}'")))
}

fn parse_point(toks: &[&str], line: usize) -> Result<Vec3> {
    if toks.len() < 3 {
        return Err(parse_err(line, "expected three coordinates"));
    }
    let p = Vec3::new(
        parse_num(toks[0], line)?,
        parse_num(toks[1], line)?,
        parse_num(toks[2], line)?,
    );
    if !p.iter().all(|c| c.is_finite()) {
        return Err(parse_err(line, "non-finite coordinate"));
    }
    Ok(p)
}

/// Fan-triangulate a polygon, checking index range.
fn push_polygon(
    faces: &mut Vec<[usize; 3]>,
    poly: &[usize],
    n_vertices: usize,
    line: usize,
) -> Result<()> {
    if poly.len() < 3 {
        return Err(parse_err(line, "face with fewer than three vertices"));
    }
    if let Some(&bad) = poly.iter().find(|&&i| i >= n_vertices) {
        return Err(parse_err(
            line,
            format!("face index {bad} out of range (n = {n_vertices})"),
        ));
    }
    for k in 1..poly.len() - 1 {
        faces.push([poly[0], poly[k], poly[k + 1]]);
    }
    Ok(())
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

pub fn parse_off(text: &str) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    let mut lines = content_lines(text);
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let mut toks: Vec<&str> = header.split_whitespace().collect();
    if !toks[0].ends_with("OFF") {
        return Err(parse_err(hl, format!("expected OFF header, found '{}'", toks[0])));
    }
    toks.remove(0);
    let count_line = if toks.is_empty() {
        let (cl, counts) = lines
            .next()
            .ok_or_else(|| parse_err(hl + 1, "missing element counts"))?;
        toks = counts.split_whitespace().collect();
        cl
    } else {
        hl
    };
    if toks.len() < 2 {
        return Err(parse_err(count_line, "expected vertex and face counts"));
    }
    let nv: usize = parse_num(toks[0], count_line)?;
    let nf: usize = parse_num(toks[1], count_line)?;

    let mut vertices = Vec::with_capacity(nv);
    let mut last = count_line;
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| {
            parse_err(
                last + 1,
                format!("header declares {nv} vertices but the file ends after {}", vertices.len()),
            )
        })?;
        let t: Vec<&str> = l.split_whitespace().collect();
        vertices.push(parse_point(&t, ln)?);
        last = ln;
    }
    let mut faces = Vec::with_capacity(nf);
    for read in 0..nf {
        let (ln, l) = lines.next().ok_or_else(|| {
            parse_err(
                last + 1,
                format!("header declares {nf} faces but the file ends after {read}"),
            )
        })?;
        let t: Vec<&str> = l.split_whitespace().collect();
        let count: usize = parse_num(t[0], ln)?;
        if t.len() < count + 1 {
            return Err(parse_err(ln, format!("face lists {count} indices but has {}", t.len() - 1)));
        }
        let poly = t[1..=count]
            .iter()
            .map(|s| parse_num::<usize>(s, ln))
            .collect::<Result<Vec<_>>>()?;
        push_polygon(&mut faces, &poly, nv, ln)?;
        last = ln;
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(
            ln,
            format!("unexpected data beyond the {nv} vertices and {nf} faces declared in the header"),
        ));
    }
    Ok((vertices, faces))
}

pub fn parse_obj(text: &str) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    let mut vertices = Vec::new();
    let mut polys: Vec<(usize, Vec<i64>)> = Vec::new();
    for (ln, l) in content_lines(text) {
        let mut t = l.split_whitespace();
        match t.next() {
            Some("v") => {
                let rest: Vec<&str> = t.collect();
                vertices.push(parse_point(&rest, ln)?);
            }
            Some("f") => {
                let idx = t
                    .map(|tok| parse_num::<i64>(tok.split('/').next().unwrap_or(""), ln))
                    .collect::<Result<Vec<_>>>()?;
                polys.push((ln, idx));
            }
            _ => {}
        }
    }
    let n = vertices.len();
    let mut faces = Vec::new();
    for (ln, idx) in polys {
        let poly = idx
            .iter()
            .map(|&i| {
                let r = if i > 0 { i - 1 } else { n as i64 + i };
                usize::try_from(r).map_err(|_| parse_err(ln, format!("face index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        push_polygon(&mut faces, &poly, n, ln)?;
    }
    Ok((vertices, faces))
}

pub fn parse_ply(text: &str) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(1, "missing 'ply' magic")),
    }
    let mut nv = 0usize;
    let mut nf = 0usize;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut current = String::new();
    let mut header_end = 0;
    for (ln, l) in lines.by_ref() {
        let t: Vec<&str> = l.split_whitespace().collect();
        match t.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(parse_err(ln, format!("unsupported PLY format '{other}'")));
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                current = name.to_string();
                let c: usize = parse_num(count, ln)?;
                match *name {
                    "vertex" => nv = c,
                    "face" => nf = c,
                    _ if c == 0 => {}
                    other => return Err(parse_err(ln, format!("unsupported element '{other}'"))),
                }
            }
            ["property", "list", ..] => {}
            ["property", _, name] if current == "vertex" => vertex_props.push(name.to_string()),
            ["property", ..] => {}
            ["end_header"] => {
                header_end = ln;
                break;
            }
            _ => return Err(parse_err(ln, format!("unexpected header line '{l}'"))),
        }
    }
    if header_end == 0 {
        return Err(parse_err(1, "missing end_header"));
    }
    let pos = |name: &str| -> Result<usize> {
        vertex_props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| parse_err(header_end, format!("vertex property '{name}' missing")))
    };
    let (ix, iy, iz) = (pos("x")?, pos("y")?, pos("z")?);
    let mut body = lines.filter(|(_, l)| !l.is_empty());
    let mut vertices = Vec::with_capacity(nv);
    let mut last = header_end;
    for _ in 0..nv {
        let (ln, l) = body
            .next()
            .ok_or_else(|| parse_err(last + 1, format!("expected {nv} vertices")))?;
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() < vertex_props.len() {
            return Err(parse_err(ln, "too few vertex properties"));
        }
        vertices.push(parse_point(&[t[ix], t[iy], t[iz]], ln)?);
        last = ln;
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = body
            .next()
            .ok_or_else(|| parse_err(last + 1, format!("expected {nf} faces")))?;
        let t: Vec<&str> = l.split_whitespace().collect();
        let count: usize = parse_num(t[0], ln)?;
        if t.len() < count + 1 {
            return Err(parse_err(ln, "face list shorter than its count"));
        }
        let poly = t[1..=count]
            .iter()
            .map(|s| parse_num::<usize>(s, ln))
            .collect::<Result<Vec<_>>>()?;
        push_polygon(&mut faces, &poly, nv, ln)?;
        last = ln;
    }
    if let Some((ln, _)) = body.next() {
        return Err(parse_err(ln, "unexpected data after the declared elements"));
    }
    Ok((vertices, faces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::{icosphere, tetrahedron};

    #[test]
    fn off_tetrahedron() {
        let text = "OFF\n4 4 6\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n";
        let (v, f) = parse_off(text).unwrap();
        assert_eq!((v.len(), f.len()), (4, 4));
    }

    #[test]
    fn off_count_mismatch_names_line() {
        let text = "OFF\n4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n3 0 1 3\n";
        match parse_off(text) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 9);
                assert!(message.contains("4 faces"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let extra = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n3 0 1 2\n";
        assert!(matches!(parse_off(extra), Err(Error::Parse { line: 7, .. })));
    }

    #[test]
    fn off_bad_index_and_nan() {
        let text = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 5\n";
        assert!(matches!(parse_off(text), Err(Error::Parse { line: 6, .. })));
        let text = "OFF\n3 1 0\n0 0 0\nnan 0 0\n0 1 0\n3 0 1 2\n";
        assert!(matches!(parse_off(text), Err(Error::Parse { line: 4, .. })));
    }

    #[test]
    fn obj_with_slashes_and_negatives() {
        let text = "# cube corner\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 -1//1\n";
        let (v, f) = parse_obj(text).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(f, vec![[0, 1, 2]]);
    }

    #[test]
    fn round_trip_all_formats() {
        let dir = tempfile::tempdir().unwrap();
        let s = icosphere(2, 1.3);
        for (name, fmt) in [("a.off", MeshFormat::Off), ("a.obj", MeshFormat::Obj), ("a.ply", MeshFormat::Ply)] {
            let p = dir.path().join(name);
            save_surface(&s, &p, fmt).unwrap();
            let back = load_surface(&p, MeshFormat::Auto).unwrap();
            assert_eq!(back.vertices(), s.vertices());
            assert_eq!(back.faces(), s.faces());
        }
    }

    #[test]
    fn cloud_saved_as_off_reloads_as_cloud() {
        let dir = tempfile::tempdir().unwrap();
        let c = tetrahedron().to_cloud();
        let p = dir.path().join("c.off");
        save_surface(&c, &p, MeshFormat::Off).unwrap();
        let back = load_surface(&p, MeshFormat::Off).unwrap();
        assert!(!back.is_mesh());
        assert_eq!(back.n_vertices(), 4);
    }

    #[test]
    fn unwritable_path_errors() {
        let s = tetrahedron();
        let err = save_surface(&s, "/nonexistent-dir/x/y.off", MeshFormat::Off);
        assert!(matches!(err, Err(Error::Io { .. })));
    }
}
