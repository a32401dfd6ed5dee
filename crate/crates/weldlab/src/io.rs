//! Shared file formats.
//!
//! Fields: a text header of `key value` lines closed by `data`, then the
//! row-major values as little-endian f64. Driving records and curves: a text
//! header closed by `data`, then CSV rows. Floats are printed in shortest
//! round-trip form, so every file re-reads bit-exactly.

use crate::conformal::{DomainId, GridSpec};
use crate::error::{Error, Result};
use crate::gff::{FieldSample, Normalization};
use crate::qsurface::QuantumSurface;
use crate::sle::{CurveTrace, DrivingRecord, Engine, SleParams, Stop};
use crate::C64;
use serde_json::json;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

const FIELD_MAGIC: &str = "weldlab-field 1";
const DRIVING_MAGIC: &str = "weldlab-driving 1";
const CURVE_MAGIC: &str = "weldlab-curve 1";

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| fmt_err(format!("bad float '{s}'")))
}

/// Reads `key value` lines up to `data`; checks the magic line.
fn read_header<R: BufRead>(r: &mut R, magic: &str) -> Result<Vec<(String, String)>> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != magic {
        return Err(fmt_err(format!("expected '{magic}', found '{}'", line.trim_end())));
    }
    let mut out = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(fmt_err("header ended without 'data'"));
        }
        let l = line.trim_end_matches(['\n', '\r']);
        if l == "data" {
            return Ok(out);
        }
        let (k, v) = l.split_once(' ').unwrap_or((l, ""));
        out.push((k.to_string(), v.to_string()));
    }
}

fn get<'a>(h: &'a [(String, String)], key: &str) -> Result<&'a str> {
    h.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str()).ok_or_else(|| fmt_err(format!("missing header key '{key}'")))
}

pub fn write_field<W: Write>(f: &FieldSample, w: &mut W) -> Result<()> {
    let g = &f.grid;
    writeln!(w, "{FIELD_MAGIC}")?;
    writeln!(w, "domain {}", g.domain.tag())?;
    writeln!(w, "nx {}", g.nx)?;
    writeln!(w, "ny {}", g.ny)?;
    writeln!(w, "bbox {} {} {} {}", g.bbox.x0, g.bbox.x1, g.bbox.y0, g.bbox.y1)?;
    match f.gamma {
        Some(x) => writeln!(w, "gamma {x}")?,
        None => writeln!(w, "gamma none")?,
    }
    writeln!(w, "normalization {}", f.normalization.tag())?;
    writeln!(w, "seed {}", f.seed)?;
    writeln!(w, "log_weight {}", f.log_weight)?;
    writeln!(w, "grid {}", serde_json::to_string(g).map_err(|e| fmt_err(e.to_string()))?)?;
    writeln!(w, "data")?;
    let mut buf = Vec::with_capacity(8 * f.values.len());
    for v in &f.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_field<R: Read>(r: R) -> Result<FieldSample> {
    let mut r = BufReader::new(r);
    let h = read_header(&mut r, FIELD_MAGIC)?;
    let grid: GridSpec = serde_json::from_str(get(&h, "grid")?).map_err(|e| fmt_err(e.to_string()))?;
    let domain = DomainId::parse(get(&h, "domain")?).ok_or_else(|| fmt_err("unknown domain"))?;
    let nx: usize = get(&h, "nx")?.parse().map_err(|_| fmt_err("bad nx"))?;
    let ny: usize = get(&h, "ny")?.parse().map_err(|_| fmt_err("bad ny"))?;
    if domain != grid.domain || nx != grid.nx || ny != grid.ny {
        return Err(fmt_err("header disagrees with grid record"));
    }
    let gamma = match get(&h, "gamma")? {
        "none" => None,
        s => Some(parse_f64(s)?),
    };
    let normalization = Normalization::parse(get(&h, "normalization")?).ok_or_else(|| fmt_err("unknown normalization"))?;
    let seed = get(&h, "seed")?.parse().map_err(|_| fmt_err("bad seed"))?;
    let log_weight = parse_f64(get(&h, "log_weight")?)?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * nx * ny {
        return Err(fmt_err(format!("expected {} data bytes, found {}", 8 * nx * ny, bytes.len())));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(FieldSample { grid, values, normalization, log_weight, seed, gamma })
}

pub fn save_field(f: &FieldSample, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_field(f, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<FieldSample> {
    read_field(std::fs::File::open(path)?)
}

pub fn write_driving<W: Write>(rec: &DrivingRecord, w: &mut W) -> Result<()> {
    let n = rec.len();
    let tracks: Vec<&Vec<C64>> = rec.force_tracks.iter().filter(|t| !t.is_empty()).collect();
    if tracks.len() != rec.force_tracks.len() && !tracks.is_empty() || tracks.iter().any(|t| t.len() != n) {
        return Err(fmt_err("force tracks do not match the time grid"));
    }
    let has_cr = rec.log_conformal_radius.len() == n && n > 0;
    writeln!(w, "{DRIVING_MAGIC}")?;
    writeln!(w, "engine {}", rec.engine.tag())?;
    writeln!(w, "seed {}", rec.params.seed)?;
    writeln!(w, "dt {}", rec.params.dt)?;
    writeln!(w, "stop {}", rec.stop.tag())?;
    writeln!(w, "stop_time {}", rec.stop_time)?;
    writeln!(w, "b_final {}", rec.b_final)?;
    writeln!(w, "params {}", serde_json::to_string(&rec.params).map_err(|e| fmt_err(e.to_string()))?)?;
    for m in &rec.warnings {
        writeln!(w, "warning {}", m.replace('\n', " "))?;
    }
    let mut cols = vec!["t".to_string(), "value".to_string()];
    if has_cr {
        cols.push("log_cr".into());
    }
    for j in 0..tracks.len() {
        cols.push(format!("f{j}_re"));
        cols.push(format!("f{j}_im"));
    }
    writeln!(w, "columns {}", cols.join(","))?;
    writeln!(w, "data")?;
    let mut s = String::new();
    for k in 0..n {
        s.clear();
        s.push_str(&format!("{},{}", rec.times[k], rec.driving[k]));
        if has_cr {
            s.push_str(&format!(",{}", rec.log_conformal_radius[k]));
        }
        for t in &tracks {
            s.push_str(&format!(",{},{}", t[k].re, t[k].im));
        }
        writeln!(w, "{s}")?;
    }
    Ok(())
}

pub fn read_driving<R: Read>(r: R) -> Result<DrivingRecord> {
    let mut r = BufReader::new(r);
    let h = read_header(&mut r, DRIVING_MAGIC)?;
    let engine = Engine::parse(get(&h, "engine")?)?;
    let params: SleParams = serde_json::from_str(get(&h, "params")?).map_err(|e| fmt_err(e.to_string()))?;
    let cols: Vec<&str> = get(&h, "columns")?.split(',').collect();
    let has_cr = cols.contains(&"log_cr");
    let nt = (cols.len() - 2 - has_cr as usize) / 2;
    let mut rec = DrivingRecord::new(engine, params, Vec::new(), Vec::new());
    rec.stop = Stop::parse(get(&h, "stop")?)?;
    rec.stop_time = parse_f64(get(&h, "stop_time")?)?;
    rec.b_final = parse_f64(get(&h, "b_final")?)?;
    rec.warnings = h.iter().filter(|(k, _)| k == "warning").map(|(_, v)| v.clone()).collect();
    rec.force_tracks = vec![Vec::new(); nt];
    for line in r.lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line.split(',').map(parse_f64).collect::<Result<_>>()?;
        if v.len() != cols.len() {
            return Err(fmt_err(format!("row has {} columns, expected {}", v.len(), cols.len())));
        }
        rec.times.push(v[0]);
        rec.driving.push(v[1]);
        let mut c = 2;
        if has_cr {
            rec.log_conformal_radius.push(v[2]);
            c = 3;
        }
        for (j, t) in rec.force_tracks.iter_mut().enumerate() {
            t.push(C64::new(v[c + 2 * j], v[c + 2 * j + 1]));
        }
    }
    Ok(rec)
}

pub fn write_curve<W: Write>(c: &CurveTrace, w: &mut W) -> Result<()> {
    writeln!(w, "{CURVE_MAGIC}")?;
    writeln!(w, "domain {}", c.domain.tag())?;
    writeln!(w, "points {}", c.points.len())?;
    writeln!(w, "columns x,y,cap_time")?;
    writeln!(w, "data")?;
    for (k, p) in c.points.iter().enumerate() {
        let t = c.cap_times.get(k).copied().unwrap_or(f64::NAN);
        writeln!(w, "{},{},{}", p.re, p.im, t)?;
    }
    Ok(())
}

pub fn read_curve<R: Read>(r: R) -> Result<CurveTrace> {
    let mut r = BufReader::new(r);
    let h = read_header(&mut r, CURVE_MAGIC)?;
    let domain = DomainId::parse(get(&h, "domain")?).ok_or_else(|| fmt_err("unknown domain"))?;
    let mut points = Vec::new();
    let mut cap_times = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line.split(',').map(parse_f64).collect::<Result<_>>()?;
        if v.len() != 3 {
            return Err(fmt_err("curve rows need three columns"));
        }
        points.push(C64::new(v[0], v[1]));
        cap_times.push(v[2]);
    }
    Ok(CurveTrace { points, cap_times, domain })
}

fn loc_string(l: &crate::liouville::Loc) -> String {
    use crate::liouville::Loc;
    match l {
        Loc::At(z) => format!("{},{}", z.re, z.im),
        Loc::Inf => "inf".into(),
        Loc::PosInf => "+inf".into(),
        Loc::NegInf => "-inf".into(),
    }
}

fn surface_manifest(s: &QuantumSurface, stem: &str, dir: &Path, files: &mut Vec<PathBuf>) -> Result<serde_json::Value> {
    let field = match &s.field {
        Some(f) => {
            let p = dir.join(format!("{stem}.field"));
            save_field(f, &p)?;
            files.push(p.clone());
            json!(p.file_name().unwrap().to_string_lossy())
        }
        None => serde_json::Value::Null,
    };
    let mut beads = Vec::new();
    for (k, b) in s.beads.iter().enumerate() {
        let sub = match &b.surface {
            Some(bs) => surface_manifest(bs, &format!("{stem}-bead{k}"), dir, files)?,
            None => serde_json::Value::Null,
        };
        beads.push(json!({"label": b.label, "lengths": b.lengths, "c": b.c, "surface": sub}));
    }
    let mut chains = Vec::new();
    for (v, c) in &s.chains {
        chains.push(json!({"vertex": v, "chain": surface_manifest(c, &format!("{stem}-chain{v}"), dir, files)?}));
    }
    Ok(json!({
        "kind": s.kind.tag(),
        "gamma": s.gamma,
        "weights": s.weights,
        "domain": s.domain.tag(),
        "marks": s.marks.iter().map(loc_string).collect::<Vec<_>>(),
        "arc_lengths": s.arc_lengths,
        "log_weight": s.log_weight,
        "eps": s.eps,
        "distinguished": s.distinguished,
        "diagnostics": s.diagnostics.iter().map(|(k, v)| json!([k, v])).collect::<Vec<_>>(),
        "field": field,
        "beads": beads,
        "chains": chains,
    }))
}

/// Writes `<stem>.surface.json` plus one field file per component carrying a
/// field; returns every path written, manifest last.
pub fn save_surface_bundle(s: &QuantumSurface, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let m = surface_manifest(s, stem, dir, &mut files)?;
    let p = dir.join(format!("{stem}.surface.json"));
    std::fs::write(&p, serde_json::to_string_pretty(&m).map_err(|e| fmt_err(e.to_string()))? + "\n")?;
    files.push(p);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sle::{drive_radial, trace, ForceLoc, TraceMode};

    #[test]
    fn field_roundtrip_is_bit_exact() {
        let g = GridSpec::h_box(9, 9, 1.0, 1.0).unwrap();
        let mut f = crate::gff::sample_free_gff(&g, Normalization::for_domain(DomainId::H).unwrap(), 3).unwrap();
        f.gamma = Some(0.7);
        f.log_weight = -1.0 / 3.0;
        let mut buf = Vec::new();
        write_field(&f, &mut buf).unwrap();
        let back = read_field(&buf[..]).unwrap();
        assert_eq!(back, f);
        assert!(back.values.iter().zip(&f.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn driving_and_curve_roundtrip() {
        let p = SleParams::radial(2.0, 0.05, 1e-3, 9).with_force(0.5, ForceLoc::Plus);
        let mut rec = drive_radial(&p).unwrap();
        rec.warnings.push("note".into());
        let mut buf = Vec::new();
        write_driving(&rec, &mut buf).unwrap();
        let back = read_driving(&buf[..]).unwrap();
        assert_eq!(back.times, rec.times);
        assert_eq!(back.driving, rec.driving);
        assert_eq!(back.force_tracks, rec.force_tracks);
        assert_eq!(back.log_conformal_radius, rec.log_conformal_radius);
        assert_eq!(back.params, rec.params);
        assert_eq!(back.stop, rec.stop);
        assert_eq!(back.warnings, rec.warnings);
        let c = trace(&rec, 5, TraceMode::Tilted).unwrap();
        let mut buf = Vec::new();
        write_curve(&c, &mut buf).unwrap();
        assert_eq!(read_curve(&buf[..]).unwrap(), c);
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(matches!(read_field(&b"nope\n"[..]), Err(Error::Format(_))));
    }
}
