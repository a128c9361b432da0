//! Field and trajectory files, CSV/JSON reports and run manifests.
//!
//! Field record (`GSPF`, little endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 4 | magic `GSPF` |
//! | 1 | format version (1) |
//! | 8 | `L` as f64 |
//! | 8 | `N` as u64 |
//! | 8 | `K` as u64 |
//! | 16 K | `re c_k, im c_k` for `k = 1..K`, f64 |
//!
//! Trajectory file (`GSTJ`): magic, version byte, u64 header length, UTF-8
//! JSON header, u64 frame count, then per frame `t` (f64), a presence byte
//! (bit 0 `h`, bit 1 `v`, bit 2 `z`) and the `2K` coefficients of each
//! present field.
//!
//! The CSV form of a field is one line `L,N,K,re_1,im_1,...`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::spectral::{Grid, SpectralField};

pub const FIELD_MAGIC: &[u8; 4] = b"GSPF";
pub const TRAJECTORY_MAGIC: &[u8; 4] = b"GSTJ";
pub const FORMAT_VERSION: u8 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn put_coeffs(out: &mut Vec<u8>, f: &SpectralField) {
    for c in f.coeffs() {
        out.extend_from_slice(&c.re.to_le_bytes());
        out.extend_from_slice(&c.im.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn coeffs(&mut self, grid: &Arc<Grid>) -> Result<SpectralField> {
        let mut c = Vec::with_capacity(grid.modes());
        for _ in 0..grid.modes() {
            let re = self.f64()?;
            let im = self.f64()?;
            c.push(Complex64::new(re, im));
        }
        SpectralField::from_coeffs(grid, c)
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::Format(format!("expected magic {}", String::from_utf8_lossy(magic))));
        }
        let v = self.u8()?;
        if v != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {v}")));
        }
        Ok(())
    }
}

pub fn encode_field(f: &SpectralField) -> Vec<u8> {
    let g = f.grid();
    let mut out = Vec::with_capacity(29 + 16 * g.modes());
    out.extend_from_slice(FIELD_MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&g.length().to_le_bytes());
    out.extend_from_slice(&(g.n() as u64).to_le_bytes());
    out.extend_from_slice(&(g.modes() as u64).to_le_bytes());
    put_coeffs(&mut out, f);
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<SpectralField> {
    let mut c = Cursor { bytes, pos: 0 };
    c.header(FIELD_MAGIC)?;
    let length = c.f64()?;
    let n = c.u64()? as usize;
    let k = c.u64()? as usize;
    let grid = Grid::new(length, n)?;
    if k != grid.modes() {
        return Err(Error::Format(format!("K = {k} does not match N = {n}")));
    }
    let f = c.coeffs(&grid)?;
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after field record".into()));
    }
    Ok(f)
}

pub fn field_to_csv(f: &SpectralField) -> String {
    let g = f.grid();
    let mut s = format!("{},{},{}", g.length(), g.n(), g.modes());
    for c in f.coeffs() {
        s.push_str(&format!(",{},{}", c.re, c.im));
    }
    s
}

pub fn field_from_csv(line: &str) -> Result<SpectralField> {
    let parts: Vec<&str> = line.trim().split(',').collect();
    if parts.len() < 3 {
        return Err(Error::Format("field CSV needs L,N,K".into()));
    }
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Format(format!("{s:?}: {e}")));
    let length = num(parts[0])?;
    let n = parts[1].trim().parse::<usize>().map_err(|e| Error::Format(e.to_string()))?;
    let k = parts[2].trim().parse::<usize>().map_err(|e| Error::Format(e.to_string()))?;
    let grid = Grid::new(length, n)?;
    if k != grid.modes() || parts.len() != 3 + 2 * k {
        return Err(Error::Format(format!("expected {} values after L,N,K", 2 * grid.modes())));
    }
    let mut c = Vec::with_capacity(k);
    for j in 0..k {
        c.push(Complex64::new(num(parts[3 + 2 * j])?, num(parts[4 + 2 * j])?));
    }
    SpectralField::from_coeffs(&grid, c)
}

pub fn write_field(path: &Path, f: &SpectralField) -> Result<()> {
    fs::write(path, encode_field(f)).map_err(|e| Error::io(path, e))
}

pub fn read_field(path: &Path) -> Result<SpectralField> {
    decode_field(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// JSON header of a trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub length: f64,
    pub n: usize,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    /// Canonical config of the producing run.
    pub config: serde_json::Value,
}

pub fn encode_trajectory(traj: &Trajectory, config: &serde_json::Value) -> Result<Vec<u8>> {
    let grid = traj
        .h
        .first()
        .map(|f| f.grid().clone())
        .ok_or_else(|| Error::InsufficientData("empty trajectory".into()))?;
    let header = TrajectoryHeader {
        length: grid.length(),
        n: grid.n(),
        seed: traj.seed,
        config_hash: traj.config_hash.clone(),
        config: config.clone(),
    };
    let head = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(TRAJECTORY_MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(head.len() as u64).to_le_bytes());
    out.extend_from_slice(&head);
    out.extend_from_slice(&(traj.len() as u64).to_le_bytes());
    for (j, t) in traj.times.iter().enumerate() {
        out.extend_from_slice(&t.to_le_bytes());
        let v = traj.v.as_ref().and_then(|v| v.get(j));
        let z = traj.z.as_ref().and_then(|z| z.get(j));
        out.push(1 | (v.is_some() as u8) << 1 | (z.is_some() as u8) << 2);
        put_coeffs(&mut out, &traj.h[j]);
        for f in [v, z].into_iter().flatten() {
            put_coeffs(&mut out, f);
        }
    }
    Ok(out)
}

pub fn decode_trajectory(bytes: &[u8]) -> Result<(Trajectory, TrajectoryHeader)> {
    let mut c = Cursor { bytes, pos: 0 };
    c.header(TRAJECTORY_MAGIC)?;
    let hl = c.u64()? as usize;
    let header: TrajectoryHeader =
        serde_json::from_slice(c.take(hl)?).map_err(|e| Error::Format(format!("trajectory header: {e}")))?;
    let grid = Grid::new(header.length, header.n)?;
    let frames = c.u64()? as usize;
    let mut traj = Trajectory {
        times: Vec::with_capacity(frames),
        h: Vec::with_capacity(frames),
        v: None,
        z: None,
        seed: header.seed,
        config_hash: header.config_hash.clone(),
    };
    for j in 0..frames {
        traj.times.push(c.f64()?);
        let mask = c.u8()?;
        if mask & 1 == 0 || mask > 7 {
            return Err(Error::Format(format!("bad presence byte {mask} in frame {j}")));
        }
        traj.h.push(c.coeffs(&grid)?);
        for (bit, slot) in [(2u8, &mut traj.v), (4u8, &mut traj.z)] {
            let present = mask & bit != 0;
            if j == 0 && present {
                *slot = Some(Vec::with_capacity(frames));
            }
            match (present, slot.as_mut()) {
                (true, Some(s)) => s.push(c.coeffs(&grid)?),
                (false, None) => {}
                _ => return Err(Error::Format(format!("inconsistent presence byte in frame {j}"))),
            }
        }
    }
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after trajectory".into()));
    }
    Ok((traj, header))
}

pub fn write_trajectory(path: &Path, traj: &Trajectory, config: &serde_json::Value) -> Result<()> {
    fs::write(path, encode_trajectory(traj, config)?).map_err(|e| Error::io(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<(Trajectory, TrajectoryHeader)> {
    decode_trajectory(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Reads nonnegative samples from the first column of a CSV file; a
/// non-numeric first line is taken as a header.
pub fn read_samples(path: &Path) -> Result<Vec<f64>> {
    let mut text = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (j, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let first = line.split(',').next().unwrap_or("").trim();
        match first.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if out.is_empty() && j == 0 => {}
            Err(e) => return Err(Error::Format(format!("{}:{}: {e}", path.display(), j + 1))),
        }
    }
    Ok(out)
}

/// Plain numeric table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Table { columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// CSV text; floats use the shortest representation that round-trips.
    pub fn to_csv(&self, config_hash: &str) -> String {
        let mut s = format!("# config_hash={config_hash}\n{}\n", self.columns.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Verdict { name: name.into(), pass, detail: detail.into() }
    }
}

/// `true` iff every verdict passes.
pub fn aggregate(verdicts: &[Verdict]) -> bool {
    verdicts.iter().all(|v| v.pass)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub seed_derivation: String,
    pub version: String,
    pub wall_clock_seconds: f64,
    pub overall: bool,
    pub verdicts: Vec<Verdict>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(experiment: &str, config_hash: &str, seed: u64) -> Self {
        RunManifest {
            experiment: experiment.into(),
            config_hash: config_hash.into(),
            seed,
            seed_derivation: "path i of block b: derive_seed(derive_seed(seed, b), i); step n, substep j: ChaCha8 stream n*substeps+j".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            wall_clock_seconds: 0.0,
            overall: true,
            verdicts: Vec::new(),
            outputs: Vec::new(),
        }
    }
}

/// Results of one experiment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub tables: Vec<(String, Table)>,
    pub verdicts: Vec<Verdict>,
    /// Extra JSON written next to the verdicts.
    pub details: serde_json::Value,
}

/// Writes `<experiment>_<table>.csv`, `<experiment>.json` and
/// `<experiment>_manifest.json` under `dir` and returns the paths written.
pub fn write_report(dir: &Path, report: &Report, manifest: &mut RunManifest) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let exp = manifest.experiment.clone();
    let manifest_name = format!("{exp}_manifest.json");
    let mut written = Vec::new();
    for (name, table) in &report.tables {
        let p = dir.join(format!("{exp}_{name}.csv"));
        write_text(&p, &table.to_csv(&manifest.config_hash))?;
        written.push(p);
    }
    manifest.overall = aggregate(&report.verdicts);
    manifest.verdicts = report.verdicts.clone();
    let verdicts = serde_json::json!({
        "manifest": manifest_name,
        "config_hash": manifest.config_hash,
        "overall": if manifest.overall { "PASS" } else { "FAIL" },
        "verdicts": report.verdicts,
        "details": report.details,
    });
    let p = dir.join(format!("{exp}.json"));
    write_text(&p, &pretty(&verdicts))?;
    written.push(p);
    manifest.outputs = written
        .iter()
        .map(|p| p.file_name().expect("file").to_string_lossy().into_owned())
        .collect();
    let p = dir.join(manifest_name);
    write_text(&p, &pretty(&serde_json::to_value(&*manifest).expect("manifest serializes")))?;
    written.push(p);
    Ok(written)
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(n: usize, seed: u64) -> SpectralField {
        let g = Grid::new(3.0, n).unwrap();
        let c = (0..g.modes())
            .map(|k| Complex64::new((seed as f64 + k as f64).sin(), (k as f64 * 0.7).cos() / (k + 1) as f64))
            .collect();
        SpectralField::from_coeffs(&g, c).unwrap()
    }

    proptest! {
        #[test]
        fn field_binary_round_trip(seed in 0u64..1000, half in 8usize..40) {
            let f = field(2 * half, seed);
            prop_assert_eq!(decode_field(&encode_field(&f)).unwrap(), f);
        }

        #[test]
        fn field_csv_round_trip(seed in 0u64..1000) {
            let f = field(16, seed);
            prop_assert_eq!(field_from_csv(&field_to_csv(&f)).unwrap(), f);
        }
    }

    #[test]
    fn corrupted_records_are_rejected() {
        let f = field(16, 1);
        let mut b = encode_field(&f);
        b[4] = 9;
        assert!(matches!(decode_field(&b), Err(Error::Format(_))));
        let b = encode_field(&f);
        assert!(decode_field(&b[..b.len() - 1]).is_err());
        assert!(decode_field(b"GSTJ").is_err());
    }

    #[test]
    fn trajectory_round_trip() {
        let h: Vec<SpectralField> = (0..3).map(|s| field(16, s)).collect();
        let traj = Trajectory {
            times: vec![0.0, 0.5, 1.0],
            h: h.clone(),
            v: None,
            z: Some(h.iter().map(|f| f.scale(2.0)).collect()),
            seed: Some(5),
            config_hash: Some("abc".into()),
        };
        let cfg = serde_json::json!({"seed": 5});
        let (back, head) = decode_trajectory(&encode_trajectory(&traj, &cfg).unwrap()).unwrap();
        assert_eq!(back, traj);
        assert_eq!(head.config, cfg);
    }

    #[test]
    fn empty_table_has_header() {
        let t = Table::new(["t", "x"]);
        assert_eq!(t.to_csv("h"), "# config_hash=h\nt,x\n");
    }

    #[test]
    fn reports_are_byte_stable_and_aggregate() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new(["a", "b"]);
        t.push(vec![0.1, 1e-300]);
        let report = Report {
            tables: vec![("data".into(), t)],
            verdicts: vec![Verdict::new("one", true, ""), Verdict::new("two", false, "bad")],
            details: serde_json::Value::Null,
        };
        let mut m = RunManifest::new("exp", "hash", 1);
        let paths = write_report(dir.path(), &report, &mut m).unwrap();
        assert!(!m.overall);
        let first = fs::read(&paths[0]).unwrap();
        let mut m2 = RunManifest::new("exp", "hash", 1);
        write_report(dir.path(), &report, &mut m2).unwrap();
        assert_eq!(fs::read(&paths[0]).unwrap(), first);
        let json: serde_json::Value = serde_json::from_slice(&fs::read(&paths[1]).unwrap()).unwrap();
        assert_eq!(json["overall"], "FAIL");
        assert_eq!(json["manifest"], "exp_manifest.json");
    }

    #[test]
    fn io_errors_name_the_path() {
        let e = read_field(Path::new("/nonexistent/field.bin")).unwrap_err();
        assert!(e.to_string().contains("/nonexistent/field.bin"));
    }

    #[test]
    fn samples_skip_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "x,w\n1.5,2\n# note\n3\n").unwrap();
        assert_eq!(read_samples(&p).unwrap(), vec![1.5, 3.0]);
    }
}
