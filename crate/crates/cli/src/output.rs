//! Artifact formats: full-precision CSV, grayscale PGM, palette notes and
//! the run manifest.

use crate::error::CliError;
use bmec_ks::grid::ScalarField;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

/// Formats like C's `%.17g`: 17 significant digits, trailing zeros
/// dropped, exponent form outside `1e-4 <= |x| < 1e17`.
pub fn fmt_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..17).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (16 - exp) as usize;
        strip_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Row-major matrix, one grid row per line.
pub fn field_csv(f: &ScalarField) -> String {
    let nx = f.spec().nx();
    let mut out = String::with_capacity(f.values().len() * 20);
    for row in f.values().chunks(nx) {
        let line: Vec<String> = row.iter().map(|&x| fmt_g17(x)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Table with a header line and one line per row.
pub fn table_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

/// Grids up to this many points are written as ASCII PGM.
pub const ASCII_PGM_LIMIT: usize = 64 * 64;

/// Grayscale image with `lo` mapped to black and `hi` to white (values are
/// clamped). The mapping is recorded in a header comment.
pub fn field_pgm(f: &ScalarField, lo: f64, hi: f64) -> Vec<u8> {
    let (nx, ny) = (f.spec().nx(), f.spec().ny());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let gray: Vec<u8> = f
        .values()
        .iter()
        .map(|&x| (((x - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let ascii = f.values().len() <= ASCII_PGM_LIMIT;
    let magic = if ascii { "P2" } else { "P5" };
    let mut out = format!(
        "{magic}\n# black={} white={}\n{nx} {ny}\n255\n",
        fmt_g17(lo),
        fmt_g17(hi)
    )
    .into_bytes();
    if ascii {
        for row in gray.chunks(nx) {
            let line: Vec<String> = row.iter().map(|g| g.to_string()).collect();
            out.extend_from_slice(line.join(" ").as_bytes());
            out.push(b'\n');
        }
    } else {
        out.extend_from_slice(&gray);
    }
    out
}

pub const PALETTE: &str = "\
# Grayscale mapping used by the .pgm files in this directory.
# Each image header carries a comment '# black=LO white=HI'; a pixel value g
# in 0..255 stands for LO + (HI - LO) * g / 255, values outside are clamped.
#
# density u: LO = 0, HI = 1. Dense cell regions (u near 1) are white and empty
# regions (u near 0) are black. Plots that show u ~ 1 in blue and u ~ 0 in
# black correspond to white and black here.
# attractant v and reconstructed v: LO and HI are the field's own minimum and
# maximum, so contrast is per image; use the .csv files for values.
gray,u
0,0
64,0.25098039215686274
128,0.50196078431372548
191,0.74901960784313726
255,1
";

pub fn unix_seconds() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

struct Entry {
    path: String,
    bytes: usize,
    sha256: String,
}

/// Writes files below one directory and remembers what it wrote.
pub struct ArtifactWriter {
    dir: PathBuf,
    entries: Vec<Entry>,
    started: f64,
}

pub const MANIFEST_NAME: &str = "manifest.json";

impl ArtifactWriter {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
            started: unix_seconds(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, data: &[u8]) -> Result<(), CliError> {
        if name == MANIFEST_NAME {
            return Err(CliError::Runtime("artifact name clashes with the manifest".into()));
        }
        let path = self.dir.join(name);
        fs::write(&path, data)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        self.entries.retain(|e| e.path != name);
        self.entries.push(Entry {
            path: name.to_string(),
            bytes: data.len(),
            sha256: hex::encode(Sha256::digest(data)),
        });
        Ok(())
    }

    pub fn write_str(&mut self, name: &str, data: &str) -> Result<(), CliError> {
        self.write(name, data.as_bytes())
    }

    /// A field as `<stem>.csv` plus `<stem>.pgm`.
    pub fn write_field(&mut self, stem: &str, f: &ScalarField, lo: f64, hi: f64) -> Result<(), CliError> {
        self.write_str(&format!("{stem}.csv"), &field_csv(f))?;
        self.write(&format!("{stem}.pgm"), &field_pgm(f, lo, hi))
    }

    /// Writes `manifest.json` listing every file written so far. The
    /// manifest does not list itself.
    pub fn finish(self, command: &str, config: Map<String, Value>) -> Result<PathBuf, CliError> {
        let files: Vec<Value> = self
            .entries
            .iter()
            .map(|e| json!({ "path": e.path, "bytes": e.bytes, "sha256": e.sha256 }))
            .collect();
        let manifest = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "started_unix": self.started,
            "finished_unix": unix_seconds(),
            "files": files,
        });
        let path = self.dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n")
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}
