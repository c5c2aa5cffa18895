//! Artifact writing: atomic files, JSON-headed CSV, manifest, SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Writes to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming {} to {}", tmp.display(), path.display()))?;
    Ok(())
}

#[derive(Serialize)]
struct Entry {
    path: String,
    kind: &'static str,
    sha256: String,
    bytes: usize,
}

/// Collects outputs of one command and writes the manifest last.
pub struct Artifacts {
    dir: PathBuf,
    header: Value,
    entries: Vec<Entry>,
    partial: bool,
    notes: Vec<String>,
}

impl Artifacts {
    /// `header` is repeated as the first line of every CSV.
    pub fn new(dir: PathBuf, header: Value) -> Self {
        Self { dir, header, entries: Vec::new(), partial: false, notes: Vec::new() }
    }

    /// Marks the run as incomplete, e.g. after depth exhaustion.
    pub fn flag_partial(&mut self, note: impl Into<String>) {
        self.partial = true;
        self.notes.push(note.into());
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn is_partial(&self) -> bool {
        self.partial
    }

    fn put(&mut self, name: &str, kind: &'static str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.entries.push(Entry { path: name.to_string(), kind, sha256: sha256_hex(bytes), bytes: bytes.len() });
        Ok(())
    }

    /// `body` starts with the column line.
    pub fn csv(&mut self, name: &str, body: &str) -> Result<()> {
        let text = format!("# {}\n{body}", serde_json::to_string(&self.header)?);
        self.put(name, "csv", text.as_bytes())
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.put(name, "json", text.as_bytes())
    }

    pub fn svg(&mut self, name: &str, plot: &Plot) -> Result<()> {
        self.put(name, "svg", plot.render().as_bytes())
    }

    pub fn finish(self) -> Result<PathBuf> {
        let manifest = serde_json::json!({
            "header": self.header,
            "partial": self.partial,
            "notes": self.notes,
            "outputs": self.entries,
        });
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}

/// Minimal line chart.
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<(String, Vec<(f64, f64)>)>,
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

impl Plot {
    pub fn render(&self) -> String {
        let pts = self.series.iter().flat_map(|(_, p)| p.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in pts {
            x0 = x0.min(*x);
            x1 = x1.max(*x);
            y0 = y0.min(*y);
            y1 = y1.max(*y);
        }
        if !(x1 > x0) {
            x1 = x0 + 1.0;
        }
        if !(y1 > y0) {
            y1 = y0 + 1.0;
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
        let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, W / 2.0, escape(&self.title));
        let _ = writeln!(
            s,
            r#"<path d="M{m} {m} V{b} H{r}" fill="none" stroke="black"/>"#,
            m = MARGIN,
            b = H - MARGIN,
            r = W - MARGIN
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 10.0, escape(&self.x_label));
        let _ = writeln!(s, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{}</text>"#, H / 2.0, H / 2.0, escape(&self.y_label));
        for (v, x) in [(x0, MARGIN), (x1, W - MARGIN)] {
            let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{v:.3e}</text>"#, H - MARGIN + 15.0);
        }
        for (v, y) in [(y0, H - MARGIN), (y1, MARGIN)] {
            let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{v:.3e}</text>"#, MARGIN - 4.0);
        }
        for (k, (name, points)) in self.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let mut d = String::new();
            let mut pen_up = true;
            for (x, y) in points {
                if !(x.is_finite() && y.is_finite()) {
                    pen_up = true;
                    continue;
                }
                let _ = write!(d, "{}{:.2} {:.2} ", if pen_up { "M" } else { "L" }, sx(*x), sy(*y));
                pen_up = false;
            }
            let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.trim_end());
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
                W - MARGIN - 120.0,
                MARGIN + 15.0 * (k as f64 + 1.0),
                escape(name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
