//! Aggregation of result CSVs into a per-arm summary and an AP-vs-comm
//! scatter plot.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use wavecomm::simharness::{mean_sd, ArmSummary, ABLATION_ROWS_HEADER, METRIC_CSV_HEADER};

use crate::error::{CliError, CliResult};

/// One arm under one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedPoint {
    pub arm: String,
    pub seed: u64,
    pub ap30: f64,
    pub ap50: f64,
    pub comm_log2: f64,
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> CliResult<T> {
    rec.get(i)
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| CliError::Runtime(format!("{}: bad field {i} in {:?}", path.display(), rec)))
}

/// Reads every recognized CSV in `dir` in file-name order. Ablation row files
/// give one point per line; per-frame metric files are averaged per
/// `(variant, seed)`. Other CSVs are ignored. Errors when the directory
/// holds no recognized file.
pub fn collect_points(dir: &Path) -> CliResult<Vec<SeedPoint>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "csv"));
    files.sort();
    let mut points = Vec::new();
    let mut recognized = 0;
    for path in files {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(&path)?;
        let header = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
        if header == ABLATION_ROWS_HEADER {
            recognized += 1;
            for rec in rdr.records() {
                let rec = rec?;
                points.push(SeedPoint {
                    arm: field(&rec, 1, &path)?,
                    seed: field(&rec, 2, &path)?,
                    ap30: field(&rec, 3, &path)?,
                    ap50: field(&rec, 4, &path)?,
                    comm_log2: field(&rec, 5, &path)?,
                });
            }
        } else if header == METRIC_CSV_HEADER {
            recognized += 1;
            // (variant, seed) -> sums of ap30, ap50, comm and the frame count
            let mut groups: BTreeMap<(String, u64), (f64, f64, f64, usize)> = BTreeMap::new();
            for rec in rdr.records() {
                let rec = rec?;
                let g = groups.entry((field(&rec, 4, &path)?, field(&rec, 5, &path)?)).or_default();
                g.0 += field::<f64>(&rec, 1, &path)?;
                g.1 += field::<f64>(&rec, 2, &path)?;
                g.2 += field::<f64>(&rec, 3, &path)?;
                g.3 += 1;
            }
            for ((arm, seed), (a30, a50, comm, n)) in groups {
                let n = n as f64;
                points.push(SeedPoint { arm, seed, ap30: a30 / n, ap50: a50 / n, comm_log2: comm / n });
            }
        }
    }
    if recognized == 0 {
        return Err(CliError::Config(format!("no result CSVs in {}", dir.display())));
    }
    Ok(points)
}

/// Mean and sample sd per arm, arms in first-seen order.
pub fn summarize_points(points: &[SeedPoint]) -> Vec<ArmSummary> {
    let mut arms: Vec<&str> = Vec::new();
    for p in points {
        if !arms.contains(&p.arm.as_str()) {
            arms.push(&p.arm);
        }
    }
    arms.into_iter()
        .map(|arm| {
            let of: Vec<&SeedPoint> = points.iter().filter(|p| p.arm == arm).collect();
            let col = |f: fn(&SeedPoint) -> f64| of.iter().map(|p| f(p)).collect::<Vec<_>>();
            let (ap30_mean, ap30_sd) = mean_sd(&col(|p| p.ap30));
            let (ap50_mean, ap50_sd) = mean_sd(&col(|p| p.ap50));
            ArmSummary {
                arm: arm.to_string(),
                ap30_mean,
                ap30_sd,
                ap50_mean,
                ap50_sd,
                comm_log2: mean_sd(&col(|p| p.comm_log2)).0,
                n: of.len(),
            }
        })
        .collect()
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// AP50 mean (with +-1 sd bars) against per-link comm volume.
pub fn scatter_svg(summary: &[ArmSummary]) -> String {
    let (mut x_lo, mut x_hi) = summary
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.comm_log2), hi.max(s.comm_log2)));
    if !x_lo.is_finite() {
        (x_lo, x_hi) = (0.0, 1.0);
    }
    let x_lo = x_lo.floor() - 1.0;
    let x_hi = x_hi.ceil() + 1.0;
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * pw;
    let sy = |y: f64| TOP + (1.0 - y.clamp(0.0, 1.0)) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let x_step = ((x_hi - x_lo) / 8.0).ceil().max(1.0);
    let mut x = x_lo;
    while x <= x_hi + 1e-9 {
        let px = sx(x);
        let _ = writeln!(
            svg,
            r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{x:.0}</text>"#,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 20.0
        );
        x += x_step;
    }
    for i in 0..=5 {
        let y = i as f64 * 0.2;
        let py = sy(y);
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{y:.1}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">communication volume per link (log2 bytes)</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">AP@0.5</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    for s in summary {
        let (px, py) = (sx(s.comm_log2), sy(s.ap50_mean));
        let (y0, y1) = (sy(s.ap50_mean - s.ap50_sd), sy(s.ap50_mean + s.ap50_sd));
        let _ = writeln!(
            svg,
            r#"<line x1="{px:.2}" y1="{y0:.2}" x2="{px:.2}" y2="{y1:.2}" stroke="gray"/><circle cx="{px:.2}" cy="{py:.2}" r="4" fill="steelblue"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            px + 7.0,
            py - 7.0,
            escape(&s.arm)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
