//! SVG charts. Every plotted number is read from the CSV; nothing is
//! recomputed here.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use plotters::prelude::*;
use secure_jscc::metrics::MetricsRecord;

use crate::Family;

const SIZE: (u32, u32) = (720, 480);
const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(23, 190, 207),
];

fn required(family: Family) -> &'static [&'static str] {
    match family {
        Family::PrivacyUtility => &["ce_per_eve", "ssim_bob"],
        Family::AccuracySnr => &[
            "channel_kind",
            "scenario",
            "snr_legit_db",
            "acc_per_eve",
            "acc_colluding",
            "acc_pessimistic",
        ],
        Family::Surface => &["w", "alpha", "ssim_bob", "acc_per_eve"],
    }
}

/// Rows plus the raw `w`/`alpha` columns when present.
struct Table {
    rows: Vec<MetricsRecord>,
    extra: Vec<BTreeMap<String, String>>,
}

fn read_table(path: &Path, family: Family) -> anyhow::Result<Table> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let header = r.headers()?.clone();
    for col in required(family) {
        if !header.iter().any(|h| h == *col) {
            bail!("{} lacks column `{col}`", path.display());
        }
    }
    let mut rows = Vec::new();
    let mut extra = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(MetricsRecord::from_row(&header, &rec)?);
        extra.push(
            header
                .iter()
                .zip(rec.iter())
                .filter(|(h, _)| matches!(*h, "w" | "alpha"))
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect(),
        );
    }
    if rows.is_empty() {
        bail!("{} has no data rows", path.display());
    }
    Ok(Table { rows, extra })
}

/// Widens a degenerate or empty range so single points stay visible.
fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    let span = (hi - lo).max(1e-3 * lo.abs().max(1.0));
    (lo - 0.08 * span, hi + 0.08 * span)
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    padded(lo, hi)
}

pub fn plot(csv: &Path, family: Family, out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let table = read_table(csv, family)?;
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    match family {
        Family::PrivacyUtility => privacy_utility(&table.rows, out).map(|p| vec![p]),
        Family::AccuracySnr => accuracy_snr(&table.rows, out),
        Family::Surface => surface(&table, out),
    }
}

fn privacy_utility(rows: &[MetricsRecord], out: &Path) -> anyhow::Result<PathBuf> {
    let path = out.join("privacy_utility.svg");
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.mean_ce(), r.ssim_bob)).collect();
    let root = SVGBackend::new(&path, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let (x0, x1) = range(points.iter().map(|p| p.0));
    let (y0, y1) = range(points.iter().map(|p| p.1));
    let mut chart = ChartBuilder::on(&root)
        .caption("Privacy-utility trade-off", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)?;
    chart
        .configure_mesh()
        .x_desc("mean adversary cross-entropy (nats)")
        .y_desc("Bob SSIM")
        .draw()?;
    chart.draw_series(points.iter().map(|&p| Circle::new(p, 5, PALETTE[0].filled())))?;
    root.present()?;
    Ok(path.clone())
}

fn accuracy_snr(rows: &[MetricsRecord], out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut by_kind: BTreeMap<&str, Vec<&MetricsRecord>> = BTreeMap::new();
    for r in rows {
        by_kind.entry(r.channel_kind.as_str()).or_default().push(r);
    }
    let mut files = Vec::new();
    for (kind, rs) in by_kind {
        // one line per (scenario, statistic), sorted by SNR
        let mut lines: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for r in &rs {
            let sc = r.scenario.as_str();
            lines
                .entry(format!("{sc}: mean individual"))
                .or_default()
                .push((r.snr_legit_db, r.mean_accuracy()));
            if let Some(a) = r.acc_colluding {
                lines
                    .entry(format!("{sc}: colluding"))
                    .or_default()
                    .push((r.snr_legit_db, a));
            }
            if let Some(a) = r.acc_pessimistic {
                lines
                    .entry(format!("{sc}: pessimistic"))
                    .or_default()
                    .push((r.snr_legit_db, a));
            }
        }
        for pts in lines.values_mut() {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        let path = out.join(format!("accuracy_snr_{kind}.svg"));
        let root = SVGBackend::new(&path, SIZE).into_drawing_area();
        root.fill(&WHITE)?;
        let (x0, x1) = range(lines.values().flatten().map(|p| p.0));
        let (y0, y1) = range(lines.values().flatten().map(|p| p.1).chain([0.0, 1.0]));
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("Adversary accuracy, {kind} channel"), ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(56)
            .build_cartesian_2d(x0..x1, y0..y1)?;
        chart
            .configure_mesh()
            .x_desc("legitimate SNR (dB)")
            .y_desc("accuracy")
            .draw()?;
        for (i, (name, pts)) in lines.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))?
                .label(name.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
            chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .draw()?;
        root.present()?;
        files.push(path.clone());
    }
    Ok(files)
}

fn parse_axis(extra: &BTreeMap<String, String>, key: &str) -> anyhow::Result<f64> {
    let v = extra.get(key).map(String::as_str).unwrap_or("");
    v.parse().with_context(|| format!("column `{key}`: cannot parse `{v}`"))
}

fn surface(table: &Table, out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    // cell (w, alpha) -> sums of (ssim, accuracy) and a count; keys are
    // formatted values so equal CSV entries share a cell
    let mut cells: BTreeMap<(String, String), (f64, f64, usize)> = BTreeMap::new();
    let mut ws: Vec<(f64, String)> = Vec::new();
    let mut alphas: Vec<(f64, String)> = Vec::new();
    for (r, extra) in table.rows.iter().zip(&table.extra) {
        let (w, a) = (parse_axis(extra, "w")?, parse_axis(extra, "alpha")?);
        let key = (w.to_string(), a.to_string());
        if !ws.iter().any(|x| x.1 == key.0) {
            ws.push((w, key.0.clone()));
        }
        if !alphas.iter().any(|x| x.1 == key.1) {
            alphas.push((a, key.1.clone()));
        }
        let c = cells.entry(key).or_insert((0.0, 0.0, 0));
        c.0 += r.ssim_bob;
        c.1 += r.mean_accuracy();
        c.2 += 1;
    }
    ws.sort_by(|a, b| a.0.total_cmp(&b.0));
    alphas.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut files = Vec::new();
    for (stat, title) in [(0usize, "Bob SSIM"), (1, "mean adversary accuracy")] {
        let path = out.join(if stat == 0 {
            "surface_ssim.svg"
        } else {
            "surface_accuracy.svg"
        });
        let root = SVGBackend::new(&path, SIZE).into_drawing_area();
        root.fill(&WHITE)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("{title} over (w, alpha)"), ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(56)
            .build_cartesian_2d(0f64..ws.len() as f64, 0f64..alphas.len() as f64)?;
        let wl: Vec<String> = ws.iter().map(|x| x.1.clone()).collect();
        let al: Vec<String> = alphas.iter().map(|x| x.1.clone()).collect();
        chart
            .configure_mesh()
            .disable_mesh()
            .x_labels(ws.len() + 1)
            .y_labels(alphas.len() + 1)
            .x_label_formatter(&|x| label_at(&wl, *x))
            .y_label_formatter(&|y| label_at(&al, *y))
            .x_desc("w")
            .y_desc("alpha")
            .draw()?;
        for (i, w) in ws.iter().enumerate() {
            for (j, a) in alphas.iter().enumerate() {
                let Some(&(s, acc, n)) = cells.get(&(w.1.clone(), a.1.clone())) else {
                    continue;
                };
                let v = if stat == 0 { s } else { acc } / n as f64;
                let (x, y) = (i as f64, j as f64);
                chart.draw_series(std::iter::once(Rectangle::new(
                    [(x, y), (x + 1.0, y + 1.0)],
                    heat(v).filled(),
                )))?;
                chart.draw_series(std::iter::once(Text::new(
                    format!("{v:.3}"),
                    (x + 0.35, y + 0.55),
                    ("sans-serif", 16).into_font().color(&BLACK),
                )))?;
            }
        }
        root.present()?;
        files.push(path.clone());
    }
    Ok(files)
}

fn label_at(labels: &[String], pos: f64) -> String {
    let i = (pos - 0.5).round();
    if (pos - 0.5 - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < labels.len() {
        labels[i as usize].clone()
    } else {
        String::new()
    }
}

/// Values in [0, 1] mapped from pale yellow to dark blue.
fn heat(v: f64) -> RGBColor {
    let t = v.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    RGBColor(lerp(255.0, 33.0), lerp(247.0, 102.0), lerp(188.0, 172.0))
}
