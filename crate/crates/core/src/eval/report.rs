use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IrisError, Result};
use crate::training::EpochRecord;

/// One evaluated (regime, split) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub regime: String,
    pub split: String,
    pub seed: u64,
    pub wer: f64,
    /// Mean SI-SNR (dB) of the enhanced simulated mixtures, when the
    /// pipeline has an enhancement module.
    pub si_snr_db: Option<f64>,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_words: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegimeReport {
    pub rows: Vec<ReportRow>,
}

impl RegimeReport {
    /// Mean WER of `regime` over every row of `split`.
    pub fn mean_wer(&self, regime: &str, split: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.regime == regime && r.split == split)
            .map(|r| r.wer)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// CSV text with a fixed column order and four decimals.
    pub fn to_csv(&self) -> Result<String> {
        if self.rows.is_empty() {
            return Err(IrisError::InvalidArgument("report has no rows".into()));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "regime",
            "split",
            "seed",
            "wer",
            "si_snr_db",
            "substitutions",
            "deletions",
            "insertions",
            "ref_words",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.regime.clone(),
                r.split.clone(),
                r.seed.to_string(),
                format!("{:.4}", r.wer),
                r.si_snr_db.map(|v| format!("{v:.4}")).unwrap_or_default(),
                r.substitutions.to_string(),
                r.deletions.to_string(),
                r.insertions.to_string(),
                r.ref_words.to_string(),
            ])?;
        }
        csv_text(w)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows = r.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>()?;
        Ok(Self { rows })
    }
}

fn csv_text(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| IrisError::InvalidArgument(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| IrisError::InvalidArgument(format!("csv text: {e}")))
}

/// Named training curve.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSeries {
    pub name: String,
    pub records: Vec<EpochRecord>,
}

/// Training logs as CSV: `series,epoch,train_loss,validation`.
pub fn training_log_csv(series: &[TrainingSeries]) -> Result<String> {
    if series.iter().all(|s| s.records.is_empty()) {
        return Err(IrisError::InvalidArgument("training log is empty".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["series", "epoch", "train_loss", "validation"])?;
    for s in series {
        for r in &s.records {
            w.write_record([
                s.name.clone(),
                r.epoch.to_string(),
                format!("{:.4}", r.train_loss),
                format!("{:.4}", r.validation),
            ])?;
        }
    }
    csv_text(w)
}

/// A line plot with one polyline and one marker per point for each series.
#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<(String, Vec<(f64, f64)>)>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo < 1e-12 {
        (lo - 1.0, hi + 1.0)
    } else {
        (lo, hi)
    }
}

impl Plot {
    /// Byte-deterministic SVG text.
    pub fn to_svg(&self) -> Result<String> {
        let points = || self.series.iter().flat_map(|(_, p)| p.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
        if points().next().is_none() {
            return Err(IrisError::InvalidArgument("plot has no finite points".into()));
        }
        let (x0, x1) = extent(points().map(|p| p.0));
        let (y0, y1) = extent(points().map(|p| p.1));
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<path d="M{LEFT:.1},{TOP:.1} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
            TOP + ph,
            LEFT + pw
        );
        for k in 0..=4 {
            let fx = x0 + (x1 - x0) * k as f64 / 4.0;
            let fy = y0 + (y1 - y0) * k as f64 / 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                sx(fx),
                TOP + ph + 18.0,
                tick(fx)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                sy(fy) + 4.0,
                tick(fy)
            );
        }
        let _ = writeln!(
            s,
            r#"<text class="x-label" x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 16.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text class="y-label" x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for (i, (name, pts)) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let finite: Vec<&(f64, f64)> = pts.iter().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
            let coords: Vec<String> = finite.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline class="series" data-name="{}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                escape(name),
                coords.join(" ")
            );
            for (x, y) in &finite {
                let _ = writeln!(
                    s,
                    r#"<circle class="marker" cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                    sx(*x),
                    sy(*y)
                );
            }
            let ly = TOP + 10.0 + 18.0 * i as f64;
            let lx = LEFT + pw + 14.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
                lx + 18.0
            );
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 24.0, ly + 4.0, escape(name));
        }
        s.push_str("</svg>\n");
        Ok(s)
    }
}

fn tick(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Dev-accuracy curves of training logs, one series per log.
pub fn accuracy_plot(title: &str, series: &[TrainingSeries]) -> Plot {
    Plot {
        title: title.into(),
        x_label: "epoch".into(),
        y_label: "validation accuracy".into(),
        series: series
            .iter()
            .map(|s| (s.name.clone(), s.records.iter().map(|r| (r.epoch as f64, r.validation)).collect()))
            .collect(),
    }
}

/// Writes `<stem>.csv` and `<stem>.svg` into `dir`.
pub fn emit_report(dir: &Path, stem: &str, csv: &str, plot: &Plot) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| IrisError::io(dir, e))?;
    let svg = plot.to_svg()?;
    let csv_path = dir.join(format!("{stem}.csv"));
    fs::write(&csv_path, csv).map_err(|e| IrisError::io(&csv_path, e))?;
    let svg_path = dir.join(format!("{stem}.svg"));
    fs::write(&svg_path, svg).map_err(|e| IrisError::io(&svg_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(regime: &str, wer: f64) -> ReportRow {
        ReportRow {
            regime: regime.into(),
            split: "test".into(),
            seed: 3,
            wer,
            si_snr_db: Some(7.123456),
            substitutions: 1,
            deletions: 2,
            insertions: 0,
            ref_words: 9,
        }
    }

    #[test]
    fn csv_round_trip_keeps_four_decimals() {
        let rep = RegimeReport {
            rows: vec![row("FT_SE", 33.333333), row("no-FT", 12.5)],
        };
        let back = RegimeReport::from_csv(&rep.to_csv().unwrap()).unwrap();
        for (a, b) in rep.rows.iter().zip(&back.rows) {
            assert!((a.wer - b.wer).abs() < 5e-5);
            assert!((a.si_snr_db.unwrap() - b.si_snr_db.unwrap()).abs() < 5e-5);
            assert_eq!(a.regime, b.regime);
        }
        assert!(RegimeReport::default().to_csv().is_err());
    }

    #[test]
    fn single_point_plot_has_one_marker() {
        let plot = Plot {
            title: "t".into(),
            x_label: "epoch".into(),
            y_label: "wer".into(),
            series: vec![("only".into(), vec![(1.0, 2.0)])],
        };
        let svg = plot.to_svg().unwrap();
        assert_eq!(svg.matches(r#"class="marker""#).count(), 1);
        assert_eq!(svg, plot.to_svg().unwrap());
    }
}
