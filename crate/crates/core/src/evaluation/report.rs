use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{macro_avg, EvalResult, Prf};
use crate::model::registry;
use crate::phonology::Dimension;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Svg,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(Error::Config(format!("unknown report format {other:?} (csv, svg)"))),
        }
    }
}

/// Results sorted by the registry's mode order.
fn ordered<'a>(results: &'a [EvalResult], dim: Dimension) -> Vec<&'a EvalResult> {
    let rank = |m: &str| registry().iter().position(|r| r.name() == m).unwrap_or(usize::MAX);
    let mut v: Vec<&EvalResult> = results.iter().filter(|r| r.dimension == dim).collect();
    v.sort_by(|a, b| rank(&a.mode).cmp(&rank(&b.mode)).then_with(|| a.mode.cmp(&b.mode)));
    v
}

/// Class rows by mode-metric columns, AVG last. Each mode contributes pooled
/// and fold-mean precision, recall and F1.
pub fn write_csv(results: &[EvalResult], dim: Dimension, path: &Path) -> Result<()> {
    let rs = ordered(results, dim);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["class".to_string()];
    for r in &rs {
        for suffix in ["prec", "rec", "f1", "prec_foldmean", "rec_foldmean", "f1_foldmean"] {
            header.push(format!("{}_{suffix}", r.mode));
        }
    }
    w.write_record(&header)?;
    let tables: Vec<(Vec<Prf>, Vec<Prf>)> = rs.iter().map(|r| (r.pooled(), r.fold_mean())).collect();
    let cells = |p: &Prf| [p.precision, p.recall, p.f1].map(|v| v.to_string());
    for (c, name) in dim.class_names().iter().enumerate() {
        let mut row = vec![name.to_string()];
        for (pooled, mean) in &tables {
            row.extend(cells(&pooled[c]));
            row.extend(cells(&mean[c]));
        }
        w.write_record(&row)?;
    }
    let mut avg = vec!["AVG".to_string()];
    for (pooled, mean) in &tables {
        avg.extend(cells(&macro_avg(pooled)));
        avg.extend(cells(&macro_avg(mean)));
    }
    w.write_record(&avg)?;
    let mut bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    bytes.extend_from_slice(b"# AVG is the unweighted mean over the class rows above.\n");
    bytes.extend_from_slice(b"# Pooled columns score all folds' frames together; foldmean columns average per-fold scores.\n");
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"];

/// Grouped bar chart of pooled macro-F1, one group per dimension and one bar
/// per mode.
pub fn render_svg(results: &[EvalResult]) -> String {
    let dims: Vec<Dimension> = Dimension::ALL.into_iter().filter(|d| results.iter().any(|r| r.dimension == *d)).collect();
    let mut modes: Vec<String> = Vec::new();
    for d in &dims {
        for r in ordered(results, *d) {
            if !modes.contains(&r.mode) {
                modes.push(r.mode.clone());
            }
        }
    }
    let (bar, gap, top, left, plot_h) = (36.0, 40.0, 40.0, 56.0, 240.0);
    let group_w = bar * modes.len().max(1) as f64;
    let plot_w = (group_w + gap) * dims.len().max(1) as f64 + gap;
    let width = left + plot_w + 20.0;
    let height = top + plot_h + 70.0 + 18.0 * modes.len() as f64;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">Macro F1 by task and mode</text>"#, width / 2.0);
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let y = top + plot_h * (1.0 - v);
        let _ = writeln!(s, r##"<line x1="{left:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, left + plot_w);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#, left - 6.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<line x1="{left:.1}" y1="{top:.1}" x2="{left:.1}" y2="{:.1}" stroke="black"/>"#, top + plot_h);
    let _ = writeln!(s, r#"<line x1="{left:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#, top + plot_h, left + plot_w, top + plot_h);
    for (g, d) in dims.iter().enumerate() {
        let x0 = left + gap + g as f64 * (group_w + gap);
        for r in ordered(results, *d) {
            let m = modes.iter().position(|x| *x == r.mode).unwrap_or(0);
            let f1 = macro_avg(&r.pooled()).f1.clamp(0.0, 1.0);
            let h = plot_h * f1;
            let x = x0 + m as f64 * bar;
            let y = top + plot_h - h;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{h:.1}" fill="{}"><title>{} {}: {f1:.2}</title></rect>"#,
                bar - 4.0,
                PALETTE[m % PALETTE.len()],
                esc(&r.mode),
                d
            );
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">{f1:.2}</text>"#, x + (bar - 4.0) / 2.0, y - 3.0);
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{d}</text>"#, x0 + group_w / 2.0, top + plot_h + 18.0);
    }
    for (m, name) in modes.iter().enumerate() {
        let y = top + plot_h + 40.0 + 18.0 * m as f64;
        let _ = writeln!(s, r#"<rect x="{left:.1}" y="{:.1}" width="12" height="12" fill="{}"/>"#, y - 10.0, PALETTE[m % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{y:.1}">{}</text>"#, left + 18.0, esc(name));
    }
    s.push_str("</svg>\n");
    s
}

/// Write one CSV and/or SVG per dimension present in `results`. Returns the paths written.
pub fn emit_report(results: &[EvalResult], dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for d in Dimension::ALL {
        let subset: Vec<EvalResult> = results.iter().filter(|r| r.dimension == d).cloned().collect();
        if subset.is_empty() {
            continue;
        }
        for f in formats {
            let path = match f {
                ReportFormat::Csv => dir.join(format!("{d}.csv")),
                ReportFormat::Svg => dir.join(format!("{d}.svg")),
            };
            match f {
                ReportFormat::Csv => write_csv(&subset, d, &path)?,
                ReportFormat::Svg => std::fs::write(&path, render_svg(&subset)).map_err(|e| Error::io(&path, e))?,
            }
            written.push(path);
        }
    }
    Ok(written)
}

/// Plain-text table of per-class metrics, two decimals.
pub fn summary(result: &EvalResult) -> String {
    let pooled = result.pooled();
    let mut s = String::new();
    let _ = writeln!(s, "{} / {} ({} fold(s))", result.mode, result.dimension, result.folds.len());
    let _ = writeln!(s, "{:<14}{:>6}{:>6}{:>6}", "class", "Prec", "Rec", "F1");
    for (name, m) in result.dimension.class_names().iter().zip(&pooled) {
        let _ = writeln!(s, "{name:<14}{:>6.2}{:>6.2}{:>6.2}", m.precision, m.recall, m.f1);
    }
    let a = macro_avg(&pooled);
    let _ = write!(s, "{:<14}{:>6.2}{:>6.2}{:>6.2}", "AVG", a.precision, a.recall, a.f1);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{ConfusionMatrix, FoldResult};

    fn result(mode: &str, dim: Dimension) -> EvalResult {
        let c = dim.n_classes();
        let mut cm = ConfusionMatrix::new(c);
        for k in 0..c {
            cm.counts[k * c + k] = 5 + k as u64;
            cm.counts[k * c + (k + 1) % c] = 2;
        }
        EvalResult { mode: mode.into(), dimension: dim, folds: vec![FoldResult { fold: 0, split: "test".into(), confusion: cm }] }
    }

    #[test]
    fn csv_shape_and_roundtrip() {
        let d = tempfile::tempdir().unwrap();
        let rs = vec![result("contrast", Dimension::Manner), result("univ", Dimension::Manner)];
        let path = d.path().join("m.csv");
        write_csv(&rs, Dimension::Manner, &path).unwrap();
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(&path).unwrap();
        let header = rdr.headers().unwrap().clone();
        assert_eq!(&header[1], "univ_prec");
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 7);
        assert_eq!(&rows[6][0], "AVG");
        let f1s: Vec<f64> = rows[..6].iter().map(|r| r[3].parse().unwrap()).collect();
        let avg: f64 = rows[6][3].parse().unwrap();
        assert!((f1s.iter().sum::<f64>() / 6.0 - avg).abs() < 1e-12);
    }

    #[test]
    fn svg_is_deterministic() {
        let rs = vec![result("fusion", Dimension::Place), result("unia", Dimension::Voicing)];
        let a = render_svg(&rs);
        assert_eq!(a, render_svg(&rs));
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
    }
}
