//! Minimal SVG line charts of result tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::output::Table;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Clone, Debug, Default)]
pub struct PlotOptions {
    pub title: String,
    /// Column on the horizontal axis; the first column if `None`.
    pub x: Option<String>,
    /// Plotted columns; every other column if empty.
    pub y: Vec<String>,
    pub log_y: bool,
}

struct Series {
    name: String,
    points: Vec<Option<(f64, f64)>>,
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Renders `table` as an SVG document.
pub fn render_svg(table: &Table, opts: &PlotOptions) -> Result<String> {
    if table.rows.is_empty() {
        return Err(Error::Plot("table has no data rows".into()));
    }
    let x_name = opts.x.clone().unwrap_or_else(|| table.header[0].clone());
    let xs = table
        .column(&x_name)
        .ok_or_else(|| Error::Plot(format!("no column `{x_name}`")))?;
    let y_names: Vec<String> = if opts.y.is_empty() {
        table
            .header
            .iter()
            .filter(|h| **h != x_name)
            .cloned()
            .collect()
    } else {
        opts.y.clone()
    };
    if y_names.is_empty() {
        return Err(Error::Plot("nothing to plot besides the x column".into()));
    }

    let mut series = Vec::new();
    for name in &y_names {
        let ys = table
            .column(name)
            .ok_or_else(|| Error::Plot(format!("no column `{name}`")))?;
        let points = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| match (*x, y) {
                (Some(x), Some(y)) if x.is_finite() && y.is_finite() => {
                    if opts.log_y {
                        (y > 0.0).then(|| (x, y.log10()))
                    } else {
                        Some((x, y))
                    }
                }
                _ => None,
            })
            .collect();
        series.push(Series {
            name: name.clone(),
            points,
        });
    }

    let all: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().flatten().copied())
        .collect();
    if all.is_empty() {
        return Err(Error::Plot("no plottable values".into()));
    }
    let (mut x0, mut x1) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.0), b.max(p.0))
        });
    let (mut y0, mut y1) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.1), b.max(p.1))
        });
    if x1 <= x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if opts.log_y {
        y0 = y0.floor();
        y1 = y1.ceil().max(y0 + 1.0);
    } else if y1 <= y0 {
        y0 -= 0.5;
        y1 += 0.5;
    } else {
        let pad = 0.05 * (y1 - y0);
        y0 -= pad;
        y1 += pad;
    }

    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    if !opts.title.is_empty() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&opts.title)
        );
    }
    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );

    for t in nice_ticks(x0, x1) {
        let x = sx(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 20.0,
            label(t)
        );
    }
    let y_ticks: Vec<(f64, String)> = if opts.log_y {
        let stride = ((y1 - y0) / 8.0).ceil().max(1.0) as i64;
        (y0 as i64..=y1 as i64)
            .filter(|k| (k - y0 as i64) % stride == 0)
            .map(|k| (k as f64, format!("1e{k}")))
            .collect()
    } else {
        nice_ticks(y0, y1)
            .into_iter()
            .map(|t| (t, label(t)))
            .collect()
    };
    for (t, text) in y_ticks {
        let y = sy(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="#333"/><line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{text}</text>"##,
            LEFT - 5.0,
            LEFT + pw,
            LEFT - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0,
        escape(&x_name)
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut d = String::new();
        let mut pen_down = false;
        for p in &s.points {
            match p {
                Some((x, y)) => {
                    let _ = write!(
                        d,
                        "{}{:.2},{:.2} ",
                        if pen_down { "L" } else { "M" },
                        sx(*x),
                        sy(*y)
                    );
                    pen_down = true;
                }
                None => pen_down = false,
            }
        }
        let _ = writeln!(
            svg,
            r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            d.trim_end()
        );
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Renders and writes the chart; nothing is written if rendering fails.
pub fn write_svg(table: &Table, opts: &PlotOptions, path: &Path) -> Result<()> {
    let svg = render_svg(table, opts)?;
    fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: Vec<Vec<Option<f64>>>) -> Table {
        Table {
            header: vec!["tau".into(), "s1".into(), "s2".into()],
            rows,
        }
    }

    #[test]
    fn empty_table_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.svg");
        assert!(write_svg(&table(vec![]), &PlotOptions::default(), &path).is_err());
        assert!(!path.exists());
    }

    #[test]
    fn gaps_split_the_line() {
        let t = table(vec![
            vec![Some(0.0), Some(1e-3), Some(1.0)],
            vec![Some(1.0), None, Some(2.0)],
            vec![Some(2.0), Some(1e-5), Some(3.0)],
        ]);
        let svg = render_svg(&t, &PlotOptions::default()).unwrap();
        assert!(svg.starts_with("<svg"));
        let s1_path = svg
            .lines()
            .find(|l| l.starts_with("<path") && l.contains("#1f77b4"))
            .unwrap();
        assert_eq!(s1_path.matches('M').count(), 2);
        assert_eq!(s1_path.matches('L').count(), 0);
    }

    #[test]
    fn log_axis_drops_non_positive_values() {
        let t = table(vec![
            vec![Some(0.0), Some(1e-3), Some(0.0)],
            vec![Some(1.0), Some(1e-6), Some(0.0)],
        ]);
        let opts = PlotOptions {
            y: vec!["s1".into()],
            log_y: true,
            ..PlotOptions::default()
        };
        let svg = render_svg(&t, &opts).unwrap();
        assert!(svg.contains(">1e-6<") && svg.contains(">1e-3<"));
        let only_zero = PlotOptions {
            y: vec!["s2".into()],
            log_y: true,
            ..PlotOptions::default()
        };
        assert!(render_svg(&t, &only_zero).is_err());
    }

    #[test]
    fn unknown_column() {
        let t = table(vec![vec![Some(0.0), Some(1.0), Some(1.0)]]);
        let opts = PlotOptions {
            y: vec!["s9".into()],
            ..PlotOptions::default()
        };
        assert!(render_svg(&t, &opts).is_err());
    }

    #[test]
    fn ticks_cover_range() {
        let t = nice_ticks(0.0, 60.0);
        assert_eq!(t.first(), Some(&0.0));
        assert_eq!(t.last(), Some(&60.0));
        assert!(t.len() >= 4);
    }
}
