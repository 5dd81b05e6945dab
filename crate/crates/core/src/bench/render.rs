//! Static SVG plot and markdown table from a sweep report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::sweep::{read_jsonl, SweepRecord};
use crate::error::Result;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

/// Markdown table, one row per record.
pub fn metrics_table(records: &[SweepRecord]) -> String {
    let mut s = String::from(
        "| scenario | rate | method | removed | update ms | l2 to basel | cosine to basel | mse | accuracy | error |\n\
         |---|---|---|---|---|---|---|---|---|---|\n",
    );
    for r in records {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.scenario,
            r.rate,
            r.method,
            r.removed,
            r.update_ms.map_or_else(|| "-".to_string(), |x| format!("{x:.3}")),
            r.l2_to_basel.map_or_else(|| "-".to_string(), |x| format!("{x:.3e}")),
            fmt_opt(r.cosine_to_basel),
            fmt_opt(r.mse),
            fmt_opt(r.accuracy),
            r.error.as_deref().unwrap_or("")
        );
    }
    s
}

/// Update time against deletion rate, both axes log-scaled, one line per
/// method. Only records of the rate scenario with a positive time are drawn.
pub fn update_time_svg(records: &[SweepRecord]) -> String {
    let mut series: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.scenario == "rates") {
        if let Some(ms) = r.update_ms.filter(|&ms| ms > 0.0 && r.rate > 0.0) {
            series.entry(&r.method).or_default().push((r.rate.log10(), ms.log10()));
        }
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let points: Vec<(f64, f64)> = series.values().flatten().copied().collect();
    if points.is_empty() {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">no data</text>", WIDTH / 2.0, HEIGHT / 2.0);
        s.push_str("</svg>\n");
        return s;
    }
    let span = |f: fn(&(f64, f64)) -> f64| {
        let lo = points.iter().map(f).fold(f64::INFINITY, f64::min).floor();
        let hi = points.iter().map(f).fold(f64::NEG_INFINITY, f64::max).ceil();
        if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) }
    };
    let (x0, x1) = span(|p| p.0);
    let (y0, y1) = span(|p| p.1);
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let _ = writeln!(
        s,
        "<path d=\"M{m} {t} L{m} {b} L{r} {b}\" stroke=\"black\" fill=\"none\"/>",
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    let mut e = x0;
    while e <= x1 + 1e-9 {
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">1e{}</text>",
            px(e),
            HEIGHT - MARGIN + 18.0,
            e as i64
        );
        e += 1.0;
    }
    let mut e = y0;
    while e <= y1 + 1e-9 {
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">1e{}</text>",
            MARGIN - 6.0,
            py(e) + 4.0,
            e as i64
        );
        e += 1.0;
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">deletion rate</text>",
        WIDTH / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        "<text x=\"15\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {:.1})\">update time (ms)</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (k, (method, pts)) in series.iter_mut().enumerate() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" stroke=\"{color}\" fill=\"none\" stroke-width=\"2\"/>",
            path.join(" ")
        );
        for &(x, y) in pts.iter() {
            let _ = writeln!(s, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>", px(x), py(y));
        }
        let ly = MARGIN + 16.0 * k as f64;
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{ly:.1}\" fill=\"{color}\">{method}</text>",
            WIDTH - MARGIN - 80.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `update_time.svg` and `metrics.md` into `out_dir`.
pub fn report_render(report: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let records = read_jsonl(&std::fs::read_to_string(report)?)?;
    std::fs::create_dir_all(out_dir)?;
    let svg = out_dir.join("update_time.svg");
    let table = out_dir.join("metrics.md");
    std::fs::write(&svg, update_time_svg(&records))?;
    std::fs::write(&table, metrics_table(&records))?;
    Ok(vec![svg, table])
}
