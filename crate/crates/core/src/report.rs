//! Static SVG Manhattan and QQ plots, the top-hits table and TSV mirrors of
//! every plotted series.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scan::ScanResult;
use crate::stats::neg_log10;

const WIDTH: f64 = 1000.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 20.0;
const MARGIN_BOTTOM: f64 = 50.0;
const TONES: [&str; 2] = ["#1f4e79", "#7fa7cf"];
/// HWE p-value below which a hit is flagged as a likely genotyping artifact.
pub const HWE_SUSPECT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub snp: String,
    pub chr: String,
    pub bp: u64,
    pub neg_log_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub points: Vec<PlotPoint>,
    /// `(label, p-value threshold)`.
    pub thresholds: Vec<(String, f64)>,
}

impl PlotSpec {
    /// Points of every tested SNP with the Bonferroni line and, when defined, the FDR line.
    pub fn from_scan(scan: &ScanResult) -> PlotSpec {
        let points = scan
            .records
            .iter()
            .filter_map(|r| {
                let info = &scan.snps[r.snp];
                r.p_value.map(|p| PlotPoint {
                    snp: info.name.clone(),
                    chr: info.chromosome.clone(),
                    bp: info.base_pair,
                    neg_log_p: neg_log10(p),
                })
            })
            .collect();
        PlotSpec {
            points,
            thresholds: scan_thresholds(scan),
        }
    }
}

pub fn scan_thresholds(scan: &ScanResult) -> Vec<(String, f64)> {
    let mut t = vec![("bonferroni".to_string(), scan.bonferroni)];
    if let Some(f) = scan.fdr {
        t.push(("fdr_0.05".to_string(), f));
    }
    t
}

/// Text of a threshold, shared by plots and tables.
pub fn format_threshold(label: &str, p: f64) -> String {
    format!("{label} p={p:.2e} (-log10 {:.2})", neg_log10(p))
}

/// Sort key putting chromosomes in genomic order: 1..22, X, Y, XY, MT, then others by name.
pub fn chromosome_key(chr: &str) -> (u32, String) {
    let c = chr.trim_start_matches("chr");
    match c {
        "X" | "x" | "23" => (23, String::new()),
        "Y" | "y" | "24" => (24, String::new()),
        "XY" | "25" => (25, String::new()),
        "MT" | "M" | "26" => (26, String::new()),
        _ => match c.parse::<u32>() {
            Ok(n) => (n, String::new()),
            Err(_) => (1000, c.to_string()),
        },
    }
}

/// Screen positions of a Manhattan plot.
#[derive(Debug, Clone, PartialEq)]
pub struct ManhattanLayout {
    /// Per input point: `(x, y, tone)`.
    pub points: Vec<(f64, f64, usize)>,
    /// `(label, y)` of each threshold line.
    pub lines: Vec<(String, f64)>,
    /// `(chr, x of label)` in drawing order.
    pub chromosomes: Vec<(String, f64)>,
    pub y_max: f64,
}

impl ManhattanLayout {
    pub fn y_of(&self, value: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM - value / self.y_max * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

pub fn manhattan_layout(spec: &PlotSpec) -> Result<ManhattanLayout> {
    if spec.points.is_empty() {
        return Err(Error::Empty("Manhattan plot needs at least one point".into()));
    }
    let mut chroms: Vec<(u32, String, String)> = Vec::new();
    for p in &spec.points {
        let (k, s) = chromosome_key(&p.chr);
        if !chroms.iter().any(|c| c.2 == p.chr) {
            chroms.push((k, s, p.chr.clone()));
        }
    }
    chroms.sort();
    // each chromosome spans [0, max bp] plus a fixed gap
    let spans: Vec<f64> = chroms
        .iter()
        .map(|c| spec.points.iter().filter(|p| p.chr == c.2).map(|p| p.bp).max().unwrap_or(0) as f64)
        .collect();
    let total: f64 = spans.iter().sum::<f64>().max(1.0);
    let gap = total * 0.01;
    let full = total + gap * chroms.len() as f64;
    let mut offsets = Vec::with_capacity(chroms.len());
    let mut acc = 0.0;
    for s in &spans {
        offsets.push(acc);
        acc += s + gap;
    }
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let x_of = |c: usize, bp: f64| MARGIN_LEFT + (offsets[c] + bp) / full * plot_w;
    let max_point = spec.points.iter().map(|p| p.neg_log_p.min(300.0)).fold(0.0, f64::max);
    let max_line = spec.thresholds.iter().map(|t| neg_log10(t.1)).fold(0.0, f64::max);
    let y_max = (max_point.max(max_line) * 1.05).max(1.0);
    let mut layout = ManhattanLayout {
        points: Vec::with_capacity(spec.points.len()),
        lines: Vec::new(),
        chromosomes: Vec::new(),
        y_max,
    };
    for p in &spec.points {
        let c = chroms.iter().position(|k| k.2 == p.chr).expect("chromosome indexed");
        let y = layout.y_of(p.neg_log_p.clamp(0.0, 300.0));
        layout.points.push((x_of(c, p.bp as f64), y, c % 2));
    }
    for (c, k) in chroms.iter().enumerate() {
        layout.chromosomes.push((k.2.clone(), x_of(c, spans[c] / 2.0)));
    }
    for (label, p) in &spec.thresholds {
        layout.lines.push((format_threshold(label, *p), layout.y_of(neg_log10(*p))));
    }
    Ok(layout)
}

fn svg_header(s: &mut String, title: &str) {
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(s, "<title>{title}</title>");
    let _ = writeln!(s, "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
}

fn axes(s: &mut String, y_label: &str, x_label: &str) {
    let (x0, y0) = (MARGIN_LEFT, HEIGHT - MARGIN_BOTTOM);
    let _ = writeln!(
        s,
        "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{:.2}\" y2=\"{y0:.2}\" stroke=\"black\"/>",
        WIDTH - MARGIN_RIGHT
    );
    let _ = writeln!(s, "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x0:.2}\" y2=\"{MARGIN_TOP:.2}\" stroke=\"black\"/>");
    let _ = writeln!(
        s,
        "<text x=\"15\" y=\"{:.2}\" font-size=\"12\" transform=\"rotate(-90 15 {:.2})\" text-anchor=\"middle\">{y_label}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{x_label}</text>",
        (WIDTH + MARGIN_LEFT) / 2.0,
        HEIGHT - 10.0
    );
}

fn y_ticks(s: &mut String, y_max: f64, y_of: impl Fn(f64) -> f64) {
    let step = if y_max > 50.0 { 10.0 } else if y_max > 10.0 { 2.0 } else { 1.0 };
    let mut v = 0.0;
    while v <= y_max {
        let y = y_of(v);
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"end\">{v:.0}</text>",
            MARGIN_LEFT - 5.0,
            y + 3.0
        );
        v += step;
    }
}

/// Self-contained SVG Manhattan plot.
pub fn manhattan_svg(spec: &PlotSpec) -> Result<String> {
    let layout = manhattan_layout(spec)?;
    let mut s = String::new();
    svg_header(&mut s, "Manhattan plot");
    axes(&mut s, "-log10(p)", "chromosome");
    y_ticks(&mut s, layout.y_max, |v| layout.y_of(v));
    for (x, y, tone) in &layout.points {
        let _ = writeln!(s, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2\" fill=\"{}\"/>", TONES[*tone]);
    }
    for (chr, x) in &layout.chromosomes {
        let _ = writeln!(
            s,
            "<text x=\"{x:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"middle\">{chr}</text>",
            HEIGHT - MARGIN_BOTTOM + 14.0
        );
    }
    for (label, y) in &layout.lines {
        let _ = writeln!(
            s,
            "<line x1=\"{MARGIN_LEFT:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#c0392b\" stroke-dasharray=\"4 3\"/>",
            WIDTH - MARGIN_RIGHT
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" fill=\"#c0392b\" text-anchor=\"end\">{label}</text>",
            WIDTH - MARGIN_RIGHT - 2.0,
            y - 3.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// `(expected, observed)` −log10 pairs, largest first; expected uses `(i - 0.5)/m`.
pub fn qq_points(p_values: &[f64]) -> Vec<(f64, f64)> {
    let mut p: Vec<f64> = p_values.iter().copied().filter(|p| !p.is_nan()).collect();
    p.sort_by(f64::total_cmp);
    let m = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &v)| (neg_log10((i as f64 + 0.5) / m), neg_log10(v)))
        .collect()
}

/// SVG QQ plot of observed against expected −log10 p with the identity line
/// and the inflation factor annotated.
pub fn qq_plot_svg(p_values: &[f64], lambda_gc: Option<f64>) -> Result<String> {
    let pts = qq_points(p_values);
    if pts.is_empty() {
        return Err(Error::Empty("QQ plot needs at least one p-value".into()));
    }
    let max = pts.iter().map(|p| p.0.max(p.1.min(300.0))).fold(0.0, f64::max);
    let top = (max * 1.05).max(1.0);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_of = |v: f64| MARGIN_LEFT + v / top * plot_w;
    let y_of = |v: f64| HEIGHT - MARGIN_BOTTOM - v / top * plot_h;
    let mut s = String::new();
    svg_header(&mut s, "QQ plot");
    axes(&mut s, "observed -log10(p)", "expected -log10(p)");
    y_ticks(&mut s, top, y_of);
    let _ = writeln!(
        s,
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#888888\"/>",
        x_of(0.0),
        y_of(0.0),
        x_of(top),
        y_of(top)
    );
    for (e, o) in &pts {
        let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{}\"/>", x_of(*e), y_of(o.min(300.0)), TONES[0]);
    }
    let lambda = lambda_gc.map_or("NA".to_string(), |l| format!("{l:.3}"));
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">lambda_GC = {lambda}</text>",
        MARGIN_LEFT + 10.0,
        MARGIN_TOP + 14.0
    );
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn manhattan_tsv(spec: &PlotSpec) -> String {
    let mut s = String::from("snp\tchr\tbp\tneg_log10_p\n");
    for p in &spec.points {
        let _ = writeln!(s, "{}\t{}\t{}\t{:.6}", p.snp, p.chr, p.bp, p.neg_log_p);
    }
    for (label, p) in &spec.thresholds {
        let _ = writeln!(s, "# {}", format_threshold(label, *p));
    }
    s
}

pub fn qq_tsv(p_values: &[f64]) -> String {
    let mut s = String::from("expected_neg_log10_p\tobserved_neg_log10_p\n");
    for (e, o) in qq_points(p_values) {
        let _ = writeln!(s, "{e:.6}\t{o:.6}");
    }
    s
}

/// Top `k` tested SNPs by score p-value (file order breaks ties), with LRT
/// results where available and a suspect flag for HWE p below [`HWE_SUSPECT`].
pub fn top_hits_table(scan: &ScanResult, k: usize) -> String {
    let mut s = String::new();
    for (label, p) in scan_thresholds(scan) {
        let _ = writeln!(s, "# {}", format_threshold(&label, p));
    }
    s.push_str("snp\tchr\tbp\tmaf_founders\tneg_log10_p\thwe_p\tlrt_stat\tlrt_neg_log10_p\tflag\n");
    let mut order: Vec<usize> = (0..scan.records.len()).filter(|&i| scan.records[i].tested()).collect();
    order.sort_by(|&a, &b| {
        scan.records[a].p_value.unwrap().total_cmp(&scan.records[b].p_value.unwrap()).then(a.cmp(&b))
    });
    for &i in order.iter().take(k) {
        let r = &scan.records[i];
        let info = &scan.snps[r.snp];
        let lrt = scan.top_hits.iter().find(|h| h.snp == r.snp).and_then(|h| h.lrt.as_ref());
        let suspect = r.hwe_p.is_some_and(|h| h < HWE_SUSPECT);
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{:.2}\t{}\t{}\t{}\t{}",
            info.name,
            info.chromosome,
            info.base_pair,
            r.maf_founders.map_or("NA".to_string(), |m| format!("{m:.4}")),
            neg_log10(r.p_value.unwrap()),
            r.hwe_p.map_or("NA".to_string(), |h| format!("{h:.2e}")),
            lrt.map_or("NA".to_string(), |l| format!("{:.3}", l.statistic)),
            lrt.map_or("NA".to_string(), |l| format!("{:.2}", neg_log10(l.p_value))),
            if suspect { "suspect_hwe" } else { "." }
        );
    }
    s
}

pub fn write_text(path: impl AsRef<Path>, body: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(chr: &str, bp: u64, p: f64) -> PlotPoint {
        PlotPoint {
            snp: format!("{chr}:{bp}"),
            chr: chr.into(),
            bp,
            neg_log_p: neg_log10(p),
        }
    }

    #[test]
    fn point_on_threshold_line() {
        let spec = PlotSpec {
            points: vec![point("1", 100, 1.62e-8)],
            thresholds: vec![("bonferroni".into(), 1.62e-8)],
        };
        let l = manhattan_layout(&spec).unwrap();
        assert!((l.points[0].1 - l.lines[0].1).abs() < 1e-9);
        assert!(l.lines[0].0.contains("1.62e-8") && l.lines[0].0.contains("7.79"));
    }

    #[test]
    fn unit_p_at_zero_and_zero_p_clamped() {
        let spec = PlotSpec {
            points: vec![point("1", 1, 1.0), point("2", 1, 0.0)],
            thresholds: vec![],
        };
        let l = manhattan_layout(&spec).unwrap();
        assert!((l.points[0].1 - l.y_of(0.0)).abs() < 1e-12);
        assert!((l.points[1].1 - l.y_of(300.0)).abs() < 1e-12);
    }

    #[test]
    fn genomic_order_and_tones() {
        let spec = PlotSpec {
            points: vec![point("X", 5, 0.5), point("10", 5, 0.5), point("2", 5, 0.5)],
            thresholds: vec![],
        };
        let l = manhattan_layout(&spec).unwrap();
        let names: Vec<&str> = l.chromosomes.iter().map(|c| c.0.as_str()).collect();
        assert_eq!(names, vec!["2", "10", "X"]);
        assert!(l.points[2].0 < l.points[1].0 && l.points[1].0 < l.points[0].0);
        assert_ne!(l.points[2].2, l.points[1].2);
        assert!(manhattan_layout(&PlotSpec { points: vec![], thresholds: vec![] }).is_err());
    }

    #[test]
    fn qq_single_point() {
        let pts = qq_points(&[0.5]);
        assert!((pts[0].0 - 2f64.log10()).abs() < 1e-12);
        assert!((pts[0].1 - 2f64.log10()).abs() < 1e-12);
        let svg = qq_plot_svg(&[0.5], Some(1.0)).unwrap();
        assert!(svg.contains("lambda_GC = 1.000"));
    }

    #[test]
    fn svg_is_deterministic() {
        let spec = PlotSpec {
            points: (1..50).map(|i| point(&format!("{}", i % 3 + 1), i * 10, 1.0 / i as f64)).collect(),
            thresholds: vec![("bonferroni".into(), 1e-3)],
        };
        assert_eq!(manhattan_svg(&spec).unwrap(), manhattan_svg(&spec).unwrap());
    }
}
