//! Results CSV to a two-panel SVG (NMSE and SDR against the sweep variable).

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub x: f64,
    pub nmse_db: f64,
    pub nmse_ci: f64,
    pub sdr: f64,
    pub sdr_ci: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// `snr_db` or `pilots`.
    pub axis: String,
    /// Series in order of first appearance.
    pub series: Vec<(String, Vec<Point>)>,
}

pub fn parse_results(text: &str) -> Result<Table, String> {
    let axis = text
        .lines()
        .filter(|l| l.starts_with('#'))
        .flat_map(|l| l.split_whitespace())
        .find_map(|w| w.strip_prefix("axis="))
        .unwrap_or("snr_db")
        .to_string();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| format!("missing column {name}"));
    let (cx, cm, cn, cnc, cs, csc) = (col("sweep_var")?, col("method")?, col("nmse_db")?, col("nmse_ci")?, col("sdr")?, col("sdr_ci")?);
    let mut series: Vec<(String, Vec<Point>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let num = |c: usize| -> Result<f64, String> {
            let s = rec.get(c).unwrap_or("");
            s.trim().parse::<f64>().map_err(|_| format!("row {}: {s:?} is not a number", i + 1))
        };
        let p = Point { x: num(cx)?, nmse_db: num(cn)?, nmse_ci: num(cnc)?, sdr: num(cs)?, sdr_ci: num(csc)? };
        let method = rec.get(cm).unwrap_or("").to_string();
        match series.iter_mut().find(|(m, _)| *m == method) {
            Some((_, pts)) => pts.push(p),
            None => series.push((method, vec![p])),
        }
    }
    if series.is_empty() {
        return Err("no result rows".into());
    }
    for (_, pts) in series.iter_mut() {
        pts.sort_by(|a, b| a.x.total_cmp(&b.x));
    }
    Ok(Table { axis, series })
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const W: f64 = 420.0;
const H: f64 = 300.0;
const LEFT: f64 = 64.0;
const TOP: f64 = 30.0;
const GAP: f64 = 90.0;

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

/// Padded range and tick step covering `lo..hi`.
fn axis_range(lo: f64, hi: f64) -> (f64, f64, f64) {
    let (lo, hi) = if hi - lo < 1e-9 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let step = nice_step(hi - lo);
    ((lo / step).floor() * step, (hi / step).ceil() * step, step)
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = (0..6).find(|d| ((step * 10f64.powi(*d as i32)).fract()).abs() < 1e-9).unwrap_or(6);
    let s = format!("{v:.decimals$}");
    if s.starts_with("-0") && s.trim_start_matches(['-', '0', '.']).is_empty() {
        s[1..].to_string()
    } else {
        s
    }
}

struct Panel {
    x0: f64,
    xr: (f64, f64, f64),
    yr: (f64, f64, f64),
}

impl Panel {
    fn px(&self, x: f64) -> f64 {
        self.x0 + (x - self.xr.0) / (self.xr.1 - self.xr.0) * W
    }

    fn py(&self, y: f64) -> f64 {
        TOP + H - (y - self.yr.0) / (self.yr.1 - self.yr.0) * H
    }
}

fn draw_axes(s: &mut String, p: &Panel, xlabel: &str, ylabel: &str, xticks: &[f64]) {
    let _ = writeln!(s, r##"<rect x="{:.1}" y="{TOP}" width="{W}" height="{H}" fill="none" stroke="#333"/>"##, p.x0);
    for &t in xticks {
        let x = p.px(t);
        let _ = writeln!(s, r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#333"/>"##, TOP + H, TOP + H + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, TOP + H + 19.0, fmt_tick(t, p.xr.2));
    }
    let (lo, hi, step) = p.yr;
    let n = ((hi - lo) / step).round() as usize;
    for k in 0..=n {
        let v = lo + k as f64 * step;
        let y = p.py(v);
        let _ = writeln!(s, r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, p.x0, p.x0 + W);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, p.x0 - 6.0, y + 4.0, fmt_tick(v, step));
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xlabel}</text>"#, p.x0 + W / 2.0, TOP + H + 40.0);
    let (cx, cy) = (p.x0 - 46.0, TOP + H / 2.0);
    let _ = writeln!(s, r#"<text x="{cx:.1}" y="{cy:.1}" text-anchor="middle" transform="rotate(-90 {cx:.1} {cy:.1})">{ylabel}</text>"#);
}

fn draw_series(s: &mut String, p: &Panel, color: &str, pts: &[(f64, f64, f64)]) {
    let path: Vec<String> = pts.iter().map(|(x, y, _)| format!("{:.1},{:.1}", p.px(*x), p.py(*y))).collect();
    if path.len() > 1 {
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#, path.join(" "));
    }
    for (x, y, ci) in pts {
        let (cx, cy) = (p.px(*x), p.py(*y));
        if *ci > 0.0 {
            let _ = writeln!(s, r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="{color}"/>"#, p.py(y + ci), p.py(y - ci));
        }
        let _ = writeln!(s, r#"<circle cx="{cx:.1}" cy="{cy:.1}" r="3" fill="{color}"/>"#);
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render(t: &Table) -> String {
    let xlabel = match t.axis.as_str() {
        "pilots" => "Number of pilots P",
        _ => "SNR (dB)",
    };
    let all = || t.series.iter().flat_map(|(_, p)| p.iter());
    let xs: Vec<f64> = {
        let mut v: Vec<f64> = all().map(|p| p.x).filter(|x| x.is_finite()).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let (xmin, xmax) = (xs.first().copied().unwrap_or(0.0), xs.last().copied().unwrap_or(1.0));
    let xr = if xmax > xmin { (xmin, xmax, 1.0) } else { (xmin - 1.0, xmax + 1.0, 1.0) };
    let fin = |v: f64| v.is_finite();
    let nlo = all().filter(|p| fin(p.nmse_db)).map(|p| p.nmse_db - p.nmse_ci.max(0.0)).fold(f64::INFINITY, f64::min);
    let nhi = all().filter(|p| fin(p.nmse_db)).map(|p| p.nmse_db + p.nmse_ci.max(0.0)).fold(f64::NEG_INFINITY, f64::max);
    let slo = all().filter(|p| fin(p.sdr)).map(|p| p.sdr - p.sdr_ci.max(0.0)).fold(f64::INFINITY, f64::min);
    let nmse = Panel { x0: LEFT, xr, yr: if nlo.is_finite() { axis_range(nlo, nhi) } else { (0.0, 1.0, 0.2) } };
    let sdr = Panel { x0: LEFT + W + GAP, xr, yr: if slo.is_finite() { axis_range(slo.min(1.0), 1.0) } else { (0.0, 1.0, 0.2) } };

    let width = LEFT + 2.0 * W + GAP + 30.0;
    let height = TOP + H + 60.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    draw_axes(&mut s, &nmse, xlabel, "NMSE (dB)", &xs);
    draw_axes(&mut s, &sdr, xlabel, "SDR", &xs);
    for (i, (name, pts)) in t.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let np: Vec<(f64, f64, f64)> = pts.iter().filter(|p| fin(p.nmse_db)).map(|p| (p.x, p.nmse_db, p.nmse_ci.max(0.0))).collect();
        let sp: Vec<(f64, f64, f64)> = pts.iter().filter(|p| fin(p.sdr)).map(|p| (p.x, p.sdr, p.sdr_ci.max(0.0))).collect();
        let _ = writeln!(s, r#"<g class="series" data-method="{}">"#, escape(name));
        draw_series(&mut s, &nmse, color, &np);
        draw_series(&mut s, &sdr, color, &sp);
        s.push_str("</g>\n");
        let ly = TOP + 16.0 + 16.0 * i as f64;
        let lx = nmse.x0 + W - 150.0;
        let _ = writeln!(s, r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 24.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "# config_hash=abc data_hash=d master_seed=1\n# axis=pilots snr_db=10\n\
sweep_var,method,nmse_db,nmse_ci,sdr,sdr_ci,n_samples,failures\n\
16,a,-5,0.2,0.9,0.01,10,0\n24,a,-7,0.2,0.95,0.01,10,0\n16,b,-3,0.3,NaN,NaN,10,0\n24,b,-4,0.3,NaN,NaN,10,0\n";

    #[test]
    fn parses_series_and_axis() {
        let t = parse_results(CSV).unwrap();
        assert_eq!(t.axis, "pilots");
        assert_eq!(t.series.len(), 2);
        assert_eq!(t.series[0].1.len(), 2);
        assert!(t.series[1].1[0].sdr.is_nan());
    }

    #[test]
    fn two_methods_give_two_series_and_labels_carry_units() {
        let svg = render(&parse_results(CSV).unwrap());
        assert_eq!(svg.matches(r#"class="series""#).count(), 2);
        assert!(svg.contains("NMSE (dB)"));
        assert!(svg.contains("Number of pilots"));
        assert_eq!(svg, render(&parse_results(CSV).unwrap()));
    }

    #[test]
    fn malformed_rows_are_rejected() {
        assert!(parse_results("sweep_var,method\n1,a\n").is_err());
        let bad = CSV.replace("-5,0.2", "oops,0.2");
        assert!(parse_results(&bad).is_err());
        assert!(parse_results("sweep_var,method,nmse_db,nmse_ci,sdr,sdr_ci\n").is_err());
    }

    #[test]
    fn ticks_are_round() {
        assert_eq!(nice_step(10.0), 2.0);
        assert_eq!(axis_range(-12.3, -3.1), (-14.0, -2.0, 2.0));
        assert_eq!(fmt_tick(-0.0, 0.5), "0.0");
        assert_eq!(fmt_tick(0.75, 0.25), "0.75");
        assert_eq!(fmt_tick(-10.0, 2.0), "-10");
    }
}
