//! Static SVG renderings of the experiment CSVs.

use std::f64::consts::TAU;
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed CSV: {0}")]
    Malformed(String),
}

type Result<T> = std::result::Result<T, PlotError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Butterfly,
    Evolution,
    Toy,
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PlotError::Malformed(format!("missing column `{name}`")))
    }
}

fn read_table(text: &str) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().any(|h| h.is_empty()) {
        return Err(PlotError::Malformed("empty header field".into()));
    }
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|_| PlotError::Malformed(format!("non-numeric field in data row {}", k + 1)))?;
        if row.iter().any(|x| !x.is_finite()) {
            return Err(PlotError::Malformed(format!("non-finite value in data row {}", k + 1)));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(PlotError::Malformed("no data rows".into()));
    }
    Ok(Table { header, rows })
}

/// Guesses the plot from the CSV header.
pub fn detect_kind(text: &str) -> Result<PlotKind> {
    let header = text
        .lines()
        .find(|l| !l.starts_with('#'))
        .ok_or_else(|| PlotError::Malformed("no header line".into()))?;
    if header.starts_with("phi,e_") {
        Ok(PlotKind::Butterfly)
    } else if header.starts_with("t,phi,P,") {
        Ok(PlotKind::Evolution)
    } else if header.starts_with("t,re_x,") {
        Ok(PlotKind::Toy)
    } else {
        Err(PlotError::Malformed(format!("unrecognized header `{header}`")))
    }
}

pub fn plot_csv(text: &str) -> Result<String> {
    match detect_kind(text)? {
        PlotKind::Butterfly => plot_butterfly(text),
        PlotKind::Evolution => plot_evolution(text),
        PlotKind::Toy => plot_toy(text),
    }
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    body: String,
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let pad = |(a, b): (f64, f64)| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        Frame {
            x: pad(x),
            y: pad(y),
            body: String::new(),
        }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }

    fn vline(&mut self, x: f64, label: &str) {
        let px = self.px(x);
        let _ = writeln!(
            self.body,
            r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#bbbbbb" stroke-dasharray="4 3"/>"##,
            TOP,
            H - BOTTOM
        );
        let _ = writeln!(
            self.body,
            r#"<text x="{px:.2}" y="{:.2}" font-size="11" text-anchor="middle">{label}</text>"#,
            H - BOTTOM + 16.0
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str) {
        let mut d = String::new();
        for (x, y) in pts {
            let _ = write!(d, "{:.2},{:.2} ", self.px(*x), self.py(*y));
        }
        let _ = writeln!(
            self.body,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
            d.trim_end()
        );
    }

    fn dots(&mut self, pts: &[(f64, f64)], color: &str) {
        let _ = writeln!(self.body, r#"<g fill="{color}">"#);
        for (x, y) in pts {
            let _ = writeln!(self.body, r#"<circle cx="{:.2}" cy="{:.2}" r="0.9"/>"#, self.px(*x), self.py(*y));
        }
        self.body.push_str("</g>\n");
    }

    fn finish(self, title: &str, xlabel: &str, ylabel: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="18" font-size="13" text-anchor="middle">{title}</text>"#,
            W / 2.0
        );
        s.push_str(&self.body);
        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        let _ = writeln!(
            s,
            r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            x1 - x0,
            y1 - y0
        );
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let yv = self.y.0 + f * (self.y.1 - self.y.0);
            let py = self.py(yv);
            let _ = writeln!(s, r#"<line x1="{x0}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="black"/>"#, x0 - 4.0);
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#,
                x0 - 6.0,
                py + 3.5,
                tick(yv)
            );
            let xv = self.x.0 + f * (self.x.1 - self.x.0);
            let px = self.px(xv);
            let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{y1}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#, y1 + 4.0);
            let _ = writeln!(
                s,
                r#"<text x="{px:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
                y1 + 30.0,
                tick(xv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{xlabel}</text>"#,
            (x0 + x1) / 2.0,
            H - 6.0
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.2})">{ylabel}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0
        );
        s.push_str("</svg>\n");
        s
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Eigenvalues against flux, one dot per level.
pub fn plot_butterfly(text: &str) -> Result<String> {
    let t = read_table(text)?;
    let phi = t.column("phi")?;
    if t.header.len() < 2 {
        return Err(PlotError::Malformed("no eigenvalue columns".into()));
    }
    let mut pts = Vec::new();
    for row in &t.rows {
        for (k, e) in row.iter().enumerate() {
            if k != phi {
                pts.push((row[phi], *e));
            }
        }
    }
    let mut f = Frame::new(range(pts.iter().map(|p| p.0)), range(pts.iter().map(|p| p.1)));
    let mut n = (f.x.0 / TAU).ceil() as i64;
    while (n as f64) * TAU <= f.x.1 {
        f.vline(n as f64 * TAU, &format!("{}π", 2 * n));
        n += 1;
    }
    f.dots(&pts, "#1f4e9c");
    Ok(f.finish("Spectrum versus flux", "φ", "E"))
}

/// Flat-band projection against flux with gridlines at multiples of 2π.
pub fn plot_evolution(text: &str) -> Result<String> {
    let t = read_table(text)?;
    let (phi, p) = (t.column("phi")?, t.column("P")?);
    let pts: Vec<(f64, f64)> = t.rows.iter().map(|r| (r[phi], r[p])).collect();
    let (lo, _) = range(pts.iter().map(|q| q.1));
    let mut f = Frame::new(range(pts.iter().map(|q| q.0)), (lo.min(0.8), 1.0));
    let mut n = (f.x.0 / TAU).ceil() as i64;
    while (n as f64) * TAU <= f.x.1 {
        f.vline(n as f64 * TAU, &format!("{}π", 2 * n));
        n += 1;
    }
    f.polyline(&pts, "#b22222");
    Ok(f.finish("Flat-band projection", "φ", "P"))
}

fn toy_omega1(text: &str) -> Result<f64> {
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        if let Some(rest) = line.split("omega1 = ").nth(1) {
            let v = rest.split(',').next().unwrap_or("").trim();
            return v
                .parse()
                .map_err(|_| PlotError::Malformed(format!("cannot read omega1 from `{line}`")));
        }
    }
    Err(PlotError::Malformed("comment block does not give omega1".into()))
}

/// Zero-mode projection against `omega1 t`.
pub fn plot_toy(text: &str) -> Result<String> {
    let omega1 = toy_omega1(text)?;
    let t = read_table(text)?;
    let (tc, p0) = (t.column("t")?, t.column("P0")?);
    let pts: Vec<(f64, f64)> = t.rows.iter().map(|r| (omega1 * r[tc], r[p0])).collect();
    let (lo, _) = range(pts.iter().map(|q| q.1));
    let mut f = Frame::new(range(pts.iter().map(|q| q.0)), (lo.min(0.8), 1.0));
    let mut n = (f.x.0 / std::f64::consts::PI).ceil() as i64;
    while (n as f64) * std::f64::consts::PI <= f.x.1 {
        f.vline(n as f64 * std::f64::consts::PI, &format!("{n}π"));
        n += 1;
    }
    f.polyline(&pts, "#2e7d32");
    Ok(f.finish("Three-level zero-mode projection", "ω1t", "P0"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const EVOLUTION: &str = "# evolution trace\nt,phi,P,w_plus,w_minus,energy,norm\n0,3.0,1.0,0,0,0,1\n1,7.0,0.95,0,0,0,1\n";

    #[test]
    fn detects_kinds() {
        assert_eq!(detect_kind("phi,e_1,e_2\n0,1,2\n").unwrap(), PlotKind::Butterfly);
        assert_eq!(detect_kind(EVOLUTION).unwrap(), PlotKind::Evolution);
        assert!(detect_kind("a,b\n1,2\n").is_err());
    }

    #[test]
    fn evolution_plot_has_crossing_gridline() {
        let svg = plot_csv(EVOLUTION).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("2π"));
        assert!(svg.contains("<polyline"));
        assert!(svg.contains(">φ<"));
    }

    #[test]
    fn toy_plot_uses_scaled_time() {
        let text = "# three-level trace\n# eps0 = 1, omega1 = 2, omega2 = 1, angle = Linear\nt,re_x,im_x,re_y,im_y,re_z,im_z,P0,energy,norm\n0.5,1,0,0,0,0,0,1,0,1\n2.0,1,0,0,0,0,0,0.9,0,1\n";
        let svg = plot_csv(text).unwrap();
        assert!(svg.contains("ω1t"));
        assert!(svg.contains(">1π<"));
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(plot_evolution("t,phi,P,w_plus,w_minus,energy,norm\n0,1,abc,0,0,0,1\n").is_err());
        assert!(plot_evolution("t,phi,P,w_plus,w_minus,energy,norm\n0,1,0.5\n").is_err());
        assert!(plot_evolution("t,phi,P,w_plus,w_minus,energy,norm\n").is_err());
        assert!(plot_butterfly("phi,e_1\n0,NaN\n").is_err());
        assert!(plot_evolution("t,phi,w_plus\n0,1,2\n").is_err());
    }
}
