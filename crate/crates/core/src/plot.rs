//! Static SVG figures and their underlying CSV tables for an [`EvalReport`].

use std::fmt::Write as _;

use crate::eval::EvalReport;
use crate::Result;

const W: f64 = 800.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f3a93", "#222222", "#c0392b", "#27ae60", "#8e44ad", "#d35400"];

struct Series<'a> {
    name: &'a str,
    y: &'a [f64],
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn chart(title: &str, x_label: &str, x: &[f64], series: &[Series<'_>]) -> String {
    let (x0, x1) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (mut y0, mut y1) = series
        .iter()
        .flat_map(|s| s.y.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    y0 = y0.min(0.0);
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let xr = if x1 > x0 { x1 - x0 } else { 1.0 };
    let px = |v: f64| MARGIN + (v - x0) / xr * (W - 2.0 * MARGIN);
    let py = |v: f64| H - MARGIN - (v - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{m} {t} V{b} H{r}" fill="none" stroke="black"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 12.0,
        escape(x_label)
    );
    for (v, anchor_y) in [(y0, py(y0)), (y1, py(y1))] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            MARGIN - 4.0,
            anchor_y + 4.0,
            v
        );
    }
    for (v, anchor_x) in [(x0, px(x0)), (x1, px(x1))] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            anchor_x,
            H - MARGIN + 16.0,
            v
        );
    }
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut d = String::new();
        for (k, (&xv, &yv)) in x.iter().zip(ser.y).enumerate() {
            let _ = write!(d, "{}{:.2} {:.2}", if k == 0 { "M" } else { " L" }, px(xv), py(yv));
        }
        let _ = writeln!(
            s,
            r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"><title>{}</title></path>"#,
            escape(ser.name)
        );
        let ly = MARGIN + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            W - MARGIN - 140.0,
            W - MARGIN - 120.0,
            W - MARGIN - 115.0,
            ly + 4.0,
            escape(ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn table(header: &[String], cols: &[&[f64]]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    let n = cols.first().map_or(0, |c| c.len());
    for k in 0..n {
        let row: Vec<String> = cols.iter().map(|c| c[k].to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Command, measured and predicted speed against time.
pub fn overlay_csv(r: &EvalReport) -> String {
    let mut header = vec!["t".into(), "cmd_speed".into(), "actual_speed".into()];
    let mut cols: Vec<&[f64]> = vec![&r.t, &r.cmd_speed, &r.actual_speed];
    for m in &r.methods {
        header.push(format!("{}_predicted", m.method));
        cols.push(&m.predicted);
    }
    table(&header, &cols)
}

/// Accumulated error of every method against time.
pub fn accumulated_csv(r: &EvalReport) -> String {
    let mut header = vec!["t".to_string()];
    let mut cols: Vec<&[f64]> = vec![&r.t];
    for m in &r.methods {
        header.push(format!("{}_accumulated", m.method));
        cols.push(&m.accumulated);
    }
    table(&header, &cols)
}

pub fn overlay_svg(r: &EvalReport) -> String {
    let mut series = vec![
        Series {
            name: "commanded",
            y: &r.cmd_speed,
        },
        Series {
            name: "actual",
            y: &r.actual_speed,
        },
    ];
    series.extend(r.methods.iter().map(|m| Series {
        name: &m.method,
        y: &m.predicted,
    }));
    chart(&format!("Speed, run {}", r.run_id), "time", &r.t, &series)
}

pub fn accumulated_svg(r: &EvalReport) -> String {
    let series: Vec<Series<'_>> = r
        .methods
        .iter()
        .map(|m| Series {
            name: &m.method,
            y: &m.accumulated,
        })
        .collect();
    chart(
        &format!("Accumulated error, run {}", r.run_id),
        "time",
        &r.t,
        &series,
    )
}

/// The two figures and two tables, keyed by file suffix.
pub fn render_all(r: &EvalReport) -> Result<Vec<(&'static str, String)>> {
    r.validate()?;
    Ok(vec![
        ("overlay.svg", overlay_svg(r)),
        ("overlay.csv", overlay_csv(r)),
        ("accumulated.svg", accumulated_svg(r)),
        ("accumulated.csv", accumulated_csv(r)),
    ])
}
