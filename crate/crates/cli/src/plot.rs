//! Minimal SVG line chart of correlation against λ.

use std::fmt::Write;

use qchunker_core::metrics::SweepRow;

const W: f64 = 640.0;
const H: f64 = 400.0;
const M: f64 = 50.0;

pub fn sweep_svg(rows: &[SweepRow], argmax: Option<usize>) -> String {
    let defined: Vec<f64> = rows.iter().filter_map(|r| r.r).collect();
    let (mut lo, mut hi) = defined
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if defined.is_empty() {
        (lo, hi) = (-1.0, 1.0);
    }
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let (l0, l1) = match (rows.first(), rows.last()) {
        (Some(a), Some(b)) if b.lambda > a.lambda => (a.lambda, b.lambda),
        _ => (0.0, 1.0),
    };
    let x = |l: f64| M + (l - l0) / (l1 - l0) * (W - 2.0 * M);
    let y = |r: f64| H - M - (r - lo) / (hi - lo) * (H - 2.0 * M);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{M} {} H{} M{M} {M} V{}" stroke="black" fill="none"/>"#,
        H - M,
        W - M,
        H - M
    );
    for i in 0..=4 {
        let l = l0 + (l1 - l0) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" font-size="12" text-anchor="middle">{l:.2}</text>"#, x(l), H - M + 18.0);
        let r = lo + (hi - lo) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" font-size="12" text-anchor="end">{r:.3}</text>"#, M - 6.0, y(r) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">lambda</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(s, r#"<text x="14" y="{}" font-size="13" transform="rotate(-90 14 {})" text-anchor="middle">pearson r</text>"#, H / 2.0, H / 2.0);

    // one polyline per run of defined rows
    let mut run: Vec<String> = Vec::new();
    let flush = |run: &mut Vec<String>, s: &mut String| {
        if run.len() > 1 {
            let _ = writeln!(s, r#"<polyline points="{}" stroke="steelblue" stroke-width="2" fill="none"/>"#, run.join(" "));
        }
        run.clear();
    };
    for row in rows {
        match row.r {
            Some(r) => run.push(format!("{:.1},{:.1}", x(row.lambda), y(r))),
            None => flush(&mut run, &mut s),
        }
    }
    flush(&mut run, &mut s);
    if let Some(row) = argmax.map(|i| rows[i]) {
        let r = row.r.unwrap_or(lo);
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="crimson"/>"#, x(row.lambda), y(r));
    }
    s.push_str("</svg>\n");
    s
}
