//! Plot-data emission: pooled per-method curves and static SVG line charts.

use std::collections::BTreeMap;

use crate::hash::stable_hash;
use crate::pipeline::bootstrap_interval;
use crate::rundir::{rate_sort_key, PairRow, PointRow};

/// One row of an emitted curve: pooled mean and 95% interval per rate.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CurvePoint {
    pub rate: String,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub count: usize,
}

fn sorted_curve(mut points: Vec<CurvePoint>) -> Vec<CurvePoint> {
    points.sort_by(|a, b| {
        rate_sort_key(&a.rate)
            .partial_cmp(&rate_sort_key(&b.rate))
            .expect("sortable rates")
    });
    points
}

/// Pool raw pairwise scores per (method, rate) across tasks and models,
/// with percentile-bootstrap intervals. Scores are sorted before
/// resampling, so input order does not matter.
pub fn curves_from_pairs(pairs: &[PairRow], seed: u64) -> BTreeMap<String, Vec<CurvePoint>> {
    let mut pooled: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for row in pairs {
        pooled
            .entry((row.method.clone(), row.rate.clone()))
            .or_default()
            .push(row.tsed);
    }
    let mut curves: BTreeMap<String, Vec<CurvePoint>> = BTreeMap::new();
    for ((method, rate), mut scores) in pooled {
        scores.sort_by(|a, b| a.partial_cmp(b).expect("no NaN scores"));
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let point_seed = stable_hash(&[
            b"report",
            method.as_bytes(),
            rate.as_bytes(),
            &seed.to_le_bytes(),
        ]);
        let (ci_low, ci_high) = bootstrap_interval(&scores, point_seed);
        curves.entry(method).or_default().push(CurvePoint {
            rate,
            mean,
            ci_low: ci_low.min(mean),
            ci_high: ci_high.max(mean),
            count: scores.len(),
        });
    }
    curves
        .into_iter()
        .map(|(m, c)| (m, sorted_curve(c)))
        .collect()
}

/// Fallback pooling when only `points.csv` is available: count-weighted
/// means with a conservative envelope of the per-task intervals.
pub fn curves_from_points(points: &[PointRow]) -> BTreeMap<String, Vec<CurvePoint>> {
    let mut pooled: BTreeMap<(String, String), Vec<&PointRow>> = BTreeMap::new();
    for row in points {
        pooled
            .entry((row.method.clone(), row.rate.clone()))
            .or_default()
            .push(row);
    }
    let mut curves: BTreeMap<String, Vec<CurvePoint>> = BTreeMap::new();
    for ((method, rate), rows) in pooled {
        let total: usize = rows.iter().map(|r| r.count).sum();
        let mean = rows.iter().map(|r| r.mean * r.count as f64).sum::<f64>() / total as f64;
        let ci_low = rows.iter().map(|r| r.ci_low).fold(f64::INFINITY, f64::min);
        let ci_high = rows
            .iter()
            .map(|r| r.ci_high)
            .fold(f64::NEG_INFINITY, f64::max);
        curves.entry(method).or_default().push(CurvePoint {
            rate,
            mean,
            ci_low,
            ci_high,
            count: total,
        });
    }
    curves
        .into_iter()
        .map(|(m, c)| (m, sorted_curve(c)))
        .collect()
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;

fn x_position(index: usize, total: usize) -> f64 {
    let span = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    if total <= 1 {
        MARGIN_LEFT + span / 2.0
    } else {
        MARGIN_LEFT + span * index as f64 / (total - 1) as f64
    }
}

fn y_position(value: f64) -> f64 {
    let span = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    MARGIN_TOP + span * (1.0 - value.clamp(0.0, 1.0))
}

fn fmt(value: f64) -> String {
    format!("{value:.2}")
}

/// Render one method's curve as a static SVG line chart: shaded 95% band,
/// mean polyline, and a marker per point. Output is deterministic down to
/// the byte for identical input.
pub fn render_svg(method: &str, curve: &[CurvePoint]) -> String {
    let n = curve.len();
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"16\">similarity vs perturbation ({method})</text>\n",
        WIDTH / 2.0
    ));

    // Axes.
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    svg.push_str(&format!(
        "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    ));
    for tick in 0..=10 {
        let value = tick as f64 / 10.0;
        let y = y_position(value);
        svg.push_str(&format!(
            "  <line x1=\"{}\" y1=\"{y}\" x2=\"{x0}\" y2=\"{y}\" stroke=\"black\"/>\n",
            x0 - 4.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            x0 - 8.0,
            y + 4.0,
            fmt(value)
        ));
    }

    if n > 0 {
        // Shaded interval band: upper edge left to right, lower edge back.
        let mut band = String::from(
            "  <polygon fill=\"#9ecae1\" fill-opacity=\"0.5\" stroke=\"none\" points=\"",
        );
        for (i, p) in curve.iter().enumerate() {
            band.push_str(&format!("{},{} ", x_position(i, n), y_position(p.ci_high)));
        }
        for (i, p) in curve.iter().enumerate().rev() {
            band.push_str(&format!("{},{} ", x_position(i, n), y_position(p.ci_low)));
        }
        band.push_str("\"/>\n");
        svg.push_str(&band);

        let mut line = String::from(
            "  <polyline fill=\"none\" stroke=\"#08519c\" stroke-width=\"2\" points=\"",
        );
        for (i, p) in curve.iter().enumerate() {
            line.push_str(&format!("{},{} ", x_position(i, n), y_position(p.mean)));
        }
        line.push_str("\"/>\n");
        svg.push_str(&line);

        for (i, p) in curve.iter().enumerate() {
            let x = x_position(i, n);
            svg.push_str(&format!(
                "  <circle cx=\"{x}\" cy=\"{}\" r=\"3\" fill=\"#08519c\"/>\n",
                y_position(p.mean)
            ));
            svg.push_str(&format!(
                "  <text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                y0 + 18.0,
                p.rate
            ));
        }
    }
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">perturbation level</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0
    ));
    svg.push_str("</svg>\n");
    svg
}
