use std::collections::BTreeMap;
use std::fmt::Write;

use trackcast_core::records::{ForecastRecord, TrackRecord};
use trackcast_core::Scene;

pub const PLOT_FILE: &str = "plot.svg";

const SIZE: f64 = 800.0;
const MARGIN: f64 = 20.0;

fn colour(id: u64) -> String {
    format!("hsl({}, 70%, 45%)", (id * 67) % 360)
}

struct View {
    min: [f64; 2],
    scale: f64,
}

impl View {
    fn fit(points: impl Iterator<Item = [f64; 2]>) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        if !lo[0].is_finite() {
            (lo, hi) = ([-1.0; 2], [1.0; 2]);
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-6);
        View {
            min: lo,
            scale: (SIZE - 2.0 * MARGIN) / span,
        }
    }

    /// SVG coordinates with `z` pointing up.
    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (
            MARGIN + (p[0] - self.min[0]) * self.scale,
            SIZE - MARGIN - (p[1] - self.min[1]) * self.scale,
        )
    }

    fn polyline(&self, pts: &[[f64; 2]]) -> String {
        pts.iter()
            .map(|&p| {
                let (x, y) = self.map(p);
                format!("{x:.1},{y:.1}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Ground truth as grey paths, tracks as coloured dots and the forecasts
/// made at `frame` as thin coloured paths.
pub fn scene_svg(scene: &Scene, tracks: &[TrackRecord], forecasts: &[ForecastRecord], frame: usize) -> String {
    let gt = scene.tracks();
    let shown: Vec<&ForecastRecord> = forecasts.iter().filter(|r| r.frame == frame).collect();
    let view = View::fit(
        gt.values()
            .flat_map(|t| t.states.iter().map(|s| s.ground()))
            .chain(tracks.iter().map(|r| [r.x, r.z]))
            .chain(shown.iter().flat_map(|r| r.trajectory.iter().copied())),
    );
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for t in gt.values() {
        let pts: Vec<[f64; 2]> = t.states.iter().map(|s| s.ground()).collect();
        let _ = writeln!(
            svg,
            r##"<polyline points="{}" fill="none" stroke="#bbb" stroke-width="3"/>"##,
            view.polyline(&pts)
        );
    }
    let mut by_track: BTreeMap<u64, Vec<&TrackRecord>> = BTreeMap::new();
    for r in tracks {
        by_track.entry(r.id).or_default().push(r);
    }
    for (id, rs) in &by_track {
        let c = colour(*id);
        for r in rs {
            let (x, y) = view.map([r.x, r.z]);
            let _ = writeln!(svg, r#"<circle cx="{x:.1}" cy="{y:.1}" r="2.5" fill="{c}"/>"#);
        }
    }
    for r in shown {
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1" opacity="0.6"/>"#,
            view.polyline(&r.trajectory),
            colour(r.id)
        );
    }
    let _ = writeln!(svg, r#"<text x="{MARGIN}" y="{MARGIN}" font-size="14">frame {frame}</text>"#);
    svg.push_str("</svg>\n");
    svg
}
