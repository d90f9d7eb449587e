//! Bias surfaces over the two confounding parameters, with dominance
//! labeling, CSV export, and a self-contained SVG rendering.
//!
//! The surface is the selection-on-observables bias kernel evaluated on a
//! rectangular grid of `(r_z, r_y) = (R[U ~ Z | W_Z, W_Y],
//! R[U ~ Y | Z, W_Z, W_Y])`. Because every strategy's bias differs from it
//! only by a constant estimand gap, one grid supports all three: each point
//! also carries the implied true effect and the label of the strategy with
//! the smallest mean squared error there, `(tau - tau_true)^2 + se^2`.
//! Ties keep the earliest strategy in the fixed (soo, iv, prox) order. A
//! strategy with an infinite standard error can never win a label; a NaN
//! standard error is an input error rather than a silent non-label.
//!
//! Contour lines are extracted by marching squares with linear
//! interpolation on cell edges, at signed symmetric levels spaced
//! logarithmically, which resolves both the steep flanks near the
//! correlation boundary and the flat valley around zero bias.

use crate::error::{Error, Result};
use crate::estimators::Estimates;
use crate::linalg::SymMatrix;
use crate::sigma::{SooBiasScale, RHO_CLAMP};
use crate::Strategy;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Rectangular evaluation grid over the two confounding parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec {
    pub r_z_min: f64,
    pub r_z_max: f64,
    pub r_y_min: f64,
    pub r_y_max: f64,
    /// Grid points along the treatment-confounding axis.
    pub n_z: usize,
    /// Grid points along the outcome-confounding axis.
    pub n_y: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            r_z_min: -0.995,
            r_z_max: 0.995,
            r_y_min: -0.995,
            r_y_max: 0.995,
            n_z: 201,
            n_y: 201,
        }
    }
}

impl GridSpec {
    fn validate(&self) -> Result<()> {
        for (name, lo, hi) in [
            ("r_z", self.r_z_min, self.r_z_max),
            ("r_y", self.r_y_min, self.r_y_max),
        ] {
            if !(lo < hi) {
                return Err(Error::Config(format!(
                    "{name} range is empty: [{lo}, {hi}]"
                )));
            }
            if lo < -RHO_CLAMP || hi > RHO_CLAMP {
                return Err(Error::Config(format!(
                    "{name} range [{lo}, {hi}] exceeds the correlation clamp {RHO_CLAMP}"
                )));
            }
        }
        if self.n_z < 2 || self.n_y < 2 {
            return Err(Error::Config(
                "grid needs at least two points per axis".into(),
            ));
        }
        Ok(())
    }
}

/// Evaluated bias surface. Point `(ix, iy)` lives at flat index
/// `iy * n_z + ix`; the axes are stored explicitly.
#[derive(Debug, Clone)]
pub struct ContourGrid {
    pub spec: GridSpec,
    pub r_z: Vec<f64>,
    pub r_y: Vec<f64>,
    /// Selection-on-observables bias at each point, row-major.
    pub bias: Vec<f64>,
    /// Implied true effect at each point: the adjusted estimate minus bias.
    pub tau_true: Vec<f64>,
    /// Least-MSE strategy at each point; `None` when no strategy has a
    /// finite score.
    pub label: Vec<Option<Strategy>>,
}

impl ContourGrid {
    fn at(&self, ix: usize, iy: usize) -> f64 {
        self.bias[iy * self.spec.n_z + ix]
    }

    /// Largest absolute bias on the grid.
    pub fn max_abs_bias(&self) -> f64 {
        self.bias.iter().fold(0.0, |m, b| m.max(b.abs()))
    }
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Evaluates the bias surface and dominance labels for the given observed
/// moments and estimates.
pub fn compute_grid(obs: &SymMatrix, est: &Estimates, spec: &GridSpec) -> Result<ContourGrid> {
    spec.validate()?;
    for s in Strategy::ALL {
        let se = est.get(s).se;
        if se.is_nan() {
            return Err(Error::Degenerate(format!(
                "standard error of the {s} estimate is NaN; labels would be meaningless"
            )));
        }
    }
    let scale = SooBiasScale::new(obs)?;
    let r_z = axis(spec.r_z_min, spec.r_z_max, spec.n_z);
    let r_y = axis(spec.r_y_min, spec.r_y_max, spec.n_y);

    let npts = spec.n_z * spec.n_y;
    let mut bias = Vec::with_capacity(npts);
    let mut tau_true = Vec::with_capacity(npts);
    let mut label = Vec::with_capacity(npts);
    for ry in &r_y {
        for rz in &r_z {
            let b = scale.bias(*rz, *ry)?;
            let tt = est.get(Strategy::Soo).tau - b;
            let mut best: Option<(Strategy, f64)> = None;
            for s in Strategy::ALL {
                let e = est.get(s);
                let score = (e.tau - tt) * (e.tau - tt) + e.se * e.se;
                if !score.is_finite() {
                    continue;
                }
                if best.map_or(true, |(_, bs)| score < bs) {
                    best = Some((s, score));
                }
            }
            bias.push(b);
            tau_true.push(tt);
            label.push(best.map(|(s, _)| s));
        }
    }
    Ok(ContourGrid {
        spec: *spec,
        r_z,
        r_y,
        bias,
        tau_true,
        label,
    })
}

/// Symmetric signed levels for the grid: `count` levels split evenly into a
/// negative and a positive half, each half spaced logarithmically from
/// one-thousandth of the largest absolute bias up to that maximum. Empty
/// when the surface is identically zero.
pub fn default_levels(grid: &ContourGrid, count: usize) -> Vec<f64> {
    let m = grid.max_abs_bias();
    if m <= 0.0 || count == 0 {
        return Vec::new();
    }
    let half = (count / 2).max(1);
    let mut pos = Vec::with_capacity(half);
    for k in 0..half {
        let t = if half == 1 {
            0.0
        } else {
            k as f64 / (half - 1) as f64
        };
        pos.push(m * 1e-3_f64.powf(1.0 - t));
    }
    let mut levels: Vec<f64> = pos.iter().rev().map(|v| -v).collect();
    levels.extend(pos);
    levels
}

/// One contour segment in `(r_z, r_y)` coordinates.
pub type Segment = ((f64, f64), (f64, f64));

/// Extracts level-set segments by marching squares with linear edge
/// interpolation. Segments are emitted per cell in scan order and are not
/// chained into polylines; renderers draw them directly.
pub fn contour_segments(grid: &ContourGrid, level: f64) -> Vec<Segment> {
    let n_z = grid.spec.n_z;
    let n_y = grid.spec.n_y;
    let mut out = Vec::new();
    for iy in 0..n_y - 1 {
        for ix in 0..n_z - 1 {
            let va = grid.at(ix, iy);
            let vb = grid.at(ix + 1, iy);
            let vc = grid.at(ix + 1, iy + 1);
            let vd = grid.at(ix, iy + 1);
            let xa = grid.r_z[ix];
            let xb = grid.r_z[ix + 1];
            let ya = grid.r_y[iy];
            let yb = grid.r_y[iy + 1];

            let mut mask = 0u8;
            if va >= level {
                mask |= 1;
            }
            if vb >= level {
                mask |= 2;
            }
            if vc >= level {
                mask |= 4;
            }
            if vd >= level {
                mask |= 8;
            }
            if mask == 0 || mask == 15 {
                continue;
            }

            let lerp = |p: f64, q: f64, vp: f64, vq: f64| p + (level - vp) / (vq - vp) * (q - p);
            // Crossing points on the four cell edges.
            let ab = (lerp(xa, xb, va, vb), ya);
            let bc = (xb, lerp(ya, yb, vb, vc));
            let cd = (lerp(xb, xa, vc, vd), yb);
            let da = (xa, lerp(yb, ya, vd, va));

            match mask {
                1 => out.push((da, ab)),
                2 => out.push((ab, bc)),
                3 => out.push((da, bc)),
                4 => out.push((bc, cd)),
                6 => out.push((ab, cd)),
                7 => out.push((da, cd)),
                8 => out.push((cd, da)),
                9 => out.push((ab, cd)),
                11 => out.push((bc, cd)),
                12 => out.push((bc, da)),
                13 => out.push((ab, bc)),
                14 => out.push((da, ab)),
                5 | 10 => {
                    let center = 0.25 * (va + vb + vc + vd);
                    let center_in = center >= level;
                    if (mask == 5) == center_in {
                        out.push((ab, bc));
                        out.push((cd, da));
                    } else {
                        out.push((da, ab));
                        out.push((bc, cd));
                    }
                }
                _ => unreachable!("masks 0 and 15 are skipped"),
            }
        }
    }
    out
}

/// Writes the grid in long CSV format with columns
/// `r_z,r_y,bias,tau_true,label`, outer loop over `r_y` ascending. Points
/// with no labeled strategy leave the label field empty.
pub fn write_csv<W: Write>(grid: &ContourGrid, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let to_io = |e: csv::Error| Error::Io {
        path: "<contour csv>".into(),
        source: std::io::Error::new(std::io::ErrorKind::Other, e),
    };
    w.write_record(["r_z", "r_y", "bias", "tau_true", "label"])
        .map_err(to_io)?;
    for iy in 0..grid.spec.n_y {
        for ix in 0..grid.spec.n_z {
            let idx = iy * grid.spec.n_z + ix;
            w.write_record([
                format!("{}", grid.r_z[ix]),
                format!("{}", grid.r_y[iy]),
                format!("{}", grid.bias[idx]),
                format!("{}", grid.tau_true[idx]),
                grid.label[idx].map(|s| s.tag().to_string()).unwrap_or_default(),
            ])
            .map_err(to_io)?;
        }
    }
    w.flush().map_err(|e| Error::Io {
        path: "<contour csv>".into(),
        source: e,
    })?;
    Ok(())
}

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 640.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_T: f64 = 50.0;
const MARGIN_B: f64 = 60.0;
const MARGIN_R: f64 = 30.0;

fn fill_color(s: Strategy) -> &'static str {
    match s {
        Strategy::Soo => "#4e79a7",
        Strategy::Iv => "#f28e2b",
        Strategy::Prox => "#76b7b2",
    }
}

/// Renders the surface as a standalone SVG: dominance regions as run-merged
/// translucent rectangles, one path per contour level (negative levels
/// dashed), axes, and a legend. Purely deterministic output.
pub fn render_svg(grid: &ContourGrid, levels: &[f64]) -> String {
    let spec = &grid.spec;
    let width = MARGIN_L + PLOT_W + MARGIN_R;
    let height = MARGIN_T + PLOT_H + MARGIN_B;
    let px = |rz: f64| MARGIN_L + (rz - spec.r_z_min) / (spec.r_z_max - spec.r_z_min) * PLOT_W;
    let py = |ry: f64| MARGIN_T + (1.0 - (ry - spec.r_y_min) / (spec.r_y_max - spec.r_y_min)) * PLOT_H;

    let mut svg = String::with_capacity(1 << 16);
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{width:.0}\" height=\"{height:.0}\" fill=\"white\"/>\n"
    ));

    // Dominance regions: merge horizontal runs of identical labels into one
    // rectangle each; a 201-wide row collapses to a handful of rects.
    let dx = PLOT_W / (spec.n_z - 1).max(1) as f64;
    let dy = PLOT_H / (spec.n_y - 1).max(1) as f64;
    svg.push_str("<g fill-opacity=\"0.45\" stroke=\"none\">\n");
    for iy in 0..spec.n_y {
        let mut ix = 0;
        while ix < spec.n_z {
            let lab = grid.label[iy * spec.n_z + ix];
            let mut end = ix;
            while end + 1 < spec.n_z && grid.label[iy * spec.n_z + end + 1] == lab {
                end += 1;
            }
            if let Some(s) = lab {
                let x0 = (px(grid.r_z[ix]) - 0.5 * dx).max(MARGIN_L);
                let x1 = (px(grid.r_z[end]) + 0.5 * dx).min(MARGIN_L + PLOT_W);
                let y0 = (py(grid.r_y[iy]) - 0.5 * dy).max(MARGIN_T);
                let y1 = (py(grid.r_y[iy]) + 0.5 * dy).min(MARGIN_T + PLOT_H);
                svg.push_str(&format!(
                    "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>\n",
                    x0,
                    y0.min(y1),
                    x1 - x0,
                    (y1 - y0).abs(),
                    fill_color(s)
                ));
            }
            ix = end + 1;
        }
    }
    svg.push_str("</g>\n");

    // Contour lines, one path per level.
    for level in levels {
        let segs = contour_segments(grid, *level);
        if segs.is_empty() {
            continue;
        }
        let mut d = String::new();
        for ((x1, y1), (x2, y2)) in segs {
            d.push_str(&format!(
                "M{:.2} {:.2}L{:.2} {:.2}",
                px(x1),
                py(y1),
                px(x2),
                py(y2)
            ));
        }
        let dash = if *level < 0.0 {
            " stroke-dasharray=\"5 3\""
        } else {
            ""
        };
        svg.push_str(&format!(
            "<path d=\"{d}\" fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"{dash}/>\n"
        ));
    }

    // Frame and axis annotation.
    svg.push_str(&format!(
        "<rect x=\"{MARGIN_L:.0}\" y=\"{MARGIN_T:.0}\" width=\"{PLOT_W:.0}\" height=\"{PLOT_H:.0}\" \
         fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n"
    ));
    let ticks_z = [spec.r_z_min, 0.5 * (spec.r_z_min + spec.r_z_max), spec.r_z_max];
    for t in ticks_z {
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" \
             font-family=\"sans-serif\">{t:.2}</text>\n",
            px(t),
            MARGIN_T + PLOT_H + 18.0
        ));
    }
    let ticks_y = [spec.r_y_min, 0.5 * (spec.r_y_min + spec.r_y_max), spec.r_y_max];
    for t in ticks_y {
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\" \
             font-family=\"sans-serif\">{t:.2}</text>\n",
            MARGIN_L - 8.0,
            py(t) + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\" \
         font-family=\"sans-serif\">confounding with treatment (r_z)</text>\n",
        MARGIN_L + 0.5 * PLOT_W,
        MARGIN_T + PLOT_H + 40.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\" \
         font-family=\"sans-serif\" transform=\"rotate(-90 {:.2} {:.2})\">confounding with outcome (r_y)</text>\n",
        18.0,
        MARGIN_T + 0.5 * PLOT_H,
        18.0,
        MARGIN_T + 0.5 * PLOT_H
    ));

    // Legend.
    let mut lx = MARGIN_L;
    for s in Strategy::ALL {
        svg.push_str(&format!(
            "<rect x=\"{lx:.2}\" y=\"{:.2}\" width=\"14\" height=\"14\" fill=\"{}\" \
             fill-opacity=\"0.45\"/>\n",
            MARGIN_T - 30.0,
            fill_color(s)
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" font-family=\"sans-serif\">{} least MSE</text>\n",
            lx + 20.0,
            MARGIN_T - 18.0,
            s.tag()
        ));
        lx += 150.0;
    }

    svg.push_str("</svg>\n");
    svg
}
