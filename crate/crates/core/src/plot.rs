//! Dependency-free SVG rendering: line plots with axes and legends,
//! multi-panel layouts, and grayscale pixel rasters.

/// One plotted series.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// A single-axes line plot.
#[derive(Debug, Clone)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

/// Rendered SVG plus any warnings (e.g. empty series dropped).
#[derive(Debug, Clone)]
pub struct SvgOutput {
    pub svg: String,
    pub warnings: Vec<String>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

/// Axis range covering [min, max] with a 5% margin on each side.
pub fn axis_range(min: f64, max: f64) -> (f64, f64) {
    if !min.is_finite() || !max.is_finite() {
        return (0.0, 1.0);
    }
    let span = max - min;
    if span <= 0.0 {
        let pad = 0.05 * min.abs().max(1.0);
        return (min - pad, max + pad);
    }
    (min - 0.05 * span, max + 0.05 * span)
}

fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = hi - lo;
    if span <= 0.0 {
        return vec![lo];
    }
    let raw_step = span / target as f64;
    let mag = 10f64.powf(raw_step.log10().floor());
    let norm = raw_step / mag;
    let step = if norm < 1.5 {
        mag
    } else if norm < 3.5 {
        2.0 * mag
    } else if norm < 7.5 {
        5.0 * mag
    } else {
        10.0 * mag
    };
    let first = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    let mut t = first;
    while t <= hi + 1e-12 * span {
        // Snap tiny float drift so labels print cleanly.
        ticks.push((t / step).round() * step);
        t += step;
    }
    ticks
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.').to_string();
    if s.is_empty() {
        "0".to_string()
    } else {
        s
    }
}

impl LinePlot {
    /// Renders the plot. Empty series are dropped with a warning; the axis
    /// ranges cover the data with a 5% margin; the legend preserves series
    /// declaration order.
    pub fn to_svg(&self, width: u32, height: u32) -> SvgOutput {
        let mut warnings = Vec::new();
        let kept: Vec<&Series> = self
            .series
            .iter()
            .filter(|s| {
                if s.points.is_empty() {
                    warnings.push(format!("series '{}' has no points; dropped", s.name));
                    false
                } else {
                    true
                }
            })
            .collect();
        let (w, h) = (f64::from(width), f64::from(height));
        let (ml, mr, mt, mb) = (62.0, 16.0, 34.0, 46.0);
        let mut svg = String::new();
        svg.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
             viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"12\">\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
            w / 2.0,
            escape(&self.title)
        ));
        if kept.is_empty() {
            warnings.push("no data to plot".to_string());
            svg.push_str("</svg>\n");
            return SvgOutput { svg, warnings };
        }
        let mut xmin = f64::INFINITY;
        let mut xmax = f64::NEG_INFINITY;
        let mut ymin = f64::INFINITY;
        let mut ymax = f64::NEG_INFINITY;
        for s in &kept {
            for &(x, y) in &s.points {
                xmin = xmin.min(x);
                xmax = xmax.max(x);
                ymin = ymin.min(y);
                ymax = ymax.max(y);
            }
        }
        let (x0, x1) = axis_range(xmin, xmax);
        let (y0, y1) = axis_range(ymin, ymax);
        let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
        let py = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);

        // Frame and ticks.
        svg.push_str(&format!(
            "<rect x=\"{ml}\" y=\"{mt}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\"/>\n",
            w - ml - mr,
            h - mt - mb
        ));
        for t in nice_ticks(x0, x1, 5) {
            let x = px(t);
            svg.push_str(&format!(
                "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"#333\"/>\n",
                h - mb,
                h - mb + 4.0
            ));
            svg.push_str(&format!(
                "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                h - mb + 17.0,
                fmt_tick(t)
            ));
        }
        for t in nice_ticks(y0, y1, 5) {
            let y = py(t);
            svg.push_str(&format!(
                "<line x1=\"{}\" y1=\"{y}\" x2=\"{ml}\" y2=\"{y}\" stroke=\"#333\"/>\n",
                ml - 4.0
            ));
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
                ml - 7.0,
                y + 4.0,
                fmt_tick(t)
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            ml + (w - ml - mr) / 2.0,
            h - 8.0,
            escape(&self.x_label)
        ));
        svg.push_str(&format!(
            "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>\n",
            mt + (h - mt - mb) / 2.0,
            mt + (h - mt - mb) / 2.0,
            escape(&self.y_label)
        ));

        // Series in declaration order; the legend mirrors it.
        for (i, s) in kept.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                pts.join(" ")
            ));
            for &(x, y) in &s.points {
                svg.push_str(&format!(
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.4\" fill=\"{color}\"/>\n",
                    px(x),
                    py(y)
                ));
            }
            let ly = mt + 14.0 + 16.0 * i as f64;
            svg.push_str(&format!(
                "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                w - mr - 130.0,
                w - mr - 108.0
            ));
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\">{}</text>\n",
                w - mr - 102.0,
                ly + 4.0,
                escape(&s.name)
            ));
        }
        svg.push_str("</svg>\n");
        SvgOutput { svg, warnings }
    }
}

/// Lays plots out side by side in one SVG.
pub fn panel_row(plots: &[LinePlot], panel_width: u32, panel_height: u32) -> SvgOutput {
    let mut warnings = Vec::new();
    let total_w = panel_width * plots.len() as u32;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{total_w}\" height=\"{panel_height}\" \
         viewBox=\"0 0 {total_w} {panel_height}\">\n"
    );
    for (i, plot) in plots.iter().enumerate() {
        let mut out = plot.to_svg(panel_width, panel_height);
        warnings.append(&mut out.warnings);
        // Strip the inner document header and re-wrap as a nested svg.
        let body = out
            .svg
            .lines()
            .skip(1)
            .take_while(|l| !l.starts_with("</svg>"))
            .collect::<Vec<_>>()
            .join("\n");
        svg.push_str(&format!(
            "<svg x=\"{}\" y=\"0\" width=\"{panel_width}\" height=\"{panel_height}\">\n{body}\n</svg>\n",
            i as u32 * panel_width
        ));
    }
    svg.push_str("</svg>\n");
    SvgOutput { svg, warnings }
}

/// A grayscale image with values in [0, 1].
#[derive(Debug, Clone)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
    pub caption: String,
}

/// Renders a row-major grid of grayscale rasters as SVG rects.
pub fn raster_grid(images: &[GrayImage], columns: usize, cell_px: u32) -> SvgOutput {
    let columns = columns.max(1);
    let rows = images.len().div_ceil(columns);
    let (iw, ih) = images
        .first()
        .map_or((1, 1), |im| (im.width, im.height));
    let pad = 6u32;
    let caption_h = 16u32;
    let cell_w = cell_px + pad;
    let cell_h = cell_px + caption_h + pad;
    let total_w = cell_w * columns as u32 + pad;
    let total_h = cell_h * rows as u32 + pad;
    let scale = f64::from(cell_px) / iw.max(ih) as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{total_w}\" height=\"{total_h}\" \
         viewBox=\"0 0 {total_w} {total_h}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    for (idx, im) in images.iter().enumerate() {
        let gx = f64::from(pad + (idx % columns) as u32 * cell_w);
        let gy = f64::from(pad + (idx / columns) as u32 * cell_h);
        for r in 0..im.height {
            for c in 0..im.width {
                let v = im.pixels[r * im.width + c].clamp(0.0, 1.0);
                let g = (v * 255.0).round() as u8;
                if g == 0 {
                    continue; // background stays page-white via the backing rect
                }
                svg.push_str(&format!(
                    "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"rgb({g},{g},{g})\"/>\n",
                    gx + c as f64 * scale,
                    gy + r as f64 * scale,
                    scale + 0.05,
                    scale + 0.05,
                ));
            }
        }
        svg.push_str(&format!(
            "<rect x=\"{gx}\" y=\"{gy}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#999\"/>\n",
            iw as f64 * scale,
            ih as f64 * scale
        ));
        svg.push_str(&format!(
            "<text x=\"{gx}\" y=\"{:.2}\">{}</text>\n",
            gy + ih as f64 * scale + 12.0,
            escape(&im.caption)
        ));
    }
    svg.push_str("</svg>\n");
    SvgOutput {
        svg,
        warnings: Vec::new(),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
