//! Static SVG line plots, each written next to a CSV of the plotted points.

use std::fs;
use std::path::Path;

use plotters::prelude::*;

use super::ExperimentError;

/// Most points drawn per series; longer series are thinned evenly.
pub const MAX_POINTS: usize = 2000;

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    /// Keeps at most `MAX_POINTS` points, always including the last one.
    pub fn thinned(label: String, points: Vec<(f64, f64)>) -> Self {
        let stride = points.len().div_ceil(MAX_POINTS).max(1);
        let last = points.len().saturating_sub(1);
        let points = points.into_iter().enumerate().filter(|(i, _)| i % stride == 0 || *i == last).map(|(_, p)| p).collect();
        Self { label, points }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log,
}

pub struct Figure<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub scale: Scale,
    pub series: &'a [Series],
}

const COLORS: [RGBColor; 10] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(23, 190, 207),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
    RGBColor(188, 189, 34),
];

fn plot_err(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Io(format!("plot: {e}"))
}

fn tick(scale: Scale, v: f64) -> String {
    if scale == Scale::Linear && v.abs() < 1e-12 {
        return "0".into();
    }
    match scale {
        Scale::Log => format!("{v:.0e}"),
        Scale::Linear if (1e-3..1e4).contains(&v.abs()) => format!("{:.3}", v).trim_end_matches('0').trim_end_matches('.').to_string(),
        Scale::Linear => format!("{v:.1e}"),
    }
}

fn usable(scale: Scale, y: f64) -> bool {
    y.is_finite() && (scale == Scale::Linear || y > 0.0)
}

fn ranges(fig: &Figure) -> ((f64, f64), (f64, f64)) {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in fig.series.iter().flat_map(|s| &s.points) {
        if x.is_finite() && usable(fig.scale, y) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if !(x0 < x1) {
        (x0, x1) = if x0.is_finite() { (x0, x0 + 1.0) } else { (0.0, 1.0) };
    }
    if !(y0 < y1) {
        (y0, y1) = match (y0.is_finite(), fig.scale) {
            (true, Scale::Log) => (y0 / 10.0, y0 * 10.0),
            (true, Scale::Linear) => (y0 - 1.0, y0 + 1.0),
            (false, Scale::Log) => (0.1, 10.0),
            (false, Scale::Linear) => (-1.0, 1.0),
        };
    } else if fig.scale == Scale::Linear {
        let pad = 0.05 * (y1 - y0);
        (y0, y1) = (y0 - pad, y1 + pad);
    }
    ((x0, x1), (y0, y1))
}

fn draw<DB: DrawingBackend>(root: DrawingArea<DB, plotters::coord::Shift>, fig: &Figure) -> Result<(), ExperimentError>
where
    DB::ErrorType: 'static,
{
    root.fill(&WHITE).map_err(plot_err)?;
    let ((x0, x1), (y0, y1)) = ranges(fig);
    let mut builder = ChartBuilder::on(&root);
    builder.caption(fig.title, ("sans-serif", 18)).margin(12).x_label_area_size(40).y_label_area_size(80);
    macro_rules! body {
        ($chart:expr) => {{
            let mut chart = $chart;
            chart
                .configure_mesh()
                .x_desc(fig.x_label)
                .y_desc(fig.y_label)
                .x_label_formatter(&|v: &f64| tick(Scale::Linear, *v))
                .y_label_formatter(&|v: &f64| tick(fig.scale, *v))
                .draw().map_err(plot_err)?;
            for (i, s) in fig.series.iter().enumerate() {
                let color = COLORS[i % COLORS.len()];
                let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(|&(x, y)| x.is_finite() && usable(fig.scale, y)).collect();
                chart
                    .draw_series(LineSeries::new(pts, color.stroke_width(1)))
                    .map_err(plot_err)?
                    .label(s.label.as_str())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
            }
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.85))
                .border_style(BLACK)
                .position(SeriesLabelPosition::UpperRight)
                .draw()
                .map_err(plot_err)?;
        }};
    }
    match fig.scale {
        Scale::Linear => body!(builder.build_cartesian_2d(x0..x1, y0..y1).map_err(plot_err)?),
        Scale::Log => body!(builder.build_cartesian_2d(x0..x1, (y0..y1).log_scale()).map_err(plot_err)?),
    }
    root.present().map_err(plot_err)
}

/// Renders the figure to an SVG string.
pub fn render_svg(fig: &Figure) -> Result<String, ExperimentError> {
    let mut out = String::new();
    draw(SVGBackend::with_string(&mut out, (800, 480)).into_drawing_area(), fig)?;
    Ok(out)
}

/// Writes `<stem>.svg` and `<stem>.csv` (columns `series,x,y`, exactly the plotted points).
pub fn write_figure(dir: &Path, stem: &str, fig: &Figure) -> Result<Vec<String>, ExperimentError> {
    let mut csv = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| ExperimentError::Io(e.to_string());
    csv.write_record(["series", fig.x_label, fig.y_label]).map_err(err)?;
    for s in fig.series {
        for (x, y) in &s.points {
            csv.write_record([s.label.clone(), x.to_string(), y.to_string()]).map_err(err)?;
        }
    }
    let bytes = csv.into_inner().map_err(|e| ExperimentError::Io(e.to_string()))?;
    let svg = render_svg(fig)?;
    let csv_name = format!("{stem}.csv");
    let svg_name = format!("{stem}.svg");
    fs::write(dir.join(&csv_name), bytes).map_err(|e| ExperimentError::Io(e.to_string()))?;
    fs::write(dir.join(&svg_name), svg).map_err(|e| ExperimentError::Io(e.to_string()))?;
    Ok(vec![svg_name, csv_name])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series() -> Vec<Series> {
        vec![
            Series::thinned("decay".into(), (0..5000).map(|i| (i as f64 * 1e-2, (-(i as f64) * 1e-2).exp())).collect()),
            Series { label: "flat".into(), points: vec![(0.0, 0.5), (50.0, 0.5)] },
        ]
    }

    #[test]
    fn thinning_keeps_ends() {
        let s = &series()[0];
        assert!(s.points.len() <= MAX_POINTS + 1);
        assert_eq!(s.points[0].0, 0.0);
        assert_eq!(s.points.last().unwrap().0, 49.99);
    }

    #[test]
    fn svg_and_csv_agree() {
        let dir = tempfile::tempdir().unwrap();
        let s = series();
        let fig = Figure { title: "test", x_label: "t", y_label: "v", scale: Scale::Log, series: &s };
        let files = write_figure(dir.path(), "v", &fig).unwrap();
        assert_eq!(files, ["v.svg", "v.csv"]);
        let svg = fs::read_to_string(dir.path().join("v.svg")).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("decay") && svg.contains("flat"));
        let mut rd = csv::Reader::from_path(dir.path().join("v.csv")).unwrap();
        let rows: Vec<(String, f64, f64)> = rd.deserialize().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), s[0].points.len() + 2);
        for (row, p) in rows.iter().zip(&s[0].points) {
            assert_eq!((row.1, row.2), *p);
        }
        // identical input renders identical bytes
        assert_eq!(render_svg(&fig).unwrap(), svg);
    }

    #[test]
    fn degenerate_data_still_renders() {
        let s = vec![Series { label: "nan".into(), points: vec![(0.0, f64::NAN), (1.0, -1.0)] }];
        let fig = Figure { title: "x", x_label: "t", y_label: "v", scale: Scale::Log, series: &s };
        assert!(render_svg(&fig).unwrap().contains("<svg"));
    }
}
