//! Step-vs-MSE line charts as standalone SVG.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use plotters::prelude::*;

pub struct Curve {
    pub label: String,
    pub values: Vec<f64>,
    pub dashed: bool,
    /// Curves sharing an index share a color.
    pub color: usize,
}

pub fn render(title: &str, curves: &[Curve]) -> Result<String> {
    let steps = curves
        .iter()
        .map(|c| c.values.len())
        .max()
        .unwrap_or(1)
        .max(2)
        - 1;
    let y_max = curves
        .iter()
        .flat_map(|c| c.values.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let y_max = if y_max > 0.0 { y_max * 1.05 } else { 1.0 };

    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (900, 560)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(70)
            .build_cartesian_2d(0f64..steps as f64, 0f64..y_max)
            .map_err(|e| anyhow!("{e}"))?;
        chart
            .configure_mesh()
            .x_desc("step")
            .y_desc("MSE")
            .draw()
            .map_err(|e| anyhow!("{e}"))?;

        for curve in curves {
            let color = Palette99::pick(curve.color).to_rgba();
            let points: Vec<(f64, f64)> = curve
                .values
                .iter()
                .enumerate()
                .filter(|(_, v)| v.is_finite())
                .map(|(n, v)| (n as f64, *v))
                .collect();
            let style = color.stroke_width(2);
            let anno = if curve.dashed {
                chart
                    .draw_series(DashedLineSeries::new(points, 6, 4, style))
                    .map_err(|e| anyhow!("{e}"))?
            } else {
                chart
                    .draw_series(LineSeries::new(points, style))
                    .map_err(|e| anyhow!("{e}"))?
            };
            anno.label(curve.label.clone()).legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2))
            });
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .draw()
            .map_err(|e| anyhow!("{e}"))?;
        root.present().map_err(|e| anyhow!("{e}"))?;
    }
    Ok(svg)
}

pub fn write(path: &Path, title: &str, curves: &[Curve]) -> Result<()> {
    let svg = render(title, curves)?;
    std::fs::write(path, svg).with_context(|| format!("writing {}", path.display()))
}
