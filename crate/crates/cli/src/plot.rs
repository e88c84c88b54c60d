//! SVG figures for the degradation sweep and the training loss.

use std::path::Path;

use anyhow::{anyhow, bail, Result};
use plotters::prelude::*;
use serde::{Deserialize, Serialize};

/// One cell of the rate x bits sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub rate: u32,
    pub bits: u32,
    pub mean_lsd: f64,
    pub clips: usize,
}

const PALETTE: [RGBColor; 5] = [BLUE, RED, GREEN, MAGENTA, BLACK];

fn span(values: impl Iterator<Item = f64>) -> Result<(f64, f64)> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        bail!("nothing to plot");
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    Ok((lo - pad, hi + pad))
}

/// Mean LSD against capture rate, one line per bit depth.
pub fn sweep_svg(points: &[SweepPoint], path: &Path) -> Result<()> {
    let (x0, x1) = span(points.iter().map(|p| p.rate as f64 / 1000.0))?;
    let (y0, y1) = span(points.iter().map(|p| p.mean_lsd))?;
    let mut bits: Vec<u32> = points.iter().map(|p| p.bits).collect();
    bits.sort_unstable();
    bits.dedup();
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let mut chart = ChartBuilder::on(&root)
        .caption("LSD of degraded then upsampled speech", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .configure_mesh()
        .x_desc("capture rate (kHz)")
        .y_desc("mean LSD")
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    for (i, b) in bits.iter().enumerate() {
        let mut line: Vec<(f64, f64)> = points
            .iter()
            .filter(|p| p.bits == *b)
            .map(|p| (p.rate as f64 / 1000.0, p.mean_lsd))
            .collect();
        line.sort_by(|a, b| a.0.total_cmp(&b.0));
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(line.clone(), color.stroke_width(2)))
            .map_err(|e| anyhow!("{e}"))?
            .label(format!("{b}-bit"))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        chart
            .draw_series(line.into_iter().map(|p| Circle::new(p, 3, color.filled())))
            .map_err(|e| anyhow!("{e}"))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}

/// Total training loss against batch index.
pub fn loss_svg(points: &[(f64, f64)], path: &Path) -> Result<()> {
    let (x0, x1) = span(points.iter().map(|p| p.0))?;
    let (y0, y1) = span(points.iter().map(|p| p.1))?;
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let mut chart = ChartBuilder::on(&root)
        .caption("training loss", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .configure_mesh()
        .x_desc("batch")
        .y_desc("total loss")
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .draw_series(LineSeries::new(points.iter().copied(), BLUE.stroke_width(2)))
        .map_err(|e| anyhow!("{e}"))?;
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}
