//! Static SVG plots of run directories: error vs. MFLOPs scatter with the
//! front highlighted, and NHV per generation.

use std::path::{Path, PathBuf};

use evonas_core::moea::Individual;
use evonas_core::rundir::{front_rows, read_nhv, read_run_archive, NhvRow};
use plotters::prelude::*;

use crate::CliError;

pub const SCATTER_FILE: &str = "scatter.svg";
pub const NHV_PLOT_FILE: &str = "nhv.svg";

const SIZE: (u32, u32) = (900, 600);

struct Run {
    label: String,
    members: Vec<Individual>,
    nhv: Vec<NhvRow>,
}

fn load(dir: &Path) -> Result<Run, CliError> {
    let members = read_run_archive(dir)?;
    let nhv = read_nhv(dir)?;
    let label = dir
        .file_name()
        .map_or_else(|| dir.display().to_string(), |s| s.to_string_lossy().into_owned());
    Ok(Run { label, members, nhv })
}

fn draw_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("plotting failed: {e}"))
}

fn generation_color(gen: usize, last: usize) -> HSLColor {
    let t = if last == 0 { 0.0 } else { gen as f64 / last as f64 };
    HSLColor(0.66 * (1.0 - t), 0.75, 0.45)
}

/// Writes both plots into `out` and returns their paths.
pub fn plot_runs(dirs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let runs = dirs.iter().map(|d| load(d)).collect::<Result<Vec<_>, _>>()?;
    std::fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    let scatter = out.join(SCATTER_FILE);
    let nhv = out.join(NHV_PLOT_FILE);
    draw_scatter(&runs, &scatter)?;
    draw_nhv(&runs, &nhv)?;
    Ok(vec![scatter, nhv])
}

fn draw_scatter(runs: &[Run], path: &Path) -> Result<(), CliError> {
    let all = runs.iter().flat_map(|r| r.members.iter());
    let (mut max_err, mut max_flops) = (1.0f64, 1.0f64);
    for m in all {
        max_err = max_err.max(m.objectives.error);
        max_flops = max_flops.max(m.objectives.flops);
    }
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(15)
        .caption("top-1 error vs. MFLOPs", ("sans-serif", 22))
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..max_flops * 1.05, 0.0..max_err * 1.05)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("MFLOPs")
        .y_desc("top-1 error (%)")
        .draw()
        .map_err(draw_err)?;

    let overlay = runs.len() > 1;
    for (i, run) in runs.iter().enumerate() {
        let base = Palette99::pick(i);
        let last = run.members.iter().map(|m| m.generation_born).max().unwrap_or(0);
        chart
            .draw_series(run.members.iter().map(|m| {
                let p = (m.objectives.flops, m.objectives.error);
                if overlay {
                    Circle::new(p, 2, base.mix(0.35).filled())
                } else {
                    Circle::new(p, 2, generation_color(m.generation_born, last).filled())
                }
            }))
            .map_err(draw_err)?;
        let front: Vec<(f64, f64)> = front_rows(&run.members).iter().map(|r| (r.flops_m, r.error_pct)).collect();
        let color = if overlay { base.to_rgba() } else { RED.to_rgba() };
        chart
            .draw_series(LineSeries::new(front.iter().copied(), color.stroke_width(2)))
            .map_err(draw_err)?
            .label(format!("{} front", run.label))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        chart
            .draw_series(front.iter().map(|&p| Circle::new(p, 4, color.filled())))
            .map_err(draw_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)
}

fn draw_nhv(runs: &[Run], path: &Path) -> Result<(), CliError> {
    let gens = runs.iter().map(|r| r.nhv.len()).max().unwrap_or(1).max(2) - 1;
    let top = runs
        .iter()
        .flat_map(|r| r.nhv.iter().map(|n| n.nhv))
        .fold(0.0f64, f64::max)
        .max(0.01);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(15)
        .caption("archive NHV per generation", ("sans-serif", 22))
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0usize..gens, 0.0..top * 1.05)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("generation")
        .y_desc("NHV")
        .draw()
        .map_err(draw_err)?;
    for (i, run) in runs.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(
                run.nhv.iter().map(|n| (n.generation, n.nhv)),
                color.stroke_width(2),
            ))
            .map_err(draw_err)?
            .label(run.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)
}
