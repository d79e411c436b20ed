use std::path::PathBuf;

use clap::Args;
use image::{GrayImage, Luma};
use ndarray::Array2;
use smlm_core::io::{load_frames, load_mask, read_localizations, save_frames, DatasetManifest};
use smlm_core::optics::{build_pupil, render_noiseless, Emitter};

use super::out_dir;
use crate::ash::{render_ash, AshConfig, Colormap};
use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::GlobalArgs;

const COMMAND: &str = "render";

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    /// Localization CSV
    #[arg(long)]
    pub input: PathBuf,
    /// Histogram bin (nm)
    #[arg(long, default_value_t = 20.0)]
    pub bin: f64,
    /// Shifted histograms per axis
    #[arg(long, default_value_t = 4)]
    pub shifts: usize,
    /// Depth mapped to the first colormap entry (nm)
    #[arg(long, default_value_t = -2000.0, allow_hyphen_values = true)]
    pub z_min: f64,
    /// Depth mapped to the last colormap entry (nm)
    #[arg(long, default_value_t = 2000.0, allow_hyphen_values = true)]
    pub z_max: f64,
    /// 256-line `r,g,b` colormap file (default: viridis)
    #[arg(long)]
    pub colormap: Option<PathBuf>,
    /// Also re-image one frame's localizations through the dataset's optics
    #[arg(long, requires_all = ["dataset", "frame"])]
    pub regenerate: bool,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub frame: Option<usize>,
}

fn gray(pixels: &Array2<f64>) -> GrayImage {
    let peak = pixels.iter().fold(0.0f64, |a, &b| a.max(b));
    let (h, w) = pixels.dim();
    GrayImage::from_fn(w as u32, h as u32, |c, r| {
        let v = if peak > 0.0 { pixels[[r as usize, c as usize]] / peak } else { 0.0 };
        Luma([(v * 255.0).round() as u8])
    })
}

pub(crate) fn run(global: &GlobalArgs, args: &RenderArgs, argv: Vec<String>) -> CliResult<()> {
    let out = out_dir(global, COMMAND)?;
    let locs =
        read_localizations(&args.input).map_err(|e| CliError::Data(format!("{}: {e}", args.input.display())))?;
    let cmap = match &args.colormap {
        Some(p) => Colormap::parse(&std::fs::read_to_string(p)?)?,
        None => Colormap::viridis(),
    };
    let cfg = AshConfig { bin_nm: args.bin, shifts: args.shifts, z_range: [args.z_min, args.z_max], extent: None };
    let mut manifest = ManifestBuilder::new(COMMAND, argv);
    manifest.config(&cfg)?;
    manifest.input(&args.input);

    render_ash(&locs, &cfg, &cmap)?
        .save(out.join("render.png"))
        .map_err(|e| CliError::Data(format!("writing render.png: {e}")))?;
    manifest.output("render.png");

    if args.regenerate {
        let (dir, frame) = (args.dataset.as_ref().unwrap(), args.frame.unwrap());
        let data = DatasetManifest::load(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        let stack = load_frames(&dir.join("frames.bin"))?;
        let pupil = build_pupil(&data.optics)?;
        let mask = load_mask(&dir.join("mask.bin"), &pupil).map_err(|e| CliError::Data(e.to_string()))?;
        if frame >= stack.frames.len() {
            return Err(CliError::usage(COMMAND, format!("dataset has {} frames, asked for {frame}", stack.frames.len())));
        }
        let (h, w) = (stack.header.height, stack.header.width);
        let pixel = data.optics.camera_pixel;
        let (fw, fh) = (w as f64 * pixel, h as f64 * pixel);
        let emitters: Vec<Emitter> = locs
            .iter()
            .filter(|l| l.frame == frame)
            .filter(|l| (0.0..fw).contains(&l.x) && (0.0..fh).contains(&l.y))
            .map(|l| Emitter::new(l.x, l.y, l.z, l.photons))
            .collect();
        let image = render_noiseless(&pupil, &mask, &emitters, h, w)?;
        save_frames(&out.join("regenerated.bin"), std::slice::from_ref(&image.pixels), pixel, 0.0)?;
        gray(&image.pixels)
            .save(out.join("regenerated.png"))
            .map_err(|e| CliError::Data(format!("writing regenerated.png: {e}")))?;
        manifest.input(&dir.join("frames.bin"));
        for name in ["regenerated.bin", "regenerated.json", "regenerated.png"] {
            manifest.output(name);
        }
    }
    manifest.finish(&out)?;
    Ok(())
}
