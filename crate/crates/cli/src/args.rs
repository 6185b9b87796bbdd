use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lenslabel::labels::LabelKind;
use lenslabel::raster::RasterFormat;
use lenslabel::{BitDepth, ShiftMode};

#[derive(Debug, Parser)]
#[command(name = "lenslabel", version, about = "Register multilens camera bands and move labels between them")]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate and refine the displacement of every band from the reference band.
    Calibrate(CalibrateArgs),
    /// Move reference-band labels of the evaluation images onto every band.
    Transfer(Common),
    /// Build artificial RGB images of the evaluation images.
    ComposeRgb(Common),
    /// Move labels drawn on the RGB images back onto every band.
    Backprop(BackpropArgs),
    /// Score predicted annotations against ground truth.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic multiband dataset with exact labels.
    Synth(SynthArgs),
}

/// Flags shared by the pipeline commands.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Run manifest (JSON).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Transform registry (JSON).
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Output directory; defaults to the manifest's.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Bit depth of the input images; 12-bit data sits in 16-bit files.
    #[arg(long, value_parser = parse_bit_depth)]
    pub bit_depth: Option<BitDepth>,
    /// Restrict to one label kind.
    #[arg(long, value_enum)]
    pub label_kind: Option<KindArg>,
    /// Grid steps on each side of the center [default: 5].
    #[arg(long)]
    pub refine_n: Option<u32>,
    /// Comma-separated, strictly decreasing grid spacings [default: 1,0.1,0.01].
    #[arg(long, value_parser = parse_scales)]
    pub scales: Option<Scales>,
    /// Samples per pixel per axis for polygon IoU [default: 8].
    #[arg(long)]
    pub supersample: Option<u32>,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print a machine-readable report instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Repetitions timed per band; the median is reported.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    pub timing_reps: u32,
}

#[derive(Debug, Args)]
pub struct BackpropArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory with `<stem>__rgb.json` annotations; defaults to the output directory.
    #[arg(long)]
    pub rgb_labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of predicted `<stem>__band<k>.json` files.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth files; defaults to the manifest root.
    #[arg(long)]
    pub gt: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 1280)]
    pub width: usize,
    #[arg(long, default_value_t = 960)]
    pub height: usize,
    #[arg(long, default_value_t = 5)]
    pub reference: u32,
    /// Band offsets as `band:dx,dy` separated by `;`.
    #[arg(long, default_value = "1:-52,47;2:54,46;3:53,-23;4:-52,-19", value_parser = parse_offsets)]
    pub offsets: Offsets,
    #[arg(long, default_value_t = 15)]
    pub images: usize,
    /// Leading images assigned to the calibration split.
    #[arg(long, default_value_t = 12)]
    pub calibration: usize,
    #[arg(long, default_value_t = 16)]
    pub objects: usize,
    #[arg(long, default_value_t = 8.0)]
    pub min_size: f64,
    #[arg(long, default_value_t = 22.0)]
    pub max_size: f64,
    /// Noise standard deviation as a fraction of the dynamic range.
    #[arg(long, default_value_t = 0.005)]
    pub noise: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::CropFill)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = FormatArg::Png)]
    pub format: FormatArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Bb,
    Mask,
}

impl From<KindArg> for LabelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Bb => LabelKind::BoundingBox,
            KindArg::Mask => LabelKind::Polygon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Circular,
    CropFill,
}

impl From<ModeArg> for ShiftMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Circular => ShiftMode::Circular,
            ModeArg::CropFill => ShiftMode::CropFill,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Png,
    Pgm,
}

impl From<FormatArg> for RasterFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Png => RasterFormat::Png,
            FormatArg::Pgm => RasterFormat::Pgm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scales(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct Offsets(pub Vec<(u32, f64, f64)>);

fn parse_bit_depth(s: &str) -> Result<BitDepth, String> {
    let bits: u8 = s.parse().map_err(|_| format!("{s:?} is not a bit depth"))?;
    BitDepth::try_from(bits).map_err(|e| e.to_string())
}

fn parse_scales(s: &str) -> Result<Scales, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("{p:?} is not a number")))
        .collect::<Result<Vec<_>, _>>()
        .map(Scales)
}

fn parse_offsets(s: &str) -> Result<Offsets, String> {
    let mut out = Vec::new();
    for item in s.split(';').map(str::trim).filter(|i| !i.is_empty()) {
        let err = || format!("{item:?} is not band:dx,dy");
        let (band, d) = item.split_once(':').ok_or_else(err)?;
        let (dx, dy) = d.split_once(',').ok_or_else(err)?;
        out.push((
            band.trim().parse().map_err(|_| err())?,
            dx.trim().parse().map_err(|_| err())?,
            dy.trim().parse().map_err(|_| err())?,
        ));
    }
    Ok(Offsets(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lists() {
        assert_eq!(parse_scales("1, 0.1,0.01").unwrap(), Scales(vec![1.0, 0.1, 0.01]));
        assert!(parse_scales("1,x").is_err());
        assert_eq!(
            parse_offsets("1:-52,47; 3:53.5,-23").unwrap(),
            Offsets(vec![(1, -52.0, 47.0), (3, 53.5, -23.0)])
        );
        assert!(parse_offsets("1:-52").is_err());
        assert_eq!(parse_bit_depth("12").unwrap(), BitDepth::Twelve);
        assert!(parse_bit_depth("10").is_err());
    }

    #[test]
    fn command_line_shapes() {
        let cli = Cli::try_parse_from([
            "lenslabel", "calibrate", "--manifest", "m.json", "--label-kind", "mask", "--scales", "2,1",
        ])
        .unwrap();
        let Command::Calibrate(c) = cli.command else { panic!() };
        assert_eq!(c.common.label_kind, Some(KindArg::Mask));
        assert_eq!(c.timing_reps, 5);
        assert!(Cli::try_parse_from(["lenslabel", "calibrate", "--label-kind", "poly"]).is_err());
    }
}
