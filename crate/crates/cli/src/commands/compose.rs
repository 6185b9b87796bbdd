use lenslabel::annotio::{read_labelme, write_labelme};
use lenslabel::compose::{compose_rgb, BandAssignment};
use lenslabel::labels::LabelKind;
use lenslabel::raster::load_raster;

use super::transfer::{evaluation_stems, summary, WrittenFiles};
use super::{move_labels, selected_kinds, Context};
use crate::args::{BackpropArgs, Common};
use crate::error::Result;
use crate::manifest::require_files;
use crate::report::create_dir;

/// File name of the composed image of `stem`.
pub fn rgb_name(stem: &str, ext: &str) -> String {
    format!("{stem}__rgb.{ext}")
}

/// Writes `<stem>__rgb.png` for every evaluation image, warped with the
/// `--label-kind` transforms (bounding box by default).
pub fn run_compose(common: &Common) -> Result<String> {
    let ctx = Context::new(common)?;
    let m = &ctx.manifest;
    let stems = evaluation_stems(&ctx)?;
    let rgb = m.spec.rgb;
    let paths: Vec<_> = stems
        .iter()
        .flat_map(|s| rgb.iter().map(move |&b| m.image_path(s, b)))
        .collect();
    require_files(&paths)?;
    let registry = ctx.load_registry()?;
    let kind = common.label_kind.map_or(LabelKind::BoundingBox, Into::into);
    let assign = BandAssignment::from_registry(&registry, m.reference(), rgb, kind)?;
    create_dir(&ctx.out)?;

    let mut files = Vec::new();
    for stem in &stems {
        let [r, g, b] = rgb.map(|band| load_raster(m.image_path(stem, band), ctx.bit_depth));
        let image = compose_rgb(&r?, &g?, &b?, &assign)?;
        let name = rgb_name(stem, "png");
        image.save_png(ctx.out.join(&name))?;
        files.push(name);
    }
    Ok(summary(&ctx, WrittenFiles { images: stems.len(), bands: rgb.to_vec(), files }))
}

/// Reads `<stem>__rgb.json` and writes `<stem>__band<k>.json` for every band.
pub fn run_backprop(args: &BackpropArgs) -> Result<String> {
    let ctx = Context::new(&args.common)?;
    let m = &ctx.manifest;
    let stems = evaluation_stems(&ctx)?;
    let dir = args.rgb_labels.clone().unwrap_or_else(|| ctx.out.clone());
    let sources: Vec<_> = stems.iter().map(|s| dir.join(rgb_name(s, "json"))).collect();
    require_files(&sources)?;
    let registry = ctx.load_registry()?;
    let kinds = selected_kinds(&args.common);
    let bands = m.bands();
    create_dir(&ctx.out)?;

    let mut files = Vec::new();
    for (stem, source) in stems.iter().zip(&sources) {
        let labels = read_labelme(source)?;
        for (band, ls) in move_labels(&labels, &registry, m.reference(), &bands, &kinds)? {
            let name = lenslabel::synth::band_file_name(stem, band, "json");
            write_labelme(&ls, &m.image_name(stem, band), ctx.out.join(&name))?;
            files.push(name);
        }
    }
    Ok(summary(&ctx, WrittenFiles { images: stems.len(), bands, files }))
}
