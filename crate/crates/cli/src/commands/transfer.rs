use lenslabel::annotio::{read_labelme, write_labelme};
use lenslabel::BandId;
use serde::Serialize;

use super::{move_labels, selected_kinds, Context};
use crate::args::Common;
use crate::error::{CliError, Result};
use crate::manifest::require_files;
use crate::report::{create_dir, table, to_json};

#[derive(Debug, Clone, Serialize)]
pub struct WrittenFiles {
    pub images: usize,
    pub bands: Vec<BandId>,
    pub files: Vec<String>,
}

/// Transfers labels from `<stem>__band<ref>.json` in the manifest root.
pub fn run(common: &Common) -> Result<String> {
    let ctx = Context::new(common)?;
    let m = &ctx.manifest;
    let stems = evaluation_stems(&ctx)?;
    let sources: Vec<_> = stems.iter().map(|s| m.annotation_path(s, m.reference())).collect();
    require_files(&sources)?;
    let registry = ctx.load_registry()?;
    let kinds = selected_kinds(common);
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

pub fn evaluation_stems(ctx: &Context) -> Result<Vec<String>> {
    let stems = ctx.manifest.spec.evaluation.clone();
    if stems.is_empty() {
        return Err(CliError::validation("the evaluation split is empty"));
    }
    Ok(stems)
}

pub fn summary(ctx: &Context, w: WrittenFiles) -> String {
    if ctx.json {
        return to_json(&w);
    }
    let rows = vec![vec![
        w.images.to_string(),
        w.bands.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        w.files.len().to_string(),
        ctx.out.display().to_string(),
    ]];
    table(&["Images", "Bands", "Files", "Directory"], &rows)
}
