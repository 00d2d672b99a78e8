//! Evaluation and ranked-list export for a trained checkpoint.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use reid_core::data::{load_manifest, DatasetManifest, LoadedSplit, Split};
use reid_core::eval::{
    evaluate, normalized_distances, random_embedding_baseline, rank_gallery, save_embeddings, EmbeddingSet, EvalReport,
};
use reid_core::model::Model;
use reid_core::nn::Mode;
use reid_core::rng::{stream, Stream};
use reid_core::Tensor;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::train::build_model;

/// Query and gallery embeddings with the image paths they came from.
pub struct Embedded {
    pub query: EmbeddingSet,
    pub gallery: EmbeddingSet,
    pub query_paths: Vec<String>,
    pub gallery_paths: Vec<String>,
}

fn embed_split(cfg: &RunConfig, model: &Model, split: &LoadedSplit) -> Result<EmbeddingSet, CliError> {
    let norm = cfg.normalization();
    let images: Vec<Tensor> = split.images.iter().map(|i| norm.apply(i)).collect();
    let batch = Tensor::stack(&images)?;
    let features = model.extract_embedding(&batch, cfg.eval.flip_fusion)?;
    Ok(EmbeddingSet::new(features, split.identities.clone(), split.cameras.clone())?)
}

/// Embed the query and gallery splits with an eval-mode copy of `model`.
pub fn embed(cfg: &RunConfig, model: &Model, manifest: &DatasetManifest) -> Result<Embedded, CliError> {
    let mut model = model.clone();
    model.set_mode(Mode::Eval);
    let (h, w) = (cfg.data.height, cfg.data.width);
    let query = manifest.load_split(Split::Query, h, w)?;
    let gallery = manifest.load_split(Split::Gallery, h, w)?;
    if query.is_empty() || gallery.is_empty() {
        return Err(CliError::Config("manifest needs query and gallery images".into()));
    }
    Ok(Embedded {
        query: embed_split(cfg, &model, &query)?,
        gallery: embed_split(cfg, &model, &gallery)?,
        query_paths: query.paths,
        gallery_paths: gallery.paths,
    })
}

/// Load the model described by `cfg` from a checkpoint directory.
pub fn load_model(cfg: &RunConfig, ckpt: &Path) -> Result<(Model, DatasetManifest), CliError> {
    cfg.validate()?;
    let manifest = load_manifest(&cfg.data.manifest)?;
    let mut model = build_model(cfg, &manifest)?;
    let loaded = checkpoint::load(ckpt)?;
    checkpoint::restore_model(&mut model, &loaded)?;
    Ok((model, manifest))
}

pub struct EvalOutcome {
    pub report: EvalReport,
    pub random_baseline_map: f64,
    pub report_path: PathBuf,
}

/// Number of random embeddings averaged for the chance-level baseline.
pub const BASELINE_DRAWS: usize = 10;

/// Score `model`, writing `report.txt` (key=value), `report.json` (one
/// line) and the exported features into `run_dir`.
pub fn evaluate_model(
    cfg: &RunConfig,
    model: &Model,
    manifest: &DatasetManifest,
    run_dir: &Path,
) -> Result<EvalOutcome, CliError> {
    let e = embed(cfg, model, manifest)?;
    let report = evaluate(&e.query, &e.gallery, &cfg.eval)?;
    let mut rng = stream(cfg.train.seed, Stream::Baseline, &[]);
    let random_baseline_map = random_embedding_baseline(
        (&e.query.identities, &e.query.cameras),
        (&e.gallery.identities, &e.gallery.cameras),
        e.query.dim(),
        &cfg.eval,
        BASELINE_DRAWS,
        &mut rng,
    )?;
    std::fs::create_dir_all(run_dir).map_err(|err| CliError::io(run_dir, err))?;
    let mut text = report.to_key_value();
    writeln!(text, "random_baseline_map={random_baseline_map:.6}").unwrap();
    let report_path = run_dir.join("report.txt");
    std::fs::write(&report_path, text).map_err(|err| CliError::io(&report_path, err))?;
    let json_path = run_dir.join("report.json");
    std::fs::write(&json_path, report.summary_line() + "\n").map_err(|err| CliError::io(&json_path, err))?;
    save_embeddings(&run_dir.join("query_features"), &e.query)?;
    save_embeddings(&run_dir.join("gallery_features"), &e.gallery)?;
    Ok(EvalOutcome {
        report,
        random_baseline_map,
        report_path,
    })
}

/// Write the top-`k` gallery entries of every valid query as
/// `query_path\trank\tgallery_path\tdistance\tmatch` lines. Returns the
/// number of lines; `k` is clamped to the shortest filtered ranking.
pub fn export_ranking(
    cfg: &RunConfig,
    e: &Embedded,
    k: usize,
    out: &mut dyn Write,
    warn: &mut dyn Write,
) -> Result<usize, CliError> {
    if k == 0 {
        return Err(CliError::Config("k must be positive".into()));
    }
    let d = normalized_distances(&e.query, &e.gallery)?;
    let rankings = rank_gallery(
        &d,
        (&e.query.identities, &e.query.cameras),
        (&e.gallery.identities, &e.gallery.cameras),
        cfg.eval.cross_camera_filtering,
    );
    let valid: Vec<_> = rankings.iter().filter(|r| r.num_relevant() > 0).collect();
    let shortest = valid.iter().map(|r| r.entries.len()).min().unwrap_or(0);
    let k = if k > shortest {
        writeln!(warn, "warning: k={k} exceeds the filtered gallery size; clamped to {shortest}").ok();
        shortest
    } else {
        k
    };
    let mut lines = 0;
    for r in valid {
        for (rank, entry) in r.entries.iter().take(k).enumerate() {
            writeln!(
                out,
                "{}\t{}\t{}\t{:.6}\t{}",
                e.query_paths[r.query_index],
                rank + 1,
                e.gallery_paths[entry.gallery_index],
                entry.distance,
                u8::from(entry.is_match)
            )
            .map_err(|err| CliError::io(Path::new("<ranking>"), err))?;
            lines += 1;
        }
    }
    Ok(lines)
}
