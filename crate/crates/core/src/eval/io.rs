//! Feature export: an `RTEN` tensor `<stem>.rten` plus a sidecar
//! `<stem>.csv` with one `identity,camera` row per feature row.

use std::path::Path;

use crate::tensor::rten::{self, DType};

use super::{EmbeddingSet, EvalError};

pub fn save_embeddings(stem: &Path, set: &EmbeddingSet) -> Result<(), EvalError> {
    rten::save(&stem.with_extension("rten"), &set.features, DType::F64)?;
    let mut csv = String::from("identity,camera\n");
    for (id, cam) in set.identities.iter().zip(&set.cameras) {
        csv.push_str(&format!("{id},{cam}\n"));
    }
    std::fs::write(stem.with_extension("csv"), csv)?;
    Ok(())
}

pub fn load_embeddings(stem: &Path) -> Result<EmbeddingSet, EvalError> {
    let features = rten::load(&stem.with_extension("rten"))?;
    let text = std::fs::read_to_string(stem.with_extension("csv"))?;
    let mut identities = Vec::new();
    let mut cameras = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let parsed = line
            .split_once(',')
            .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
        let Some((id, cam)) = parsed else {
            return Err(EvalError::Invalid(format!("feature labels line {}: {line:?}", i + 1)));
        };
        identities.push(id);
        cameras.push(cam);
    }
    EmbeddingSet::new(features, identities, cameras)
}
