//! Procedural re-ID dataset: each identity wears a fixed outfit (shirt and
//! trouser colors, hair, a torso pattern and build); every image re-renders
//! it with pose shift, camera color cast, brightness, background and pixel
//! noise. Training and test identities are disjoint.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

use super::{save_ppm, DataError, Split};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub train_ids: usize,
    pub images_per_train_id: usize,
    pub test_ids: usize,
    pub query_per_id: usize,
    pub gallery_per_id: usize,
    pub cameras: u32,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Render left-right mirror-symmetric images.
    pub symmetric: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train_ids: 10,
            images_per_train_id: 20,
            test_ids: 10,
            query_per_id: 2,
            gallery_per_id: 8,
            cameras: 4,
            height: 64,
            width: 32,
            seed: 0,
            symmetric: false,
        }
    }
}

#[derive(Clone, Debug)]
struct Outfit {
    shirt: [f64; 3],
    trousers: [f64; 3],
    hair: [f64; 3],
    accent: [f64; 3],
    pattern: u8,
    build: f64,
}

fn color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
}

impl Outfit {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        Self {
            shirt: color(rng, 0.05, 0.95),
            trousers: color(rng, 0.05, 0.95),
            hair: color(rng, 0.0, 0.4),
            accent: color(rng, 0.05, 0.95),
            pattern: rng.gen_range(0..4),
            build: rng.gen_range(0.38..0.55),
        }
    }
}

/// Render one view of an outfit as a `3 x H x W` image in `[0, 1]`.
fn render(outfit: &Outfit, cast: [f64; 3], cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Tensor {
    let (h, w) = (cfg.height, cfg.width);
    let shift_x = if cfg.symmetric { 0.0 } else { rng.gen_range(-0.08..0.08) };
    let shift_y = rng.gen_range(-0.04..0.04);
    let gain = rng.gen_range(0.85..1.15);
    let background = color(rng, 0.2, 0.8);
    let mut img = vec![0.0; 3 * h * w];
    for i in 0..h {
        let y = (i as f64 + 0.5) / h as f64 - shift_y;
        for j in 0..w {
            let x = (j as f64 + 0.5) / w as f64 - 0.5 - shift_x;
            let half = outfit.build / 2.0;
            let px = if y > 0.05 && y < 0.2 && (x / 0.14).powi(2) + ((y - 0.125) / 0.075).powi(2) <= 1.0 {
                if y < 0.1 {
                    outfit.hair
                } else {
                    [0.85, 0.7, 0.6]
                }
            } else if (0.2..0.56).contains(&y) && x.abs() <= half {
                let stripe = match outfit.pattern {
                    1 => ((y - 0.2) / 0.06) as usize % 2 == 1,
                    2 => x.abs() < half * 0.3,
                    3 if !cfg.symmetric => x > half * 0.2 && (0.3..0.45).contains(&y),
                    _ => false,
                };
                if stripe {
                    outfit.accent
                } else {
                    outfit.shirt
                }
            } else if (0.56..0.95).contains(&y) && x.abs() <= half * 0.85 && x.abs() >= half * 0.12 {
                outfit.trousers
            } else {
                background
            };
            for c in 0..3 {
                let noise = rng.gen_range(-0.04..0.04);
                img[(c * h + i) * w + j] = (px[c] * cast[c] * gain + noise).clamp(0.0, 1.0);
            }
        }
    }
    let mut t = Tensor::new(&[3, h, w], img).expect("image shape");
    if cfg.symmetric {
        let mirror = t.flip_last_axis();
        t.data_mut().iter_mut().zip(mirror.data()).for_each(|(a, b)| *a = (*a + b) / 2.0);
    }
    t
}

/// Write images and `manifest.csv` under `out_dir`; returns the manifest
/// path.
pub fn generate(cfg: &SynthConfig, out_dir: &Path) -> Result<PathBuf, DataError> {
    if cfg.train_ids < 2 || cfg.images_per_train_id == 0 || cfg.cameras == 0 {
        return Err(DataError::Augment(
            "synthetic dataset needs >= 2 training identities, >= 1 image each and >= 1 camera".into(),
        ));
    }
    if cfg.height < 8 || cfg.width < 4 {
        return Err(DataError::Augment("synthetic images must be at least 8x4".into()));
    }
    let img_dir = out_dir.join("images");
    std::fs::create_dir_all(&img_dir)?;
    let casts: Vec<[f64; 3]> = (0..cfg.cameras)
        .map(|c| color(&mut stream(cfg.seed, Stream::Synthetic, &[u64::MAX, c as u64]), 0.8, 1.2))
        .collect();

    let mut manifest = String::from("path,identity,camera,split\n");
    let mut emit = |identity: u64, split: Split, k: usize, camera: u32, outfit: &Outfit| -> Result<(), DataError> {
        let mut rng = stream(cfg.seed, Stream::Synthetic, &[identity, split as u64, k as u64]);
        let img = render(outfit, casts[camera as usize], cfg, &mut rng);
        let rel = format!("images/{split}_{identity:04}_{k:03}_c{camera}.ppm");
        save_ppm(&out_dir.join(&rel), &img)?;
        writeln!(manifest, "{rel},{identity},{camera},{split}").expect("string write");
        Ok(())
    };

    let outfit_of = |identity: u64| Outfit::sample(&mut stream(cfg.seed, Stream::Synthetic, &[identity]));
    for id in 0..cfg.train_ids as u64 {
        let outfit = outfit_of(id);
        for k in 0..cfg.images_per_train_id {
            let cam = stream(cfg.seed, Stream::Synthetic, &[id, 99, k as u64]).gen_range(0..cfg.cameras);
            emit(id, Split::Train, k, cam, &outfit)?;
        }
    }
    for t in 0..cfg.test_ids as u64 {
        let id = cfg.train_ids as u64 + t;
        let outfit = outfit_of(id);
        for k in 0..cfg.query_per_id {
            emit(id, Split::Query, k, (k as u32) % cfg.cameras, &outfit)?;
        }
        for k in 0..cfg.gallery_per_id {
            let cam = stream(cfg.seed, Stream::Synthetic, &[id, 98, k as u64]).gen_range(0..cfg.cameras);
            emit(id, Split::Gallery, k, cam, &outfit)?;
        }
    }
    let path = out_dir.join("manifest.csv");
    std::fs::write(&path, manifest)?;
    Ok(path)
}
