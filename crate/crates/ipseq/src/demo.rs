//! Generates three small trained tasks (text, image and video captioning
//! stand-ins) in a tasks directory the server can load.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ipseq_core::learn::{OptimizerKind, TrainConfig};
use ipseq_core::model::Modality;
use ipseq_core::tensor::Tensor;
use ipseq_core::vocab::Tokenization;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::ParallelCorpus;
use crate::error::{Error, Result};
use crate::features::write_feature_sequence;
use crate::manifest::{TaskManifest, MANIFEST_NAME};
use crate::training::{train_from_split, TrainSetup};

const COLORS: [(&str, &str); 4] = [("red", "#d62728"), ("green", "#2ca02c"), ("blue", "#1f77b4"), ("yellow", "#e8c547")];
const SHAPES: [&str; 4] = ["circle", "square", "triangle", "star"];
const DIRECTIONS: [(&str, f64, f64); 4] = [("left", -1.0, 0.0), ("right", 1.0, 0.0), ("up", 0.0, -1.0), ("down", 0.0, 1.0)];

#[derive(Debug, Clone, Copy)]
pub struct DemoOptions {
    pub epochs: usize,
    pub seed: u64,
}

impl Default for DemoOptions {
    fn default() -> Self {
        DemoOptions { epochs: 60, seed: 7 }
    }
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write(p: &Path, text: &str) -> Result<()> {
    std::fs::write(p, text).map_err(|e| Error::io(p, e))
}

fn train_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        optimizer: OptimizerKind::Adadelta,
        learning_rate: 1.0,
        batch_size: 4,
        epochs,
        clip_norm: Some(5.0),
        seed,
    }
}

/// English noun phrases and their Spanish renderings, with gender agreement.
fn phrase_pairs() -> Vec<(String, String)> {
    let nouns = [("house", "casa", true), ("cat", "gato", false), ("dog", "perro", false), ("car", "coche", false)];
    let adjectives = [
        ("red", "rojo", "roja"),
        ("green", "verde", "verde"),
        ("big", "grande", "grande"),
        ("small", "pequeño", "pequeña"),
    ];
    let mut out = Vec::new();
    for definite in [true, false] {
        for (en_adj, m, f) in adjectives {
            for (en_noun, es_noun, fem) in nouns {
                let en_det = if definite { "the" } else { "a" };
                let es_det = match (definite, fem) {
                    (true, true) => "la",
                    (true, false) => "el",
                    (false, true) => "una",
                    (false, false) => "un",
                };
                let es_adj = if fem { f } else { m };
                out.push((format!("{en_det} {en_adj} {en_noun}"), format!("{es_det} {es_noun} {es_adj} .")));
            }
        }
    }
    out
}

fn shape_svg(shape: &str, fill: &str) -> String {
    let body = match shape {
        "circle" => format!(r#"<circle cx="64" cy="64" r="40" fill="{fill}"/>"#),
        "square" => format!(r#"<rect x="28" y="28" width="72" height="72" fill="{fill}"/>"#),
        "triangle" => format!(r#"<polygon points="64,20 108,104 20,104" fill="{fill}"/>"#),
        _ => format!(r#"<polygon points="64,14 77,50 115,50 84,72 96,110 64,87 32,110 44,72 13,50 51,50" fill="{fill}"/>"#),
    };
    format!(r##"<svg xmlns="http://www.w3.org/2000/svg" width="128" height="128"><rect width="128" height="128" fill="#f4f4f4"/>{body}</svg>"##)
}

fn motion_svg(fill: &str, dx: f64, dy: f64) -> String {
    let (x0, y0) = (64.0 - 40.0 * dx, 64.0 - 40.0 * dy);
    let (x1, y1) = (64.0 + 40.0 * dx, 64.0 + 40.0 * dy);
    format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="128" height="128"><rect width="128" height="128" fill="#f4f4f4"/><circle r="14" fill="{fill}"><animate attributeName="cx" values="{x0};{x1}" dur="2s" repeatCount="indefinite"/><animate attributeName="cy" values="{y0};{y1}" dur="2s" repeatCount="indefinite"/></circle></svg>"##
    )
}

fn one_hot(n: usize, i: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |j| if i == j { 1.0 } else { 0.0 })
}

/// Writes `<dir>/<stem>.src/.tgt` where each source line names a feature file.
fn write_feature_split(
    dir: &Path,
    stem: &str,
    items: &[(Tensor, String)],
) -> Result<PathBuf> {
    create_dir(&dir.join("features"))?;
    let mut sources = Vec::new();
    let mut targets = Vec::new();
    for (i, (rows, caption)) in items.iter().enumerate() {
        let name = format!("features/{stem}_{i:03}.ikcf");
        write_feature_sequence(&dir.join(&name), rows)?;
        sources.push(name);
        targets.push(caption.clone());
    }
    let path = dir.join(stem);
    ParallelCorpus { sources, targets }.save_split(&path)?;
    Ok(path)
}

fn finish_task(dir: &Path, manifest: &TaskManifest, setup: &TrainSetup) -> Result<()> {
    let (ckpt, _) = train_from_split(&dir.join("train"), setup, |_| {})?;
    ckpt.save(&dir.join(&manifest.checkpoint))?;
    manifest.save(&dir.join(MANIFEST_NAME))
}

fn build_nmt(root: &Path, opts: DemoOptions) -> Result<()> {
    let dir = root.join("nmt");
    create_dir(&dir)?;
    let pairs = phrase_pairs();
    let corpus = |pairs: &[(String, String)]| ParallelCorpus {
        sources: pairs.iter().map(|p| p.0.clone()).collect(),
        targets: pairs.iter().map(|p| p.1.clone()).collect(),
    };
    corpus(&pairs).save_split(&dir.join("train"))?;
    let samples: Vec<_> = pairs.iter().step_by(3).cloned().collect();
    corpus(&samples).save_split(&dir.join("samples"))?;

    let mut m = TaskManifest::new("nmt", "English to Spanish phrases", Modality::Text, Tokenization::Word);
    m.src_tokenization = Some(Tokenization::Char);
    m.max_len = 16;
    let mut setup = TrainSetup::new(Modality::Text, Some(Tokenization::Char), Tokenization::Word);
    setup.max_output_len = 16;
    setup.train = train_config(opts.epochs, opts.seed);
    finish_task(&dir, &m, &setup)
}

fn build_image(root: &Path, opts: DemoOptions, rng: &mut ChaCha8Rng) -> Result<()> {
    let dir = root.join("image_caption");
    create_dir(&dir.join("media"))?;
    let mut train = Vec::new();
    let mut samples = Vec::new();
    let mut previews = String::new();
    for (c, (color, fill)) in COLORS.iter().enumerate() {
        for (s, shape) in SHAPES.iter().enumerate() {
            let caption = format!("a {color} {shape} on a grey background .");
            for copy in 0..3 {
                let row: Vec<f64> = one_hot(4, c).chain(one_hot(4, s)).map(|v| v + rng.gen_range(-0.1..0.1)).collect();
                let item = (Tensor::matrix(1, 8, row), caption.clone());
                if copy == 0 {
                    let name = format!("{color}_{shape}.svg");
                    write(&dir.join("media").join(&name), &shape_svg(shape, fill))?;
                    let _ = writeln!(previews, "{name}");
                    samples.push(item);
                } else {
                    train.push(item);
                }
            }
        }
    }
    write_feature_split(&dir, "train", &train)?;
    write_feature_split(&dir, "samples", &samples)?;
    write(&dir.join("previews.txt"), &previews)?;

    let mut m = TaskManifest::new("image_caption", "Image captioning", Modality::Features, Tokenization::Word);
    m.previews = Some(PathBuf::from("previews.txt"));
    m.media = Some(PathBuf::from("media"));
    m.max_len = 16;
    let mut setup = TrainSetup::new(Modality::Features, None, Tokenization::Word);
    setup.max_output_len = 16;
    setup.train = train_config(opts.epochs, opts.seed);
    finish_task(&dir, &m, &setup)
}

fn build_video(root: &Path, opts: DemoOptions, rng: &mut ChaCha8Rng) -> Result<()> {
    const FRAMES: usize = 4;
    let dir = root.join("video_caption");
    create_dir(&dir.join("media"))?;
    let mut train = Vec::new();
    let mut samples = Vec::new();
    let mut previews = String::new();
    for (c, (color, fill)) in COLORS.iter().enumerate() {
        for (dir_name, dx, dy) in DIRECTIONS {
            let caption = format!("a {color} ball moves {dir_name} .");
            for copy in 0..3 {
                let mut data = Vec::with_capacity(FRAMES * 6);
                for f in 0..FRAMES {
                    let t = f as f64 / (FRAMES - 1) as f64 - 0.5;
                    data.push(t * dx + rng.gen_range(-0.05..0.05));
                    data.push(t * dy + rng.gen_range(-0.05..0.05));
                    data.extend(one_hot(4, c).map(|v| v + rng.gen_range(-0.1..0.1)));
                }
                let item = (Tensor::matrix(FRAMES, 6, data), caption.clone());
                if copy == 0 {
                    let name = format!("{color}_{dir_name}.svg");
                    write(&dir.join("media").join(&name), &motion_svg(fill, dx, dy))?;
                    let _ = writeln!(previews, "{name}");
                    samples.push(item);
                } else {
                    train.push(item);
                }
            }
        }
    }
    write_feature_split(&dir, "train", &train)?;
    write_feature_split(&dir, "samples", &samples)?;
    write(&dir.join("previews.txt"), &previews)?;

    let mut m = TaskManifest::new("video_caption", "Video captioning", Modality::Features, Tokenization::Word);
    m.previews = Some(PathBuf::from("previews.txt"));
    m.media = Some(PathBuf::from("media"));
    m.max_len = 16;
    let mut setup = TrainSetup::new(Modality::Features, None, Tokenization::Word);
    setup.max_output_len = 16;
    setup.train = train_config(opts.epochs, opts.seed);
    finish_task(&dir, &m, &setup)
}

/// Writes the `nmt`, `image_caption` and `video_caption` tasks under `root`.
pub fn build_demo(root: &Path, opts: DemoOptions) -> Result<()> {
    create_dir(root)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    build_nmt(root, opts)?;
    build_image(root, opts, &mut rng)?;
    build_video(root, opts, &mut rng)
}
