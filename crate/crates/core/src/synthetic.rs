//! Generated corpora for tests, demos and desk-scale acceptance runs.

use std::io::Write;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{write_manifest, ImageStatus, Sample, Source};
use crate::error::{Error, Result};

const FILLER: [&str; 24] = [
    "report", "today", "people", "city", "photo", "says", "new", "local", "after", "video", "shared", "online",
    "week", "post", "group", "claims", "image", "story", "viral", "near", "street", "shows", "council", "update",
];

/// Keywords that decide the label of text-determined samples.
pub const TEXT_KEYWORDS: [&str; 2] = ["alpha", "omega"];

/// Colours that decide the label of image-determined samples.
pub const DOMINANT_COLOURS: [[u8; 3]; 2] = [[210, 40, 40], [40, 40, 210]];

fn sentence(rng: &mut ChaCha8Rng, keyword: &str, words: usize) -> String {
    let mut out: Vec<&str> = (0..words).map(|_| *FILLER.choose(rng).expect("non-empty")).collect();
    let at = rng.random_range(0..=out.len());
    out.insert(at, keyword);
    let mut text = out.join(" ");
    if let Some(first) = text.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    text.push('!');
    text
}

fn write_image(path: &Path, base: [u8; 3], side: u32, rng: &mut ChaCha8Rng) -> Result<()> {
    let img = RgbImage::from_fn(side, side, |_, _| {
        let jitter: i16 = rng.random_range(-12..=12);
        Rgb(base.map(|c| (i16::from(c) + jitter).clamp(0, 255) as u8))
    });
    img.save(path)
        .map_err(|e| Error::Load(format!("writing {}: {e}", path.display())))
}

fn sample(id: String, text: String, image_ref: String, label: u8, image: ImageStatus) -> Sample {
    Sample {
        id,
        text,
        image_ref,
        label2: Some(label),
        label3: None,
        label6: None,
        source: Source::Fakeddit,
        category: None,
        image,
    }
}

/// Writes a binary corpus of `n` samples to `dir` and returns the manifest
/// path. Even-indexed samples take their label from a text keyword and carry
/// a grey image with a faint random tint; odd-indexed samples take their
/// label from a strongly dominant image colour and carry a random keyword.
/// Either modality alone therefore explains only half of the corpus.
pub fn bimodal_corpus(dir: &Path, n: usize, seed: u64) -> Result<PathBuf> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let label = u8::from(rng.random_bool(0.5));
        let text_decides = i % 2 == 0;
        let (keyword, base) = if text_decides {
            let tint: u8 = rng.random_range(4..=10);
            let base = if rng.random_bool(0.5) {
                [128 + tint, 128, 128]
            } else {
                [128, 128, 128 + tint]
            };
            (TEXT_KEYWORDS[usize::from(label)], base)
        } else {
            let keyword = TEXT_KEYWORDS[usize::from(rng.random_bool(0.5))];
            (keyword, DOMINANT_COLOURS[usize::from(label)])
        };
        let words = rng.random_range(5..=9);
        let text = sentence(&mut rng, keyword, words);
        let image_ref = format!("images/{i:04}.png");
        let path = dir.join(&image_ref);
        write_image(&path, base, 48, &mut rng)?;
        samples.push(sample(
            format!("syn-{i:04}"),
            text,
            image_ref,
            label,
            ImageStatus::Present(path),
        ));
    }
    let manifest = dir.join("bimodal.tsv");
    write_manifest(&manifest, &samples)?;
    Ok(manifest)
}

/// Writes a Fakeddit-style manifest with the given per-label counts (no
/// images). Six-way labels cycle through the five misinformation types.
pub fn fakeddit_standin(path: &Path, true_count: usize, misinformation_count: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = true_count + misinformation_count;
    let mut labels: Vec<u8> = std::iter::repeat_n(0, true_count)
        .chain(std::iter::repeat_n(1, misinformation_count))
        .collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
    let mut k = 0u8;
    let samples: Vec<Sample> = (0..total)
        .map(|i| {
            let label2 = labels[i];
            let label6 = if label2 == 0 {
                0
            } else {
                k = k % 5 + 1;
                k
            };
            let label3 = if label2 == 0 { 0 } else { 1 + (label6 % 2) };
            let words = rng.random_range(3..=12);
            Sample {
                id: format!("fd-{i:05}"),
                text: sentence(&mut rng, TEXT_KEYWORDS[usize::from(label2)], words),
                image_ref: String::new(),
                label2: Some(label2),
                label3: Some(label3),
                label6: Some(label6),
                source: Source::Fakeddit,
                category: None,
                image: ImageStatus::Missing,
            }
        })
        .collect();
    write_manifest(path, &samples)
}

/// Writes a Real411-style newline-delimited JSON export. Besides the
/// retained classes it contains `excluded_per_category` records of each
/// dropped complaint category.
pub fn real411_standin(
    path: &Path,
    true_count: usize,
    misinformation_count: usize,
    excluded_per_category: usize,
    seed: u64,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records: Vec<(&str, &str)> = Vec::new();
    records.extend(std::iter::repeat_n(("true_content", "invalid"), true_count));
    records.extend(std::iter::repeat_n(("misinformation", "valid"), misinformation_count));
    for category in ["hate_speech", "incitement_to_violence", "harassment"] {
        records.extend(std::iter::repeat_n((category, "valid"), excluded_per_category));
    }
    rand::seq::SliceRandom::shuffle(records.as_mut_slice(), &mut rng);
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for (i, (category, verdict)) in records.into_iter().enumerate() {
        let words = rng.random_range(3..=12);
        let keyword = if category == "true_content" { "alpha" } else { "omega" };
        let line = serde_json::json!({
            "complaint_id": format!("r411-{i:04}"),
            "text": sentence(&mut rng, keyword, words),
            "image_path": "",
            "category": category,
            "verdict": verdict,
        });
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
