//! Browser bindings for three interactive views of the library:
//! patch augmentations on an image, hard-mined versus random batch
//! similarity, and retrieval mAP as the re-ranking mix varies.
//!
//! Each exported function wraps a plain Rust function of the same name
//! prefixed with `run_`, which the native tests call directly.

use hbreid::augment::{grayscale_patch_replacement, horizontal_flip, random_erasing, ImageBuffer, PatchParams};
use hbreid::common::RngState;
use hbreid::data::{choose_holdout, split_query_gallery, synth_generate, synth_layout_of, Split, SynthSpec};
use hbreid::eval::{evaluate, EmbeddedSet, RerankParams};
use hbreid::sampling::{hard_batch_epoch, intra_batch_similarity, pk_random_epoch};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Applies `op` (`"grayscale"`, `"erasing"` or `"flip"`) to an RGBA buffer.
/// Alpha is passed through. Patch operations always fire and use the
/// default area and aspect ranges.
pub fn run_augment_rgba(rgba: &[u8], width: usize, height: usize, op: &str, seed: u64) -> Result<Vec<u8>, String> {
    if rgba.len() != width * height * 4 {
        return Err(format!("expected {} RGBA bytes, got {}", width * height * 4, rgba.len()));
    }
    let rgb: Vec<u8> = rgba.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
    let img = ImageBuffer::new(height, width, rgb).map_err(err)?;
    let params = PatchParams {
        probability: 1.0,
        ..PatchParams::default()
    };
    let mut rng = RngState::new(seed);
    let out = match op {
        "grayscale" => grayscale_patch_replacement(&img, &params, &mut rng).map_err(err)?,
        "erasing" => random_erasing(&img, &params, &mut rng).map_err(err)?,
        "flip" => horizontal_flip(&img),
        other => return Err(format!("unknown operation {other:?}")),
    };
    Ok(out
        .pixels()
        .chunks_exact(3)
        .zip(rgba.chunks_exact(4))
        .flat_map(|(p, a)| [p[0], p[1], p[2], a[3]])
        .collect())
}

#[derive(Debug, Serialize)]
pub struct SamplerComparison {
    /// Mean intra-batch class-weight cosine per epoch.
    pub hard: Vec<f64>,
    pub random: Vec<f64>,
}

/// Batch similarity of both samplers on the planted class centers of a
/// synthetic layout.
pub fn run_sampler_similarity(
    num_classes: usize,
    pair_fraction: f64,
    pair_sep: f64,
    p: usize,
    epochs: usize,
    seed: u64,
) -> Result<SamplerComparison, String> {
    let spec = SynthSpec {
        num_classes,
        pair_fraction,
        pair_sep,
        samples_per_class: 4,
        seed,
        ..SynthSpec::default()
    };
    let w = synth_layout_of(&spec).map_err(err)?.centers;
    let labels: Vec<usize> = (0..num_classes).flat_map(|c| [c; 4]).collect();
    let mean_sim = |batches: &[hbreid::sampling::Batch]| -> Result<f64, String> {
        let mut total = 0.0;
        for b in batches {
            total += intra_batch_similarity(&w, b).map_err(err)?;
        }
        Ok(total / batches.len() as f64)
    };
    let mut out = SamplerComparison {
        hard: Vec::with_capacity(epochs),
        random: Vec::with_capacity(epochs),
    };
    for e in 0..epochs as u64 {
        let mut rng = RngState::derive(seed, 2, e);
        out.hard.push(mean_sim(&hard_batch_epoch(&w, &labels, p, 4, &mut rng).map_err(err)?.batches)?);
        out.random.push(mean_sim(&pk_random_epoch(&labels, p, 4, &mut rng).map_err(err)?.batches)?);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct RerankSweep {
    pub raw_map: f64,
    pub lambdas: Vec<f64>,
    pub maps: Vec<f64>,
}

/// Retrieval on raw synthetic features: mAP without re-ranking and with
/// re-ranking for `lambda_rr` in `0, 0.1, ..., 1`.
pub fn run_rerank_sweep(
    scene_shift: f64,
    cluster_sigma: f64,
    k1: usize,
    k2: usize,
    seed: u64,
) -> Result<RerankSweep, String> {
    let spec = SynthSpec {
        num_classes: 20,
        samples_per_class: 10,
        scene_shift_magnitude: scene_shift,
        cluster_sigma,
        seed,
        ..SynthSpec::default()
    };
    let data = synth_generate(&spec).map_err(err)?;
    let holdout = choose_holdout(spec.num_classes, 10, &mut RngState::derive(seed, 4, 0)).map_err(err)?;
    let data = split_query_gallery(&data, &holdout, &mut RngState::derive(seed, 4, 1)).map_err(err)?;
    let set = |split: Split| -> Result<EmbeddedSet, String> {
        let idx = data.indices(split);
        EmbeddedSet::new(data.feature_matrix(&idx).map_err(err)?, data.class_ids(&idx), data.scene_ids(&idx))
            .map_err(err)
    };
    let (q, g) = (set(Split::Query)?, set(Split::Gallery)?);
    let raw_map = evaluate(&q, &g, None).map_err(err)?.map;
    let lambdas: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let mut maps = Vec::with_capacity(lambdas.len());
    for &lambda_rr in &lambdas {
        let params = RerankParams { k1, k2, lambda_rr };
        params.validate().map_err(err)?;
        maps.push(evaluate(&q, &g, Some(&params)).map_err(err)?.map);
    }
    Ok(RerankSweep { raw_map, lambdas, maps })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn augment_rgba(rgba: &[u8], width: usize, height: usize, op: &str, seed: u64) -> Result<Vec<u8>, JsError> {
    run_augment_rgba(rgba, width, height, op, seed).map_err(|e| JsError::new(&e))
}

/// JSON `{hard: [...], random: [...]}`.
#[wasm_bindgen]
pub fn sampler_similarity(
    num_classes: usize,
    pair_fraction: f64,
    pair_sep: f64,
    p: usize,
    epochs: usize,
    seed: u64,
) -> Result<String, JsError> {
    to_js(run_sampler_similarity(num_classes, pair_fraction, pair_sep, p, epochs, seed))
}

/// JSON `{raw_map, lambdas: [...], maps: [...]}`.
#[wasm_bindgen]
pub fn rerank_sweep(scene_shift: f64, cluster_sigma: f64, k1: usize, k2: usize, seed: u64) -> Result<String, JsError> {
    to_js(run_rerank_sweep(scene_shift, cluster_sigma, k1, k2, seed))
}
