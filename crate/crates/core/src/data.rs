//! Datasets: synthetic generation, JSON Lines IO and query/gallery splitting.
//!
//! JSONL schema, one object per line:
//!
//! ```text
//! {"id": 3, "scene": 1, "features": [0.5, -1.25, ...]}
//! {"id": 3, "scene": 0, "image": "imgs/3_0.ppm"}
//! ```
//!
//! An optional `"split"` field (`"train"`, `"query"`, `"gallery"`) carries a
//! precomputed split; untagged records are `train`. Image paths are resolved
//! relative to the JSONL file. A file must not mix vector and image records.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augment::ImageBuffer;
use crate::common::{streams, Matrix, RngState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Vector(Vec<f64>),
    Image(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Features,
    pub class_id: usize,
    pub scene_id: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub num_scenes: usize,
    /// Feature length; `H·W·3` for image-backed datasets.
    pub dim: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_image_backed(&self) -> bool {
        matches!(self.samples.first().map(|s| &s.features), Some(Features::Image(_)))
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].split == split)
            .collect()
    }

    pub fn class_ids(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.samples[i].class_id).collect()
    }

    pub fn scene_ids(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.samples[i].scene_id).collect()
    }

    /// Feature rows for vector-backed samples.
    pub fn feature_matrix(&self, indices: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            match &self.samples[i].features {
                Features::Vector(v) => data.extend_from_slice(v),
                Features::Image(p) => {
                    return Err(Error::invalid(format!(
                        "sample {i} is image-backed ({}); load images first",
                        p.display()
                    )))
                }
            }
        }
        Matrix::new(indices.len(), self.dim, data)
    }

    /// Reads every image of an image-backed dataset, in sample order.
    pub fn load_images(&self) -> Result<Vec<ImageBuffer>> {
        self.samples
            .iter()
            .map(|s| match &s.features {
                Features::Image(p) => ImageBuffer::read_ppm(p),
                Features::Vector(_) => Err(Error::invalid("dataset is not image-backed")),
            })
            .collect()
    }

    /// Checks that query/gallery tags admit cross-scene retrieval.
    pub fn check_split(&self) -> Result<()> {
        let mut gallery: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for s in self.samples.iter().filter(|s| s.split == Split::Gallery) {
            gallery.entry(s.class_id).or_default().insert(s.scene_id);
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.split != Split::Query {
                continue;
            }
            let ok = gallery
                .get(&s.class_id)
                .is_some_and(|scenes| scenes.iter().any(|&t| t != s.scene_id));
            if !ok {
                return Err(Error::Contract(format!(
                    "query sample {i} (class {}, scene {}) has no gallery match in another scene",
                    s.class_id, s.scene_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub num_scenes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    /// Fraction of classes placed as near-duplicate pairs.
    pub pair_fraction: f64,
    /// Distance between the centers of a planted pair.
    pub pair_sep: f64,
    pub cluster_sigma: f64,
    pub scene_shift_magnitude: f64,
    /// Radius of the sphere class centers are drawn on.
    pub center_radius: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 40,
            num_scenes: 2,
            dim: 16,
            samples_per_class: 8,
            pair_fraction: 0.5,
            pair_sep: 0.5,
            cluster_sigma: 0.3,
            scene_shift_magnitude: 1.0,
            center_radius: 3.0,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_class < 2 {
            return Err(Error::invalid("samples_per_class must be >= 2"));
        }
        if self.num_classes < 2 || self.num_scenes < 1 || self.dim < 1 {
            return Err(Error::invalid("synthetic spec needs C >= 2, T >= 1, D >= 1"));
        }
        if !(self.pair_sep > 0.0 && self.cluster_sigma > 0.0) {
            return Err(Error::invalid("pair_sep and cluster_sigma must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.pair_fraction) {
            return Err(Error::invalid("pair_fraction must be in [0, 1]"));
        }
        if !(self.scene_shift_magnitude >= 0.0 && self.center_radius > 0.0) {
            return Err(Error::invalid("scene_shift_magnitude >= 0 and center_radius > 0 required"));
        }
        Ok(())
    }
}

/// Class centers, planted pairs and scene offsets of a synthetic spec.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthLayout {
    pub centers: Matrix,
    pub pairs: Vec<(usize, usize)>,
    pub scene_offsets: Matrix,
}

fn random_unit(rng: &mut RngState, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
        let n = crate::common::norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn synth_layout(spec: &SynthSpec, rng: &mut RngState) -> SynthLayout {
    let (c, d) = (spec.num_classes, spec.dim);
    let mut centers = Matrix::zeros(c, d);
    for i in 0..c {
        let u = random_unit(rng, d);
        for (v, x) in centers.row_mut(i).iter_mut().zip(u) {
            *v = spec.center_radius * x;
        }
    }
    let mut order: Vec<usize> = (0..c).collect();
    rng.shuffle(&mut order);
    let n_pairs = ((spec.pair_fraction * c as f64) / 2.0).floor() as usize;
    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let (a, b) = (order[2 * i], order[2 * i + 1]);
        let u = random_unit(rng, d);
        let base = centers.row(a).to_vec();
        for ((v, x), ui) in centers.row_mut(b).iter_mut().zip(base).zip(u) {
            *v = x + spec.pair_sep * ui;
        }
        pairs.push((a.min(b), a.max(b)));
    }
    let mut scene_offsets = Matrix::zeros(spec.num_scenes, d);
    for t in 0..spec.num_scenes {
        let u = random_unit(rng, d);
        for (v, x) in scene_offsets.row_mut(t).iter_mut().zip(u) {
            *v = spec.scene_shift_magnitude * x;
        }
    }
    SynthLayout {
        centers,
        pairs,
        scene_offsets,
    }
}

/// The layout [`synth_generate`] uses for `spec`.
pub fn synth_layout_of(spec: &SynthSpec) -> Result<SynthLayout> {
    spec.validate()?;
    Ok(synth_layout(spec, &mut RngState::derive(spec.seed, streams::SYNTH, 0)))
}

/// Gaussian clusters around sphere-distributed centers, with planted
/// near-duplicate class pairs and an additive offset per scene. Scenes are
/// assigned round-robin within each class. Every sample is tagged `Train`.
pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = RngState::derive(spec.seed, streams::SYNTH, 0);
    let layout = synth_layout(spec, &mut rng);
    let mut samples = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for c in 0..spec.num_classes {
        for j in 0..spec.samples_per_class {
            let scene = j % spec.num_scenes;
            let features = layout
                .centers
                .row(c)
                .iter()
                .zip(layout.scene_offsets.row(scene))
                .map(|(m, o)| m + o + spec.cluster_sigma * rng.next_normal())
                .collect();
            samples.push(Sample {
                features: Features::Vector(features),
                class_id: c,
                scene_id: scene,
                split: Split::Train,
            });
        }
    }
    Ok(Dataset {
        samples,
        num_classes: spec.num_classes,
        num_scenes: spec.num_scenes,
        dim: spec.dim,
    })
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_index(obj: &serde_json::Map<String, Value>, field: &str, path: &Path, line: usize) -> Result<usize> {
    let v = obj
        .get(field)
        .ok_or_else(|| parse_error(path, line, format!("missing field \"{field}\"")))?;
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| parse_error(path, line, format!("field \"{field}\" must be a non-negative integer")))
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::new();
    let mut dim: Option<usize> = None;
    let mut image_backed: Option<bool> = None;

    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| parse_error(path, line, e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| parse_error(path, line, "record must be a JSON object"))?;
        let class_id = read_index(obj, "id", path, line)?;
        let scene_id = read_index(obj, "scene", path, line)?;
        let split = match obj.get("split") {
            None => Split::Train,
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|_| parse_error(path, line, format!("unknown split {v}")))?,
        };
        let features = match (obj.get("features"), obj.get("image")) {
            (Some(f), None) => {
                let arr = f
                    .as_array()
                    .ok_or_else(|| parse_error(path, line, "\"features\" must be an array"))?;
                let v = arr
                    .iter()
                    .map(|x| x.as_f64().filter(|x| x.is_finite()))
                    .collect::<Option<Vec<f64>>>()
                    .ok_or_else(|| parse_error(path, line, "\"features\" must hold finite numbers"))?;
                match dim {
                    None => dim = Some(v.len()),
                    Some(d) if d != v.len() => {
                        return Err(parse_error(
                            path,
                            line,
                            format!("feature length {} differs from earlier records ({d})", v.len()),
                        ))
                    }
                    _ => {}
                }
                Features::Vector(v)
            }
            (None, Some(img)) => {
                let rel = img
                    .as_str()
                    .ok_or_else(|| parse_error(path, line, "\"image\" must be a string"))?;
                Features::Image(base.join(rel))
            }
            (Some(_), Some(_)) => return Err(parse_error(path, line, "record has both \"features\" and \"image\"")),
            (None, None) => return Err(parse_error(path, line, "missing field \"features\" or \"image\"")),
        };
        let is_image = matches!(features, Features::Image(_));
        if *image_backed.get_or_insert(is_image) != is_image {
            return Err(parse_error(path, line, "mixed vector and image records"));
        }
        samples.push(Sample {
            features,
            class_id,
            scene_id,
            split,
        });
    }

    if image_backed == Some(true) {
        let mut img_dim = None;
        for (i, s) in samples.iter().enumerate() {
            let Features::Image(p) = &s.features else { unreachable!() };
            let img = ImageBuffer::read_ppm(p)?;
            let d = img.height() * img.width() * 3;
            if *img_dim.get_or_insert(d) != d {
                return Err(Error::Contract(format!(
                    "image {} (sample {i}) has a different size than earlier images",
                    p.display()
                )));
            }
        }
        dim = img_dim;
    }

    Ok(Dataset {
        num_classes: samples.iter().map(|s| s.class_id + 1).max().unwrap_or(0),
        num_scenes: samples.iter().map(|s| s.scene_id + 1).max().unwrap_or(0),
        dim: dim.unwrap_or(0),
        samples,
    })
}

#[derive(Serialize)]
struct Record<'a> {
    id: usize,
    scene: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    features: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    image: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

/// Writes the dataset as JSONL. Split tags are written unless every sample
/// is `Train`.
pub fn save_jsonl(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tagged = dataset.samples.iter().any(|s| s.split != Split::Train);
    let mut out = Vec::new();
    for s in &dataset.samples {
        let (features, image) = match &s.features {
            Features::Vector(v) => (Some(v.as_slice()), None),
            Features::Image(p) => (None, Some(p.to_string_lossy().into_owned())),
        };
        let rec = Record {
            id: s.class_id,
            scene: s.scene_id,
            features,
            image,
            split: tagged.then_some(s.split),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// `count` distinct class ids drawn uniformly, sorted ascending.
pub fn choose_holdout(num_classes: usize, count: usize, rng: &mut RngState) -> Result<Vec<usize>> {
    if count > num_classes {
        return Err(Error::invalid(format!("cannot hold out {count} of {num_classes} classes")));
    }
    let mut classes: Vec<usize> = (0..num_classes).collect();
    rng.shuffle(&mut classes);
    classes.truncate(count);
    classes.sort_unstable();
    Ok(classes)
}

/// Moves the holdout classes out of training: per holdout class and scene,
/// one uniformly drawn sample becomes a query and the rest go to the gallery.
pub fn split_query_gallery(dataset: &Dataset, holdout_classes: &[usize], rng: &mut RngState) -> Result<Dataset> {
    let holdout: BTreeSet<usize> = holdout_classes.iter().copied().collect();
    let mut out = dataset.clone();
    let mut groups: BTreeMap<usize, BTreeMap<usize, Vec<usize>>> = BTreeMap::new();
    for (i, s) in out.samples.iter_mut().enumerate() {
        if holdout.contains(&s.class_id) {
            s.split = Split::Gallery;
            groups.entry(s.class_id).or_default().entry(s.scene_id).or_default().push(i);
        } else {
            s.split = Split::Train;
        }
    }
    for &c in &holdout {
        let scenes = groups.get(&c).map_or(0, |g| g.len());
        if scenes < 2 {
            return Err(Error::Contract(format!(
                "holdout class {c} spans {scenes} scene(s); at least 2 are required"
            )));
        }
    }
    for by_scene in groups.values() {
        for members in by_scene.values() {
            let pick = members[rng.next_int(members.len())?];
            out.samples[pick].split = Split::Query;
        }
    }
    out.check_split()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            num_classes: 10,
            num_scenes: 3,
            dim: 5,
            samples_per_class: 6,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn synth_is_deterministic_and_round_robin() {
        let spec = small_spec();
        let a = synth_generate(&spec).unwrap();
        assert_eq!(a, synth_generate(&spec).unwrap());
        assert_eq!(a.len(), 60);
        for (i, s) in a.samples.iter().enumerate() {
            assert_eq!(s.class_id, i / 6);
            assert_eq!(s.scene_id, (i % 6) % 3);
            assert_eq!(s.split, Split::Train);
        }
        let bad = SynthSpec {
            samples_per_class: 1,
            ..spec
        };
        assert!(synth_generate(&bad).is_err());
    }

    #[test]
    fn zero_scene_shift_leaves_only_noise() {
        let spec = SynthSpec {
            scene_shift_magnitude: 0.0,
            cluster_sigma: 1e-9,
            ..small_spec()
        };
        let d = synth_generate(&spec).unwrap();
        let layout = synth_layout_of(&spec).unwrap();
        for s in &d.samples {
            let Features::Vector(v) = &s.features else { panic!() };
            for (x, c) in v.iter().zip(layout.centers.row(s.class_id)) {
                assert!((x - c).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn planted_partners_are_nearest() {
        let spec = SynthSpec {
            num_classes: 20,
            pair_fraction: 1.0,
            pair_sep: 0.1,
            cluster_sigma: 1e-6,
            ..SynthSpec::default()
        };
        let layout = synth_layout_of(&spec).unwrap();
        assert_eq!(layout.pairs.len(), 10);
        let d = crate::common::pairwise_sq_euclidean(&layout.centers, &layout.centers).unwrap();
        for &(a, b) in &layout.pairs {
            for (x, partner) in [(a, b), (b, a)] {
                let nearest = (0..20)
                    .filter(|&j| j != x)
                    .min_by(|&i, &j| d.get(x, i).total_cmp(&d.get(x, j)))
                    .unwrap();
                assert_eq!(nearest, partner);
            }
        }
    }

    #[test]
    fn split_examples() {
        let spec = SynthSpec {
            num_classes: 3,
            num_scenes: 2,
            samples_per_class: 4,
            ..small_spec()
        };
        let d = synth_generate(&spec).unwrap();
        let s = split_query_gallery(&d, &[1], &mut RngState::new(3)).unwrap();
        assert_eq!(s.indices(Split::Query).len(), 2);
        assert_eq!(s.indices(Split::Gallery).len(), 2);
        assert_eq!(s.indices(Split::Train).len(), 8);
        assert_eq!(s, split_query_gallery(&d, &[1], &mut RngState::new(3)).unwrap());

        let none = split_query_gallery(&d, &[], &mut RngState::new(3)).unwrap();
        assert!(none.samples.iter().all(|s| s.split == Split::Train));

        let one_scene = SynthSpec {
            num_scenes: 1,
            ..spec
        };
        let d = synth_generate(&one_scene).unwrap();
        assert!(split_query_gallery(&d, &[0], &mut RngState::new(3)).is_err());
    }

    #[test]
    fn split_queries_have_cross_scene_matches() {
        let d = synth_generate(&small_spec()).unwrap();
        let holdout = choose_holdout(10, 4, &mut RngState::new(1)).unwrap();
        let s = split_query_gallery(&d, &holdout, &mut RngState::new(2)).unwrap();
        s.check_split().unwrap();
        assert_eq!(s.indices(Split::Query).len(), 4 * 3);
        let total: usize = [Split::Train, Split::Query, Split::Gallery]
            .iter()
            .map(|&t| s.indices(t).len())
            .sum();
        assert_eq!(total, s.len());
    }

    #[test]
    fn jsonl_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");

        std::fs::write(&path, "").unwrap();
        let empty = load_jsonl(&path).unwrap();
        assert!(empty.is_empty());
        assert_eq!((empty.num_classes, empty.num_scenes), (0, 0));

        let one = Dataset {
            samples: vec![Sample {
                features: Features::Vector(vec![0.1, -1.0 / 3.0, 1e-300, 12345.678901234567]),
                class_id: 4,
                scene_id: 1,
                split: Split::Train,
            }],
            num_classes: 5,
            num_scenes: 2,
            dim: 4,
        };
        save_jsonl(&one, &path).unwrap();
        assert_eq!(load_jsonl(&path).unwrap(), one);

        std::fs::write(&path, "{\"id\":0,\"scene\":0,\"features\":[1]}\n{\"scene\":0,\"features\":[1]}\n").unwrap();
        let err = load_jsonl(&path).unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("\"id\""), "{err}");

        std::fs::write(&path, "{\"id\":0,\"scene\":0,\"features\":[1]}\n{\"id\":0,\"scene\":0,\"features\":[1,2]}\n").unwrap();
        assert!(matches!(load_jsonl(&path), Err(Error::Parse { line: 2, .. })));

        std::fs::write(&path, "{\"id\":0,\"scene\":0,\"features\":[1]}\n{\"id\":0,\"scene\":0,\"image\":\"x.ppm\"}\n").unwrap();
        assert!(matches!(load_jsonl(&path), Err(Error::Parse { line: 2, .. })));

        std::fs::write(&path, "not json\n").unwrap();
        assert!(matches!(load_jsonl(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn jsonl_split_tags_survive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let d = synth_generate(&small_spec()).unwrap();
        let s = split_query_gallery(&d, &[2, 5], &mut RngState::new(0)).unwrap();
        save_jsonl(&s, &path).unwrap();
        assert_eq!(load_jsonl(&path).unwrap(), s);
    }

    #[test]
    fn jsonl_images() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageBuffer::filled(4, 2, [9, 8, 7]).unwrap();
        img.write_ppm(dir.path().join("a.ppm")).unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, "{\"id\":1,\"scene\":0,\"image\":\"a.ppm\"}\n{\"id\":0,\"scene\":1,\"image\":\"a.ppm\"}\n").unwrap();
        let d = load_jsonl(&path).unwrap();
        assert!(d.is_image_backed());
        assert_eq!(d.dim, 24);
        assert_eq!(d.load_images().unwrap()[1], img);
        assert!(d.feature_matrix(&[0]).is_err());
    }
}
