//! Synthetic GZSL benchmarks with planted attribute-appearance ambiguity.
//!
//! Every attribute owns `variants` random unit "renderer" vectors. Each class
//! activates a fixed set of attributes and picks one renderer per active
//! attribute, so the same attribute looks different across classes. A sample
//! drops each active attribute's renderer (plus noise) into a random patch.
//! Unseen classes only use renderers that some seen class also uses.
//!
//! Generated values are rounded to `f32` so the on-disk format round-trips
//! exactly.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::numcore::Tensor;

pub const DATASET_SCHEMA_VERSION: u32 = 1;

const FEATURES_FILE: &str = "features.f32";
const CLASSES_FILE: &str = "prototypes_A.f32";
const SHARED_FILE: &str = "prototypes_S.f32";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub num_seen: usize,
    pub num_unseen: usize,
    pub num_attributes: usize,
    pub num_groups: usize,
    pub num_patches: usize,
    pub token_dim: usize,
    /// Width of the shared attribute vectors `S`.
    pub semantic_dim: usize,
    /// Renderer variants per attribute (`G`).
    pub variants: usize,
    /// Active attributes per class.
    pub active_attributes: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    pub samples_per_class: usize,
    /// Fraction of each seen class's samples assigned to training.
    pub train_fraction: f64,
    /// Attribute strengths uniform in `[0.2, 1]` instead of binary.
    pub continuous: bool,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            num_seen: 8,
            num_unseen: 4,
            num_attributes: 12,
            num_groups: 3,
            num_patches: 8,
            token_dim: 32,
            semantic_dim: 32,
            variants: 3,
            active_attributes: 4,
            noise: 0.1,
            samples_per_class: 40,
            train_fraction: 0.8,
            continuous: false,
            seed: 0,
        }
    }
}

/// Dataset shape presets mirroring common GZSL benchmarks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    CubShape,
    SunShape,
    Awa2Shape,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "cub-shape" => Ok(Preset::CubShape),
            "sun-shape" => Ok(Preset::SunShape),
            "awa2-shape" => Ok(Preset::Awa2Shape),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }

    /// (seen, unseen, attributes, groups)
    pub fn shape(self) -> (usize, usize, usize, usize) {
        match self {
            Preset::CubShape => (150, 50, 312, 28),
            Preset::SunShape => (645, 72, 102, 4),
            Preset::Awa2Shape => (40, 10, 85, 9),
        }
    }

    /// Overrides the class and attribute counts of `base`.
    pub fn apply(self, base: &GenConfig) -> GenConfig {
        let (num_seen, num_unseen, num_attributes, num_groups) = self.shape();
        GenConfig {
            num_seen,
            num_unseen,
            num_attributes,
            num_groups,
            ..base.clone()
        }
    }
}

impl GenConfig {
    pub fn num_classes(&self) -> usize {
        self.num_seen + self.num_unseen
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_seen == 0 || self.num_unseen == 0 {
            return fail("need at least one seen and one unseen class".into());
        }
        if self.variants == 0 {
            return fail("variants must be at least 1".into());
        }
        if self.num_attributes == 0 || self.num_groups == 0 || self.num_groups > self.num_attributes {
            return fail(format!(
                "cannot split {} attributes into {} groups",
                self.num_attributes, self.num_groups
            ));
        }
        if self.active_attributes == 0 || self.active_attributes > self.num_attributes {
            return fail(format!(
                "active_attributes must be in 1..={}",
                self.num_attributes
            ));
        }
        if self.active_attributes > self.num_patches {
            return fail(format!(
                "{} active attributes do not fit in {} patches",
                self.active_attributes, self.num_patches
            ));
        }
        if self.token_dim == 0 || self.semantic_dim == 0 || self.samples_per_class == 0 {
            return fail("token_dim, semantic_dim and samples_per_class must be positive".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail(format!("noise must be finite and non-negative, got {}", self.noise));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return fail(format!("train_fraction must be in (0, 1], got {}", self.train_fraction));
        }
        Ok(())
    }
}

/// Shared attribute vectors, class prototypes and the attribute grouping.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributePrototypeSet {
    /// `S`: `N_s × D_sem`
    pub shared: Tensor,
    /// `A`: `C × N_s`, entries in `[0, 1]`
    pub classes: Tensor,
    pub groups: Vec<Vec<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    SeenTrain,
    SeenTest,
    UnseenTest,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::SeenTrain => "seen-train",
            Split::SeenTest => "seen-test",
            Split::UnseenTest => "unseen-test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GzslDataset {
    pub config: GenConfig,
    pub class_names: Vec<String>,
    /// Per class: does it belong to the seen domain.
    pub seen: Vec<bool>,
    pub prototypes: AttributePrototypeSet,
    /// Per class and attribute: the renderer index, if the attribute is active.
    pub variants: Vec<Vec<Option<usize>>>,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
    /// Row-major `num_samples × N_v × D_in`.
    features: Vec<f64>,
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.iter().map(|x| round_f32(x / norm)).collect();
        }
    }
}

/// Contiguous, nearly equal blocks.
pub fn contiguous_groups(num_attributes: usize, num_groups: usize) -> Vec<Vec<usize>> {
    let base = num_attributes / num_groups;
    let extra = num_attributes % num_groups;
    let mut next = 0;
    (0..num_groups)
        .map(|g| {
            let len = base + usize::from(g < extra);
            let block = (next..next + len).collect();
            next += len;
            block
        })
        .collect()
}

const MAX_TRIES: usize = 10_000;

pub fn generate(config: &GenConfig) -> Result<GzslDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (ns, g, k) = (config.num_attributes, config.variants, config.active_attributes);
    let renderers: Vec<Vec<Vec<f64>>> = (0..ns)
        .map(|_| (0..g).map(|_| unit_vector(&mut rng, config.token_dim)).collect())
        .collect();
    let shared: Vec<f64> = (0..ns)
        .flat_map(|_| unit_vector(&mut rng, config.semantic_dim))
        .collect();

    let num_classes = config.num_classes();
    let mut used_sets: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut variants: Vec<Vec<Option<usize>>> = Vec::with_capacity(num_classes);
    let mut pool: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); ns];

    for _ in 0..config.num_seen {
        let set = draw_set(&mut rng, &(0..ns).collect::<Vec<_>>(), k, &mut used_sets)?;
        let mut row = vec![None; ns];
        for &a in &set {
            let v = rng.random_range(0..g);
            row[a] = Some(v);
            pool[a].insert(v);
        }
        variants.push(row);
    }
    let candidates: Vec<usize> = (0..ns).filter(|&a| !pool[a].is_empty()).collect();
    if candidates.len() < k {
        return Err(Error::Config(format!(
            "seen classes cover only {} attributes; unseen classes need {k}",
            candidates.len()
        )));
    }
    for _ in 0..config.num_unseen {
        let set = draw_set(&mut rng, &candidates, k, &mut used_sets)?;
        let mut row = vec![None; ns];
        for &a in &set {
            let options: Vec<usize> = pool[a].iter().copied().collect();
            row[a] = Some(options[rng.random_range(0..options.len())]);
        }
        variants.push(row);
    }

    let mut classes = vec![0.0; num_classes * ns];
    for (c, row) in variants.iter().enumerate() {
        for (a, v) in row.iter().enumerate() {
            if v.is_some() {
                classes[c * ns + a] = if config.continuous {
                    round_f32(rng.random_range(0.2..=1.0))
                } else {
                    1.0
                };
            }
        }
    }

    let (nv, dim) = (config.num_patches, config.token_dim);
    let per_sample = nv * dim;
    let total = num_classes * config.samples_per_class;
    let mut features = Vec::with_capacity(total * per_sample);
    let mut labels = Vec::with_capacity(total);
    let mut splits = Vec::with_capacity(total);
    let noise = if config.noise > 0.0 {
        Some(Normal::new(0.0, config.noise).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let n = config.samples_per_class;
    let n_train = if n >= 2 {
        ((config.train_fraction * n as f64).round() as usize).clamp(1, n - 1)
    } else {
        n
    };
    for (c, row) in variants.iter().enumerate() {
        let active: Vec<(usize, usize)> = row
            .iter()
            .enumerate()
            .filter_map(|(a, v)| v.map(|v| (a, v)))
            .collect();
        for s in 0..n {
            let mut grid: Vec<f64> = match &noise {
                Some(dist) => (0..per_sample).map(|_| dist.sample(&mut rng)).collect(),
                None => vec![0.0; per_sample],
            };
            let patches = sample(&mut rng, nv, active.len());
            for (&(a, v), patch) in active.iter().zip(patches.iter()) {
                let strength = classes[c * ns + a];
                for (x, r) in grid[patch * dim..(patch + 1) * dim].iter_mut().zip(&renderers[a][v]) {
                    *x += strength * r;
                }
            }
            features.extend(grid.into_iter().map(round_f32));
            labels.push(c);
            splits.push(if c >= config.num_seen {
                Split::UnseenTest
            } else if s < n_train {
                Split::SeenTrain
            } else {
                Split::SeenTest
            });
        }
    }

    let dataset = GzslDataset {
        config: config.clone(),
        class_names: (0..num_classes).map(|c| format!("class_{c:03}")).collect(),
        seen: (0..num_classes).map(|c| c < config.num_seen).collect(),
        prototypes: AttributePrototypeSet {
            shared: Tensor::new(&[ns, config.semantic_dim], shared)?,
            classes: Tensor::new(&[num_classes, ns], classes)?,
            groups: contiguous_groups(ns, config.num_groups),
        },
        variants,
        labels,
        splits,
        features,
    };
    dataset.check_invariants()?;
    Ok(dataset)
}

fn draw_set(
    rng: &mut ChaCha8Rng,
    candidates: &[usize],
    k: usize,
    used: &mut BTreeSet<Vec<usize>>,
) -> Result<Vec<usize>> {
    for _ in 0..MAX_TRIES {
        let mut set: Vec<usize> = sample(rng, candidates.len(), k)
            .iter()
            .map(|i| candidates[i])
            .collect();
        set.sort_unstable();
        if used.insert(set.clone()) {
            return Ok(set);
        }
    }
    Err(Error::Config(format!(
        "could not draw {} distinct class prototypes with {k} of {} attributes active",
        used.len() + 1,
        candidates.len()
    )))
}

impl GzslDataset {
    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.seen.len()
    }

    pub fn sample_shape(&self) -> [usize; 2] {
        [self.config.num_patches, self.config.token_dim]
    }

    /// Token grid of sample `i` (`N_v × D_in`).
    pub fn sample(&self, i: usize) -> Tensor {
        let per = self.config.num_patches * self.config.token_dim;
        Tensor::new(&self.sample_shape(), self.features[i * per..(i + 1) * per].to_vec())
            .expect("sample shape is consistent")
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.num_samples()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn seen_classes(&self) -> Vec<usize> {
        (0..self.num_classes()).filter(|&c| self.seen[c]).collect()
    }

    pub fn unseen_classes(&self) -> Vec<usize> {
        (0..self.num_classes()).filter(|&c| !self.seen[c]).collect()
    }

    /// Class prototype `a_c`.
    pub fn class_prototype(&self, c: usize) -> Tensor {
        Tensor::vector(self.prototypes.classes.row(c).to_vec())
    }

    /// Checks disjointness, grouping, non-zero prototypes and renderer coverage.
    pub fn check_invariants(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(m));
        for (i, (&label, &split)) in self.labels.iter().zip(&self.splits).enumerate() {
            if !self.seen[label] && split != Split::UnseenTest {
                return bad(format!("sample {i} of unseen class {label} is in {}", split.as_str()));
            }
            if self.seen[label] && split == Split::UnseenTest {
                return bad(format!("sample {i} of seen class {label} is tagged unseen"));
            }
        }
        let ns = self.config.num_attributes;
        let mut members: Vec<usize> = self.prototypes.groups.iter().flatten().copied().collect();
        members.sort_unstable();
        if members != (0..ns).collect::<Vec<_>>() {
            return bad("attribute groups do not partition the attributes".into());
        }
        for c in 0..self.num_classes() {
            if self.prototypes.classes.row(c).iter().all(|&v| v == 0.0) {
                return bad(format!("class {c} has an all-zero prototype"));
            }
        }
        for c in self.unseen_classes() {
            for (a, v) in self.variants[c].iter().enumerate() {
                let Some(v) = v else { continue };
                let covered = self
                    .seen_classes()
                    .iter()
                    .any(|&s| self.variants[s][a] == Some(*v));
                if !covered {
                    return bad(format!(
                        "unseen class {c} uses renderer {v} of attribute {a}, which no seen class shows"
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::new();
        for (name, values) in [
            (FEATURES_FILE, self.features.as_slice()),
            (CLASSES_FILE, self.prototypes.classes.data()),
            (SHARED_FILE, self.prototypes.shared.data()),
        ] {
            let sha256 = io::write_bytes(&dir.join(name), &io::encode_f32(values))?;
            files.push(FileEntry {
                name: name.to_string(),
                values: values.len(),
                sha256,
            });
        }
        let manifest = DatasetManifest {
            schema_version: DATASET_SCHEMA_VERSION,
            shapes: Shapes {
                num_samples: self.num_samples(),
                num_patches: self.config.num_patches,
                token_dim: self.config.token_dim,
                num_classes: self.num_classes(),
                num_attributes: self.config.num_attributes,
                semantic_dim: self.config.semantic_dim,
            },
            class_names: self.class_names.clone(),
            seen_classes: self.seen_classes(),
            unseen_classes: self.unseen_classes(),
            labels: self.labels.clone(),
            splits: SplitLists {
                seen_train: self.indices(Split::SeenTrain),
                seen_test: self.indices(Split::SeenTest),
                unseen_test: self.indices(Split::UnseenTest),
            },
            groups: self.prototypes.groups.clone(),
            variants: self.variants.clone(),
            config: self.config.clone(),
            files,
        };
        io::write_json(&dir.join(MANIFEST_FILE), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let m: DatasetManifest = io::read_manifest(&manifest_path, DATASET_SCHEMA_VERSION)?;
        let malformed = |message: String| Error::Manifest {
            path: manifest_path.clone(),
            message,
        };
        let sh = &m.shapes;
        let file = |name: &str| -> Result<(PathBuf, &FileEntry)> {
            let entry = m
                .files
                .iter()
                .find(|f| f.name == name)
                .ok_or_else(|| malformed(format!("no entry for {name}")))?;
            Ok((dir.join(name), entry))
        };
        let expected = [
            (FEATURES_FILE, sh.num_samples * sh.num_patches * sh.token_dim),
            (CLASSES_FILE, sh.num_classes * sh.num_attributes),
            (SHARED_FILE, sh.num_attributes * sh.semantic_dim),
        ];
        let mut arrays = Vec::new();
        for (name, count) in expected {
            let (path, entry) = file(name)?;
            if entry.values != count {
                return Err(malformed(format!(
                    "{name} declares {} values but shapes imply {count}",
                    entry.values
                )));
            }
            arrays.push(io::read_f32(&path, count, &entry.sha256)?);
        }
        let shared = arrays.pop().expect("three arrays");
        let classes = arrays.pop().expect("three arrays");
        let features = arrays.pop().expect("three arrays");

        if m.labels.len() != sh.num_samples || m.class_names.len() != sh.num_classes {
            return Err(malformed("label or class-name count disagrees with shapes".into()));
        }
        if m.labels.iter().any(|&l| l >= sh.num_classes) {
            return Err(malformed("label out of range".into()));
        }
        let mut seen = vec![false; sh.num_classes];
        for &c in &m.seen_classes {
            *seen.get_mut(c).ok_or_else(|| malformed(format!("seen class {c} out of range")))? = true;
        }
        let mut splits = vec![None; sh.num_samples];
        for (list, split) in [
            (&m.splits.seen_train, Split::SeenTrain),
            (&m.splits.seen_test, Split::SeenTest),
            (&m.splits.unseen_test, Split::UnseenTest),
        ] {
            for &i in list {
                let slot = splits
                    .get_mut(i)
                    .ok_or_else(|| malformed(format!("split index {i} out of range")))?;
                if slot.replace(split).is_some() {
                    return Err(malformed(format!("sample {i} appears in two splits")));
                }
            }
        }
        let splits = splits
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| malformed(format!("sample {i} has no split"))))
            .collect::<Result<Vec<_>>>()?;
        if m.config.num_patches != sh.num_patches
            || m.config.token_dim != sh.token_dim
            || m.config.num_attributes != sh.num_attributes
            || m.config.semantic_dim != sh.semantic_dim
        {
            return Err(malformed("config echo disagrees with shapes".into()));
        }

        let dataset = GzslDataset {
            config: m.config,
            class_names: m.class_names,
            seen,
            prototypes: AttributePrototypeSet {
                shared: Tensor::new(&[sh.num_attributes, sh.semantic_dim], shared)?,
                classes: Tensor::new(&[sh.num_classes, sh.num_attributes], classes)?,
                groups: m.groups,
            },
            variants: m.variants,
            labels: m.labels,
            splits,
            features,
        };
        dataset.check_invariants()?;
        Ok(dataset)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Shapes {
    num_samples: usize,
    num_patches: usize,
    token_dim: usize,
    num_classes: usize,
    num_attributes: usize,
    semantic_dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitLists {
    seen_train: Vec<usize>,
    seen_test: Vec<usize>,
    unseen_test: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileEntry {
    name: String,
    values: usize,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetManifest {
    schema_version: u32,
    shapes: Shapes,
    class_names: Vec<String>,
    seen_classes: Vec<usize>,
    unseen_classes: Vec<usize>,
    labels: Vec<usize>,
    splits: SplitLists,
    groups: Vec<Vec<usize>>,
    variants: Vec<Vec<Option<usize>>>,
    config: GenConfig,
    files: Vec<FileEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenConfig {
        GenConfig {
            samples_per_class: 5,
            ..GenConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = generate(&GenConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(other.features(), generate(&small()).unwrap().features());
    }

    #[test]
    fn unseen_classes_never_train() {
        let d = generate(&small()).unwrap();
        for i in d.indices(Split::SeenTrain).into_iter().chain(d.indices(Split::SeenTest)) {
            assert!(d.seen[d.labels[i]]);
        }
        for i in d.indices(Split::UnseenTest) {
            assert!(!d.seen[d.labels[i]]);
        }
        assert_eq!(d.indices(Split::SeenTrain).len(), 8 * 4);
    }

    #[test]
    fn infeasible_config_is_rejected() {
        let cfg = GenConfig {
            active_attributes: 9,
            ..small()
        };
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
        let cfg = GenConfig {
            variants: 0,
            ..small()
        };
        assert!(generate(&cfg).is_err());
    }

    /// With one renderer and no noise every sample of a class carries the
    /// same set of non-zero patch rows.
    #[test]
    fn degenerate_dataset_has_identical_renderings() {
        let cfg = GenConfig {
            variants: 1,
            noise: 0.0,
            ..small()
        };
        let d = generate(&cfg).unwrap();
        let rows_of = |i: usize| {
            let s = d.sample(i);
            let mut rows: Vec<Vec<u64>> = s
                .to_rows()
                .into_iter()
                .filter(|r| r.iter().any(|&v| v != 0.0))
                .map(|r| r.iter().map(|v| v.to_bits()).collect())
                .collect();
            rows.sort();
            rows
        };
        for c in 0..d.num_classes() {
            let idx: Vec<_> = (0..d.num_samples()).filter(|&i| d.labels[i] == c).collect();
            let first = rows_of(idx[0]);
            assert_eq!(first.len(), cfg.active_attributes);
            for &i in &idx[1..] {
                assert_eq!(rows_of(i), first);
            }
        }
    }

    #[test]
    fn continuous_strengths_are_bounded() {
        let d = generate(&GenConfig {
            continuous: true,
            ..small()
        })
        .unwrap();
        for &v in d.prototypes.classes.data() {
            assert!(v == 0.0 || (0.2..=1.0).contains(&v));
        }
    }

    #[test]
    fn presets_match_benchmark_shapes() {
        assert_eq!(Preset::CubShape.shape(), (150, 50, 312, 28));
        assert_eq!(Preset::Awa2Shape.shape(), (40, 10, 85, 9));
        assert_eq!(Preset::SunShape.shape(), (645, 72, 102, 4));
        let cfg = Preset::Awa2Shape.apply(&GenConfig {
            samples_per_class: 2,
            ..GenConfig::default()
        });
        let d = generate(&cfg).unwrap();
        assert_eq!(d.num_classes(), 50);
        assert_eq!(d.prototypes.groups.len(), 9);
        assert_eq!(d.prototypes.classes.shape(), &[50, 85]);
    }

    #[test]
    fn groups_are_contiguous_blocks() {
        assert_eq!(
            contiguous_groups(7, 3),
            vec![vec![0, 1, 2], vec![3, 4], vec![5, 6]]
        );
    }
}
