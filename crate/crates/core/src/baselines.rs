//! Classic classifiers over flattened fingerprints: 1-nearest-neighbour,
//! one-vs-rest linear SVM and a random-subspace KNN ensemble.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::{Dataset, DatasetKind};
use crate::encoder::{build_directory, encode_dataset, ApDirectory, FingerprintImage, RSS_OFFSET};
use crate::error::{Error, Result};
use crate::predictor::{check_side, ClassTable, Localizer};

/// RSS value standing in for an unseen AP in raw mode.
pub const RAW_MISSING_DBM: f64 = -100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Pixel intensities of the fingerprint image.
    #[default]
    Image,
    /// dBm per AP, with unseen APs at -100 dBm.
    RawRss,
}

impl FeatureMode {
    pub fn features(self, img: &FingerprintImage) -> Vec<f64> {
        let mut out = vec![0.0; img.pixels().len()];
        self.write(img, &mut out);
        out
    }

    fn write(self, img: &FingerprintImage, out: &mut [f64]) {
        for (o, &p) in out.iter_mut().zip(img.pixels()) {
            *o = match self {
                FeatureMode::Image => p as f64,
                FeatureMode::RawRss if p == 0 => RAW_MISSING_DBM,
                FeatureMode::RawRss => p as f64 - RSS_OFFSET as f64,
            };
        }
    }
}

/// Flattened training matrix with dense class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub side: usize,
    pub dim: usize,
    /// Row-major `n x dim`.
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub mode: FeatureMode,
}

impl TrainingSet {
    pub fn new(images: &[FingerprintImage], table: &ClassTable, mode: FeatureMode) -> Result<Self> {
        let first = images.first().ok_or(Error::EmptyDataset)?;
        let side = first.side();
        let dim = side * side;
        let mut features = vec![0.0; images.len() * dim];
        for (img, row) in images.iter().zip(features.chunks_mut(dim)) {
            check_side(side, img)?;
            mode.write(img, row);
        }
        let labels = table.classes_of(images.iter().map(|i| i.label))?;
        Ok(TrainingSet {
            side,
            dim,
            features,
            labels,
            mode,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

fn labelled_input(train: &Dataset) -> Result<(ApDirectory, Vec<FingerprintImage>, ClassTable)> {
    if train.kind() != DatasetKind::Train {
        return Err(Error::InvalidDataset(
            "models train on a train dataset".into(),
        ));
    }
    let dir = build_directory(train)?;
    let images = encode_dataset(train, &dir);
    Ok((dir, images, ClassTable::from_dataset(train)))
}

fn check_directory(side: usize, dir: &ApDirectory) -> Result<()> {
    if dir.side() != side {
        return Err(Error::SideMismatch {
            expected: side,
            got: dir.side(),
        });
    }
    Ok(())
}

/// Index of the training row nearest to `q` over the feature indices
/// `subset` (all features when `None`); ties go to the lowest row.
fn nearest(set: &TrainingSet, q: &[f64], subset: Option<&[usize]>) -> usize {
    let mut best = (f64::INFINITY, 0);
    for i in 0..set.len() {
        let row = set.row(i);
        let d: f64 = match subset {
            None => row.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(),
            Some(s) => s.iter().map(|&j| (row[j] - q[j]) * (row[j] - q[j])).sum(),
        };
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

// ---------------------------------------------------------------- KNN

/// One-nearest-neighbour classifier with Euclidean distance.
#[derive(Debug, Clone)]
pub struct KnnModel {
    set: TrainingSet,
    table: ClassTable,
    directory: Option<ApDirectory>,
}

pub fn knn_train(
    images: &[FingerprintImage],
    table: &ClassTable,
    mode: FeatureMode,
) -> Result<KnnModel> {
    Ok(KnnModel {
        set: TrainingSet::new(images, table, mode)?,
        table: table.clone(),
        directory: None,
    })
}

impl KnnModel {
    pub fn fit(train: &Dataset, mode: FeatureMode) -> Result<Self> {
        let (dir, images, table) = labelled_input(train)?;
        let mut m = knn_train(&images, &table, mode)?;
        m.directory = Some(dir);
        Ok(m)
    }

    pub fn training_set(&self) -> &TrainingSet {
        &self.set
    }

    pub fn directory(&self) -> Option<&ApDirectory> {
        self.directory.as_ref()
    }

    pub fn set_directory(&mut self, dir: ApDirectory) -> Result<()> {
        check_directory(self.set.side, &dir)?;
        self.directory = Some(dir);
        Ok(())
    }

    /// Class index of the nearest training fingerprint.
    pub fn predict(&self, img: &FingerprintImage) -> Result<usize> {
        check_side(self.set.side, img)?;
        let q = self.set.mode.features(img);
        Ok(self.set.labels[nearest(&self.set, &q, None)])
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("knn", base_meta(&self.set, &self.table, &self.directory));
        push_set(&mut ck, &self.set);
        ck
    }

    pub fn from_checkpoint(mut ck: Checkpoint) -> Result<Self> {
        let meta = expect_kind(&ck, "knn")?;
        let set = take_set(&mut ck, &meta)?;
        finish(&ck)?;
        Ok(KnnModel {
            set,
            table: meta.class_table,
            directory: meta.directory,
        })
    }
}

impl Localizer for KnnModel {
    fn name(&self) -> &str {
        "knn"
    }

    fn class_table(&self) -> &ClassTable {
        &self.table
    }

    fn side(&self) -> usize {
        self.set.side
    }

    fn predict_class(&self, img: &FingerprintImage) -> Result<usize> {
        self.predict(img)
    }
}

// ---------------------------------------------------------------- SVM

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    /// Hinge-loss weight; the regulariser is `1 / (C n)`.
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            epochs: 30,
            seed: 0,
        }
    }
}

/// One-vs-rest linear SVM on standardised features.
#[derive(Debug, Clone)]
pub struct LinearSvmModel {
    side: usize,
    dim: usize,
    mode: FeatureMode,
    /// Per-feature standardisation applied before scoring.
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    /// Row-major `n_classes x dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    table: ClassTable,
    directory: Option<ApDirectory>,
}

/// Pegasos subgradient descent on one binary problem. Features carry an
/// implicit trailing 1 for the (regularised) bias.
fn pegasos(x: &[Vec<f64>], y: &[f64], lambda: f64, epochs: usize, seed: u64) -> (Vec<f64>, f64) {
    let dim = x[0].len();
    // w = scale * v keeps the shrink step O(1)
    let mut v = vec![0.0; dim + 1];
    let mut scale = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..x.len()).collect();
    let radius = 1.0 / lambda.sqrt();
    let mut t = 0usize;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let margin = y[i] * scale * (dot(&v[..dim], &x[i]) + v[dim]);
            let shrink = 1.0 - eta * lambda;
            if shrink > 0.0 {
                scale *= shrink;
            } else {
                // first step: w becomes exactly zero before the update
                v.fill(0.0);
                scale = 1.0;
            }
            if margin < 1.0 {
                let a = eta * y[i] / scale;
                v[..dim]
                    .iter_mut()
                    .zip(&x[i])
                    .for_each(|(vj, xj)| *vj += a * xj);
                v[dim] += a;
            }
            let norm = scale * dot(&v, &v).sqrt();
            if norm > radius {
                scale *= radius / norm;
            }
            if scale < 1e-9 {
                v.iter_mut().for_each(|vj| *vj *= scale);
                scale = 1.0;
            }
        }
    }
    let w: Vec<f64> = v.iter().map(|vj| vj * scale).collect();
    (w[..dim].to_vec(), w[dim])
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn svm_train(
    images: &[FingerprintImage],
    table: &ClassTable,
    mode: FeatureMode,
    cfg: &SvmConfig,
) -> Result<LinearSvmModel> {
    if cfg.c.is_nan() || cfg.c <= 0.0 || cfg.epochs == 0 {
        return Err(Error::Config(
            "SVM needs C > 0 and at least one epoch".into(),
        ));
    }
    let set = TrainingSet::new(images, table, mode)?;
    let n_classes = table.len();
    let mut present = set.labels.clone();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::Config(
            "SVM needs at least two classes in the data".into(),
        ));
    }
    let (n, dim) = (set.len(), set.dim);
    let mut mean = vec![0.0; dim];
    for i in 0..n {
        mean.iter_mut().zip(set.row(i)).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for i in 0..n {
        var.iter_mut()
            .zip(set.row(i))
            .zip(&mean)
            .for_each(|((s, v), m)| *s += (v - m) * (v - m));
    }
    // constant features are left unscaled
    let inv_std: Vec<f64> = var
        .iter()
        .map(|s| {
            let sd = (s / n as f64).sqrt();
            if sd > 0.0 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    let x: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            set.row(i)
                .iter()
                .zip(&mean)
                .zip(&inv_std)
                .map(|((v, m), s)| (v - m) * s)
                .collect()
        })
        .collect();
    let lambda = 1.0 / (cfg.c * n as f64);
    let per_class: Vec<(Vec<f64>, f64)> = (0..n_classes)
        .into_par_iter()
        .map(|c| {
            let y: Vec<f64> = set
                .labels
                .iter()
                .map(|&l| if l == c { 1.0 } else { -1.0 })
                .collect();
            pegasos(&x, &y, lambda, cfg.epochs, cfg.seed.wrapping_add(c as u64))
        })
        .collect();
    let mut weights = Vec::with_capacity(n_classes * dim);
    let mut bias = Vec::with_capacity(n_classes);
    for (w, b) in per_class {
        weights.extend(w);
        bias.push(b);
    }
    Ok(LinearSvmModel {
        side: set.side,
        dim,
        mode,
        mean,
        inv_std,
        weights,
        bias,
        table: table.clone(),
        directory: None,
    })
}

impl LinearSvmModel {
    pub fn fit(train: &Dataset, mode: FeatureMode, cfg: &SvmConfig) -> Result<Self> {
        let (dir, images, table) = labelled_input(train)?;
        let mut m = svm_train(&images, &table, mode, cfg)?;
        m.directory = Some(dir);
        Ok(m)
    }

    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn directory(&self) -> Option<&ApDirectory> {
        self.directory.as_ref()
    }

    pub fn set_directory(&mut self, dir: ApDirectory) -> Result<()> {
        check_directory(self.side, &dir)?;
        self.directory = Some(dir);
        Ok(())
    }

    /// One-vs-rest score of every class.
    pub fn scores(&self, img: &FingerprintImage) -> Result<Vec<f64>> {
        check_side(self.side, img)?;
        let q: Vec<f64> = self
            .mode
            .features(img)
            .iter()
            .zip(&self.mean)
            .zip(&self.inv_std)
            .map(|((v, m), s)| (v - m) * s)
            .collect();
        Ok(self
            .weights
            .chunks(self.dim)
            .zip(&self.bias)
            .map(|(w, b)| dot(w, &q) + b)
            .collect())
    }

    pub fn predict(&self, img: &FingerprintImage) -> Result<usize> {
        Ok(crate::wifinet::argmax(&self.scores(img)?))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut meta = serde_json::json!({
            "mode": self.mode,
            "side": self.side,
            "class_table": self.table,
            "directory": self.directory,
        });
        meta["dim"] = self.dim.into();
        let mut ck = Checkpoint::new("svm", meta);
        ck.push("mean", vec![self.dim], &self.mean);
        ck.push("inv_std", vec![self.dim], &self.inv_std);
        ck.push("weights", vec![self.n_classes(), self.dim], &self.weights);
        ck.push("bias", vec![self.n_classes()], &self.bias);
        ck
    }

    pub fn from_checkpoint(mut ck: Checkpoint) -> Result<Self> {
        let meta = expect_kind(&ck, "svm")?;
        let dim = meta.side * meta.side;
        let c = meta.class_table.len();
        let mean = take_len(&mut ck, "mean", dim)?;
        let inv_std = take_len(&mut ck, "inv_std", dim)?;
        let weights = take_len(&mut ck, "weights", c * dim)?;
        let bias = take_len(&mut ck, "bias", c)?;
        finish(&ck)?;
        Ok(LinearSvmModel {
            side: meta.side,
            dim,
            mode: meta.mode,
            mean,
            inv_std,
            weights,
            bias,
            table: meta.class_table,
            directory: meta.directory,
        })
    }
}

impl Localizer for LinearSvmModel {
    fn name(&self) -> &str {
        "svm"
    }

    fn class_table(&self) -> &ClassTable {
        &self.table
    }

    fn side(&self) -> usize {
        self.side
    }

    fn predict_class(&self, img: &FingerprintImage) -> Result<usize> {
        self.predict(img)
    }
}

// ---------------------------------------------------------------- Subspace KNN

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubspaceConfig {
    pub members: usize,
    /// Features per member; `None` means half of them, rounded up.
    pub dims: Option<usize>,
    pub seed: u64,
}

impl Default for SubspaceConfig {
    fn default() -> Self {
        SubspaceConfig {
            members: 30,
            dims: None,
            seed: 0,
        }
    }
}

/// Ensemble of 1-NN members on random feature subsets, combined by vote.
#[derive(Debug, Clone)]
pub struct SubspaceKnnModel {
    set: TrainingSet,
    /// Sorted feature indices of each member.
    subsets: Vec<Vec<usize>>,
    table: ClassTable,
    directory: Option<ApDirectory>,
}

pub fn subknn_train(
    images: &[FingerprintImage],
    table: &ClassTable,
    mode: FeatureMode,
    cfg: &SubspaceConfig,
) -> Result<SubspaceKnnModel> {
    let set = TrainingSet::new(images, table, mode)?;
    let d = cfg.dims.unwrap_or(set.dim.div_ceil(2));
    if cfg.members == 0 {
        return Err(Error::Config(
            "subspace ensemble needs at least one member".into(),
        ));
    }
    if d == 0 || d > set.dim {
        return Err(Error::Config(format!(
            "subspace size {d} must be in 1..={}",
            set.dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let subsets = (0..cfg.members)
        .map(|_| {
            let mut s = rand::seq::index::sample(&mut rng, set.dim, d).into_vec();
            s.sort_unstable();
            s
        })
        .collect();
    Ok(SubspaceKnnModel {
        set,
        subsets,
        table: table.clone(),
        directory: None,
    })
}

impl SubspaceKnnModel {
    pub fn fit(train: &Dataset, mode: FeatureMode, cfg: &SubspaceConfig) -> Result<Self> {
        let (dir, images, table) = labelled_input(train)?;
        let mut m = subknn_train(&images, &table, mode, cfg)?;
        m.directory = Some(dir);
        Ok(m)
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    pub fn directory(&self) -> Option<&ApDirectory> {
        self.directory.as_ref()
    }

    pub fn set_directory(&mut self, dir: ApDirectory) -> Result<()> {
        check_directory(self.set.side, &dir)?;
        self.directory = Some(dir);
        Ok(())
    }

    /// Class chosen by each member.
    pub fn votes(&self, img: &FingerprintImage) -> Result<Vec<usize>> {
        check_side(self.set.side, img)?;
        let q = self.set.mode.features(img);
        Ok(self
            .subsets
            .iter()
            .map(|s| {
                // a full, ordered subset is plain KNN
                if s.len() == self.set.dim {
                    self.set.labels[nearest(&self.set, &q, None)]
                } else {
                    self.set.labels[nearest(&self.set, &q, Some(s))]
                }
            })
            .collect())
    }

    /// Majority vote; ties go to the lowest class index.
    pub fn predict(&self, img: &FingerprintImage) -> Result<usize> {
        let mut counts = vec![0usize; self.table.len()];
        for v in self.votes(img)? {
            counts[v] += 1;
        }
        let mut best = 0;
        for (c, &n) in counts.iter().enumerate() {
            if n > counts[best] {
                best = c;
            }
        }
        Ok(best)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("subknn", base_meta(&self.set, &self.table, &self.directory));
        push_set(&mut ck, &self.set);
        let d = self.subsets[0].len();
        let flat: Vec<f64> = self.subsets.iter().flatten().map(|&i| i as f64).collect();
        ck.push("subsets", vec![self.subsets.len(), d], &flat);
        ck
    }

    pub fn from_checkpoint(mut ck: Checkpoint) -> Result<Self> {
        let meta = expect_kind(&ck, "subknn")?;
        let set = take_set(&mut ck, &meta)?;
        let shape = ck
            .tensors
            .first()
            .map(|t| t.0.shape.clone())
            .unwrap_or_default();
        if shape.len() != 2 || shape[0] == 0 || shape[1] == 0 || shape[1] > set.dim {
            return Err(Error::Checkpoint("bad subset table".into()));
        }
        let flat = ck.take("subsets")?;
        finish(&ck)?;
        let subsets = flat
            .chunks(shape[1])
            .map(|c| c.iter().map(|&v| v as usize).collect::<Vec<_>>())
            .collect::<Vec<_>>();
        if subsets.iter().flatten().any(|&j| j >= set.dim) {
            return Err(Error::Checkpoint("subset index out of range".into()));
        }
        Ok(SubspaceKnnModel {
            set,
            subsets,
            table: meta.class_table,
            directory: meta.directory,
        })
    }
}

impl Localizer for SubspaceKnnModel {
    fn name(&self) -> &str {
        "subknn"
    }

    fn class_table(&self) -> &ClassTable {
        &self.table
    }

    fn side(&self) -> usize {
        self.set.side
    }

    fn predict_class(&self, img: &FingerprintImage) -> Result<usize> {
        self.predict(img)
    }
}

// ---------------------------------------------------------------- checkpoints

#[derive(Deserialize)]
struct BaseMeta {
    mode: FeatureMode,
    side: usize,
    class_table: ClassTable,
    directory: Option<ApDirectory>,
}

fn base_meta(
    set: &TrainingSet,
    table: &ClassTable,
    dir: &Option<ApDirectory>,
) -> serde_json::Value {
    serde_json::json!({
        "mode": set.mode,
        "side": set.side,
        "class_table": table,
        "directory": dir,
    })
}

fn expect_kind(ck: &Checkpoint, kind: &str) -> Result<BaseMeta> {
    if ck.kind != kind {
        return Err(Error::Checkpoint(format!(
            "expected a {kind} checkpoint, found {}",
            ck.kind
        )));
    }
    serde_json::from_value(ck.meta.clone())
        .map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))
}

fn push_set(ck: &mut Checkpoint, set: &TrainingSet) {
    ck.push("features", vec![set.len(), set.dim], &set.features);
    let labels: Vec<f64> = set.labels.iter().map(|&l| l as f64).collect();
    ck.push("labels", vec![set.len()], &labels);
}

fn take_len(ck: &mut Checkpoint, name: &str, len: usize) -> Result<Vec<f64>> {
    let v = ck.take(name)?;
    if v.len() != len {
        return Err(Error::Checkpoint(format!(
            "tensor {name} has {} values, expected {len}",
            v.len()
        )));
    }
    Ok(v)
}

fn take_set(ck: &mut Checkpoint, meta: &BaseMeta) -> Result<TrainingSet> {
    let dim = meta.side * meta.side;
    let features = ck.take("features")?;
    if dim == 0 || features.len() % dim != 0 {
        return Err(Error::Checkpoint(
            "feature matrix does not match image side".into(),
        ));
    }
    let n = features.len() / dim;
    let labels: Vec<usize> = take_len(ck, "labels", n)?
        .iter()
        .map(|&l| l as usize)
        .collect();
    if labels.iter().any(|&l| l >= meta.class_table.len()) {
        return Err(Error::Checkpoint("label outside the class table".into()));
    }
    Ok(TrainingSet {
        side: meta.side,
        dim,
        features,
        labels,
        mode: meta.mode,
    })
}

fn finish(ck: &Checkpoint) -> Result<()> {
    if ck.tensors.is_empty() {
        Ok(())
    } else {
        Err(Error::Checkpoint("unexpected trailing tensors".into()))
    }
}
