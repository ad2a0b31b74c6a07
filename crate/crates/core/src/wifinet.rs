//! The fingerprint-image CNN: a conv/BN/ReLU stem, four three-conv blocks
//! of growing width, and a dense softmax head over survey positions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::{Dataset, DatasetKind};
use crate::encoder::{build_directory, encode_dataset, ApDirectory, FingerprintImage};
use crate::error::{Error, Result};
use crate::nn::{
    softmax, softmax_xent, BatchNormLayer, ConvLayer, DenseLayer, Differentiable, Layer, Mode,
    Sequential, Sgdm, SgdmConfig, Tensor,
};
use crate::predictor::{check_side, ClassTable, Localizer};

pub const DEFAULT_WIDTHS: [usize; 5] = [16, 32, 48, 64, 96];
pub const CHECKPOINT_KIND: &str = "wifinet";
/// Centred pixels are divided by this before entering the network.
pub const INPUT_SCALE: f64 = 255.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    /// Stem width followed by the four block widths.
    pub widths: [usize; 5],
    pub kernel: usize,
    /// Adds an identity skip around the last two conv+BN pairs of each block.
    pub residual: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            widths: DEFAULT_WIDTHS,
            kernel: 3,
            residual: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub minibatch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            momentum: 0.9,
            minibatch: 120,
            epochs: 30,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.minibatch < 2 {
            return Err(Error::Config("minibatch must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Sample-weighted mean training loss of each epoch.
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
}

/// Structural census of a built network.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArchitectureAudit {
    pub conv: usize,
    pub batch_norm: usize,
    pub relu: usize,
    pub dense: usize,
    pub softmax: usize,
    pub pooling: usize,
    pub residual: usize,
    /// Output channels of every conv, in order.
    pub conv_widths: Vec<usize>,
    /// Layer kinds with residual wrappers flattened away.
    pub sequence: Vec<&'static str>,
    pub every_conv_followed_by_bn: bool,
    pub spatial_preserved: bool,
    pub head_inputs: usize,
}

impl ArchitectureAudit {
    /// Width of the stem and of each block's last conv.
    pub fn stage_widths(&self) -> Vec<usize> {
        self.conv_widths.iter().step_by(3).copied().collect()
    }

    pub fn block_widths_increase(&self) -> bool {
        let w = self.stage_widths();
        w.len() > 1 && w[1..].windows(2).all(|p| p[0] < p[1])
    }
}

#[derive(Debug, Clone)]
pub struct WiFiNetModel {
    arch: ArchConfig,
    side: usize,
    seed: u64,
    net: Sequential,
    /// Mean training image in pixel units; subtracted before scaling.
    input_mean: Vec<f64>,
    class_table: ClassTable,
    directory: Option<ApDirectory>,
    optimizer: Option<Sgdm>,
    epochs_trained: usize,
}

/// Builds an untrained model with classes `0..n_classes` and default kernel.
pub fn build_wifinet(
    side: usize,
    n_classes: usize,
    widths: [usize; 5],
    seed: u64,
) -> Result<WiFiNetModel> {
    let arch = ArchConfig {
        widths,
        ..ArchConfig::default()
    };
    build_wifinet_with(side, n_classes, &arch, seed)
}

pub fn build_wifinet_with(
    side: usize,
    n_classes: usize,
    arch: &ArchConfig,
    seed: u64,
) -> Result<WiFiNetModel> {
    if side < 1 {
        return Err(Error::Config("image side must be at least 1".into()));
    }
    if n_classes < 2 {
        return Err(Error::Config(format!(
            "need at least 2 classes, got {n_classes}"
        )));
    }
    let w = arch.widths;
    if w.contains(&0) {
        return Err(Error::Config("channel widths must be positive".into()));
    }
    if !w[1..].windows(2).all(|p| p[0] < p[1]) {
        return Err(Error::Config(format!(
            "block widths must strictly increase, got {:?}",
            &w[1..]
        )));
    }
    let k = arch.kernel;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = vec![
        Layer::Conv(ConvLayer::he_init(1, w[0], k, &mut rng)?),
        Layer::BatchNorm(BatchNormLayer::new(w[0])),
        Layer::Relu,
    ];
    for b in 0..4 {
        let (cin, cout) = (w[b], w[b + 1]);
        let first = [
            Layer::Conv(ConvLayer::he_init(cin, cout, k, &mut rng)?),
            Layer::BatchNorm(BatchNormLayer::new(cout)),
        ];
        let rest = vec![
            Layer::Conv(ConvLayer::he_init(cout, cout, k, &mut rng)?),
            Layer::BatchNorm(BatchNormLayer::new(cout)),
            Layer::Conv(ConvLayer::he_init(cout, cout, k, &mut rng)?),
            Layer::BatchNorm(BatchNormLayer::new(cout)),
        ];
        layers.extend(first);
        if arch.residual {
            layers.push(Layer::Residual(Sequential::new(rest)));
        } else {
            layers.extend(rest);
        }
        layers.push(Layer::Relu);
    }
    // Zero head: every class starts identical, so relabelling classes
    // permutes the trained model exactly.
    layers.push(Layer::Dense(DenseLayer::zeros(
        side * side * w[4],
        n_classes,
    )));
    let mut net = Sequential::new(layers);
    net.set_mode(Mode::Inference);
    Ok(WiFiNetModel {
        arch: arch.clone(),
        side,
        seed,
        net,
        input_mean: vec![0.0; side * side],
        class_table: ClassTable::identity(n_classes),
        directory: None,
        optimizer: None,
        epochs_trained: 0,
    })
}

fn flatten_kinds(net: &Sequential, out: &mut Vec<&'static str>, widths: &mut Vec<usize>) {
    for layer in &net.layers {
        match layer {
            Layer::Conv(c) => {
                out.push("conv");
                widths.push(c.out_ch);
            }
            Layer::BatchNorm(_) => out.push("batch_norm"),
            Layer::Relu => out.push("relu"),
            Layer::Dense(_) => out.push("dense"),
            Layer::Residual(body) => flatten_kinds(body, out, widths),
        }
    }
}

impl WiFiNetModel {
    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_classes(&self) -> usize {
        self.class_table.len()
    }

    pub fn epochs_trained(&self) -> usize {
        self.epochs_trained
    }

    pub fn network(&self) -> &Sequential {
        &self.net
    }

    pub fn input_mean(&self) -> &[f64] {
        &self.input_mean
    }

    pub fn class_table(&self) -> &ClassTable {
        &self.class_table
    }

    /// Replaces the class table; the class count must not change.
    pub fn set_class_table(&mut self, table: ClassTable) -> Result<()> {
        if table.len() != self.n_classes() {
            return Err(Error::Config(format!(
                "class table has {} entries, model has {} classes",
                table.len(),
                self.n_classes()
            )));
        }
        self.class_table = table;
        Ok(())
    }

    pub fn directory(&self) -> Option<&ApDirectory> {
        self.directory.as_ref()
    }

    pub fn set_directory(&mut self, dir: ApDirectory) -> Result<()> {
        if dir.side() != self.side {
            return Err(Error::SideMismatch {
                expected: self.side,
                got: dir.side(),
            });
        }
        self.directory = Some(dir);
        Ok(())
    }

    pub fn head_inputs(&self) -> usize {
        match self.net.layers.last() {
            Some(Layer::Dense(d)) => d.in_features,
            _ => 0,
        }
    }

    pub fn audit(&self) -> ArchitectureAudit {
        let counts = self.net.counts();
        let (mut sequence, mut conv_widths) = (Vec::new(), Vec::new());
        flatten_kinds(&self.net, &mut sequence, &mut conv_widths);
        let every_conv_followed_by_bn = sequence
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == "conv")
            .all(|(i, _)| sequence.get(i + 1) == Some(&"batch_norm"));

        // Push a blank image through everything but the head.
        let body = Sequential::new(self.net.layers[..self.net.layers.len() - 1].to_vec());
        let x = Tensor::zeros(vec![1, 1, self.side, self.side]);
        let spatial_preserved = match body.infer(&x) {
            Ok(y) => y.shape()[2..] == [self.side, self.side],
            Err(_) => false,
        };
        ArchitectureAudit {
            conv: counts.conv,
            batch_norm: counts.batch_norm,
            relu: counts.relu,
            dense: counts.dense,
            softmax: 1,
            pooling: 0,
            residual: counts.residual,
            conv_widths,
            sequence,
            every_conv_followed_by_bn,
            spatial_preserved,
            head_inputs: self.head_inputs(),
        }
    }

    fn write_input(&self, img: &FingerprintImage, out: &mut [f64]) {
        for ((o, &p), m) in out.iter_mut().zip(img.pixels()).zip(&self.input_mean) {
            *o = (p as f64 - m) / INPUT_SCALE;
        }
    }

    /// Network input for a batch of images, shape `(n, 1, side, side)`.
    pub fn input_tensor(&self, imgs: &[&FingerprintImage]) -> Result<Tensor> {
        let p = self.side * self.side;
        let mut data = vec![0.0; imgs.len() * p];
        for (img, chunk) in imgs.iter().zip(data.chunks_mut(p)) {
            check_side(self.side, img)?;
            self.write_input(img, chunk);
        }
        Tensor::new(vec![imgs.len(), 1, self.side, self.side], data)
    }

    /// Softmax output for one image.
    pub fn probabilities(&self, img: &FingerprintImage) -> Result<Vec<f64>> {
        let x = self.input_tensor(&[img])?;
        Ok(softmax(&self.net.infer(&x)?)?.into_data())
    }

    /// Most likely position and the full probability vector.
    pub fn predict(&self, img: &FingerprintImage) -> Result<(u32, Vec<f64>)> {
        let probs = self.probabilities(img)?;
        let class = argmax(&probs);
        Ok((self.class_table.position_id(class), probs))
    }

    pub fn predict_xy(&self, img: &FingerprintImage) -> Result<(f64, f64)> {
        let probs = self.probabilities(img)?;
        let p = self.class_table.location(argmax(&probs))?;
        Ok((p.x, p.y))
    }

    /// Class indices for many images, evaluated in chunks.
    pub fn predict_classes(&self, imgs: &[FingerprintImage]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(imgs.len());
        for chunk in imgs.chunks(64) {
            let refs: Vec<&FingerprintImage> = chunk.iter().collect();
            let logits = self.net.infer(&self.input_tensor(&refs)?)?;
            let c = self.n_classes();
            out.extend(logits.data().chunks(c).map(argmax));
        }
        Ok(out)
    }

    /// Trains in place with SGD plus momentum on shuffled minibatches and
    /// leaves the model in inference mode.
    ///
    /// A lone trailing sample is folded into the previous minibatch, since
    /// batch norm cannot normalise a batch of one.
    pub fn train(&mut self, images: &[FingerprintImage], cfg: &TrainConfig) -> Result<TrainReport> {
        cfg.validate()?;
        let n = images.len();
        if n < 2 {
            return Err(Error::TooFewPositions { needed: 2, got: n });
        }
        for img in images {
            check_side(self.side, img)?;
        }
        let labels = self
            .class_table
            .classes_of(images.iter().map(|i| i.label))?;

        let p = self.side * self.side;
        if self.epochs_trained == 0 {
            let mut mean = vec![0.0; p];
            for img in images {
                mean.iter_mut()
                    .zip(img.pixels())
                    .for_each(|(m, &v)| *m += v as f64);
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            self.input_mean = mean;
        }
        let mut inputs = vec![0.0; n * p];
        for (img, chunk) in images.iter().zip(inputs.chunks_mut(p)) {
            self.write_input(img, chunk);
        }

        let sgdm = SgdmConfig {
            learning_rate: cfg.learning_rate,
            momentum: cfg.momentum,
            weight_decay: 0.0,
        };
        let mut opt = match self.optimizer.take() {
            Some(o) => Sgdm::with_velocity(sgdm, o.velocity().to_vec()),
            None => Sgdm::new(sgdm),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let mut order: Vec<usize> = (0..n).collect();
        let mut epoch_loss = Vec::with_capacity(cfg.epochs);
        let mut steps = 0;

        self.net.set_mode(Mode::Train);
        let result = (|| -> Result<()> {
            for epoch in 0..cfg.epochs {
                if cfg.shuffle {
                    order.shuffle(&mut rng);
                }
                let mut batches: Vec<&[usize]> = order.chunks(cfg.minibatch).collect();
                if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
                    batches.pop();
                    let k = batches.len() - 1;
                    let start = k * cfg.minibatch;
                    batches[k] = &order[start..];
                }
                let mut total = 0.0;
                for batch in batches {
                    let mut data = Vec::with_capacity(batch.len() * p);
                    for &i in batch {
                        data.extend_from_slice(&inputs[i * p..(i + 1) * p]);
                    }
                    let x = Tensor::new(vec![batch.len(), 1, self.side, self.side], data)?;
                    let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                    let (logits, tape) = self.net.forward(x)?;
                    let (loss, g) = softmax_xent(&logits, &y)?;
                    if !loss.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "loss {loss} at epoch {epoch}, step {steps}"
                        )));
                    }
                    let mut grads = self.net.zero_grads();
                    self.net.backward(&tape, g, &mut grads)?;
                    debug_assert!(
                        grads.iter().flatten().all(|v| v.is_finite()),
                        "non-finite gradient at epoch {epoch}, step {steps}"
                    );
                    let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
                    opt.step(&mut self.net.params_mut(), &grad_refs)?;
                    total += loss * batch.len() as f64;
                    steps += 1;
                }
                epoch_loss.push(total / n as f64);
                self.epochs_trained += 1;
            }
            Ok(())
        })();
        self.net.set_mode(Mode::Inference);
        self.optimizer = Some(opt);
        result?;
        Ok(TrainReport { epoch_loss, steps })
    }

    /// Builds, labels and trains a model on a training dataset.
    pub fn fit(
        train: &Dataset,
        arch: &ArchConfig,
        cfg: &TrainConfig,
    ) -> Result<(WiFiNetModel, TrainReport)> {
        if train.kind() != DatasetKind::Train {
            return Err(Error::InvalidDataset(
                "models train on a train dataset".into(),
            ));
        }
        let dir = build_directory(train)?;
        let images = encode_dataset(train, &dir);
        let table = ClassTable::from_dataset(train);
        let mut model = build_wifinet_with(dir.side(), table.len(), arch, cfg.seed)?;
        model.set_class_table(table)?;
        model.set_directory(dir)?;
        let report = model.train(&images, cfg)?;
        Ok((model, report))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "arch": self.arch,
            "side": self.side,
            "n_classes": self.n_classes(),
            "seed": self.seed,
            "epochs_trained": self.epochs_trained,
            "class_table": self.class_table,
            "directory": self.directory,
            "optimizer": self.optimizer.as_ref().map(|o| o.config),
        });
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, meta);
        ck.push("input_mean", vec![self.side, self.side], &self.input_mean);
        for (i, p) in self.net.params().iter().enumerate() {
            ck.push(format!("param.{i}"), vec![p.len()], p);
        }
        for (i, b) in self.net.buffers().iter().enumerate() {
            ck.push(format!("buffer.{i}"), vec![b.len()], b);
        }
        if let Some(opt) = &self.optimizer {
            for (i, v) in opt.velocity().iter().enumerate() {
                ck.push(format!("velocity.{i}"), vec![v.len()], v);
            }
        }
        ck
    }

    pub fn from_checkpoint(mut ck: Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!(
                "expected a {CHECKPOINT_KIND} checkpoint, found {}",
                ck.kind
            )));
        }
        #[derive(Deserialize)]
        struct Meta {
            arch: ArchConfig,
            side: usize,
            n_classes: usize,
            seed: u64,
            epochs_trained: usize,
            class_table: ClassTable,
            directory: Option<ApDirectory>,
            optimizer: Option<SgdmConfig>,
        }
        let meta: Meta = serde_json::from_value(ck.meta.clone())
            .map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
        let mut model = build_wifinet_with(meta.side, meta.n_classes, &meta.arch, meta.seed)?;
        model.set_class_table(meta.class_table)?;
        if let Some(dir) = meta.directory {
            model.set_directory(dir)?;
        }
        model.epochs_trained = meta.epochs_trained;
        model.input_mean = take_exact(&mut ck, "input_mean", meta.side * meta.side)?;
        let n_params = model.net.param_count();
        for i in 0..n_params {
            let len = model.net.params()[i].len();
            let v = take_exact(&mut ck, &format!("param.{i}"), len)?;
            model.net.params_mut()[i].copy_from_slice(&v);
        }
        let n_buffers = model.net.buffers().len();
        for i in 0..n_buffers {
            let len = model.net.buffers()[i].len();
            let v = take_exact(&mut ck, &format!("buffer.{i}"), len)?;
            model.net.buffers_mut()[i].copy_from_slice(&v);
        }
        if let Some(config) = meta.optimizer {
            let mut velocity = Vec::new();
            if !ck.tensors.is_empty() {
                for i in 0..n_params {
                    let len = model.net.params()[i].len();
                    velocity.push(take_exact(&mut ck, &format!("velocity.{i}"), len)?);
                }
            }
            model.optimizer = Some(Sgdm::with_velocity(config, velocity));
        }
        if !ck.tensors.is_empty() {
            return Err(Error::Checkpoint("unexpected trailing tensors".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}

fn take_exact(ck: &mut Checkpoint, name: &str, len: usize) -> Result<Vec<f64>> {
    let v = ck.take(name)?;
    if v.len() != len {
        return Err(Error::Checkpoint(format!(
            "tensor {name} has {} values, expected {len}",
            v.len()
        )));
    }
    Ok(v)
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl Localizer for WiFiNetModel {
    fn name(&self) -> &str {
        "wifinet"
    }

    fn class_table(&self) -> &ClassTable {
        &self.class_table
    }

    fn side(&self) -> usize {
        self.side
    }

    fn predict_class(&self, img: &FingerprintImage) -> Result<usize> {
        Ok(argmax(&self.probabilities(img)?))
    }
}

/// Gradients are taken on network inputs directly, in training mode.
impl Differentiable for WiFiNetModel {
    fn parameters(&self) -> Vec<&[f64]> {
        self.net.params()
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.net.params_mut()
    }

    fn loss(&mut self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        self.net.set_mode(Mode::Train);
        let r = self.net.loss(x, labels);
        self.net.set_mode(Mode::Inference);
        r
    }

    fn loss_and_grads(&mut self, x: &Tensor, labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
        self.net.set_mode(Mode::Train);
        let r = self.net.loss_and_grads(x, labels);
        self.net.set_mode(Mode::Inference);
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: [usize; 5] = [2, 3, 4, 5, 6];

    fn toy_images(n_per_class: usize) -> Vec<FingerprintImage> {
        // class 0 lights the left column, class 1 the right one
        let mut out = Vec::new();
        for i in 0..n_per_class {
            for class in 0..2u32 {
                let mut px = vec![0u8; 9];
                for r in 0..3 {
                    px[r * 3 + if class == 0 { 0 } else { 2 }] = 120 + (i % 5) as u8;
                }
                out.push(FingerprintImage::new(3, px, Some(class)).unwrap());
            }
        }
        out
    }

    #[test]
    fn head_size_for_default_widths() {
        let m = build_wifinet(11, 30, DEFAULT_WIDTHS, 0).unwrap();
        assert_eq!(m.head_inputs(), 11 * 11 * 96);
        let a = m.audit();
        assert_eq!((a.conv, a.batch_norm, a.relu, a.dense), (13, 13, 5, 1));
        assert!(a.spatial_preserved && a.every_conv_followed_by_bn);
        assert_eq!(a.stage_widths(), DEFAULT_WIDTHS.to_vec());
    }

    #[test]
    fn residual_keeps_layer_counts() {
        let arch = ArchConfig {
            widths: SMALL,
            kernel: 3,
            residual: true,
        };
        let a = build_wifinet_with(4, 3, &arch, 1).unwrap().audit();
        assert_eq!(
            (a.conv, a.batch_norm, a.relu, a.dense, a.residual),
            (13, 13, 5, 1, 4)
        );
        assert!(a.spatial_preserved);
    }

    #[test]
    fn degenerate_side_one() {
        let m = build_wifinet(1, 2, SMALL, 0).unwrap();
        assert!(m.audit().spatial_preserved);
        let img = FingerprintImage::new(1, vec![150], None).unwrap();
        let p = m.probabilities(&img).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_builds() {
        assert!(build_wifinet(11, 30, [16, 32, 32, 64, 96], 0).is_err());
        assert!(build_wifinet(0, 30, SMALL, 0).is_err());
        assert!(build_wifinet(3, 1, SMALL, 0).is_err());
    }

    #[test]
    fn learns_separable_toy() {
        let imgs = toy_images(10);
        let mut m = build_wifinet(3, 2, SMALL, 3).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            minibatch: 8,
            epochs: 50,
            ..TrainConfig::default()
        };
        let report = m.train(&imgs, &cfg).unwrap();
        assert_eq!(report.epoch_loss.len(), 50);
        let pred = m.predict_classes(&imgs).unwrap();
        let labels: Vec<usize> = imgs.iter().map(|i| i.label.unwrap() as usize).collect();
        assert_eq!(pred, labels);
    }

    #[test]
    fn training_is_deterministic() {
        let imgs = toy_images(4);
        let cfg = TrainConfig {
            minibatch: 3,
            epochs: 2,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = build_wifinet(3, 2, SMALL, 9).unwrap();
            let r = m.train(&imgs, &cfg).unwrap();
            (r, m.network().params().concat())
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
    }

    #[test]
    fn trailing_single_sample_is_folded() {
        // 7 samples with minibatch 3 would leave a batch of one
        let imgs: Vec<_> = toy_images(4).into_iter().take(7).collect();
        let mut m = build_wifinet(3, 2, SMALL, 0).unwrap();
        let cfg = TrainConfig {
            minibatch: 3,
            epochs: 2,
            ..TrainConfig::default()
        };
        assert_eq!(m.train(&imgs, &cfg).unwrap().steps, 4);
    }

    #[test]
    fn train_preconditions() {
        let imgs = toy_images(2);
        let mut m = build_wifinet(3, 2, SMALL, 0).unwrap();
        let zero = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(m.train(&imgs, &zero), Err(Error::Config(_))));
        let mut bad = imgs.clone();
        bad[0].label = Some(5);
        assert!(matches!(
            m.train(&bad, &TrainConfig::default()),
            Err(Error::UnknownLabel { label: 5 })
        ));
        let other = vec![FingerprintImage::zeros(4), FingerprintImage::zeros(4)];
        assert!(matches!(
            m.train(&other, &TrainConfig::default()),
            Err(Error::SideMismatch { .. })
        ));
        assert!(m.predict(&FingerprintImage::zeros(2)).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let imgs = toy_images(3);
        let mut m = build_wifinet(3, 2, SMALL, 2).unwrap();
        let cfg = TrainConfig {
            minibatch: 4,
            epochs: 2,
            ..TrainConfig::default()
        };
        m.train(&imgs, &cfg).unwrap();
        let back = WiFiNetModel::from_checkpoint(
            Checkpoint::from_bytes(&m.to_checkpoint().to_bytes().unwrap()).unwrap(),
        )
        .unwrap();
        for img in &imgs {
            assert_eq!(
                m.probabilities(img).unwrap(),
                back.probabilities(img).unwrap()
            );
        }
        assert_eq!(back.epochs_trained(), 2);
    }
}
