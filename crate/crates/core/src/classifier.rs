//! Control/pathology classification from surface offsets with a small
//! multilayer perceptron.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;
use crate::shape_data::stratified_split;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Rectifier,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Rectifier => "rectifier",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rectifier" | "relu" => Ok(Activation::Rectifier),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" | "logistic" => Ok(Activation::Sigmoid),
            _ => Err(Error::invalid(format!("unknown activation '{s}'"))),
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Rectifier => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Rectifier => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    /// Hidden layer widths; empty gives logistic regression.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub l2: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![16],
            activation: Activation::Rectifier,
            l2: 1e-3,
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 150,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layers must have at least one unit"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and positive"));
        }
        if !(self.l2 >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("l2 must be >= 0 and momentum in [0, 1)"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        Ok(())
    }

    /// Hidden units summed over layers; used to prefer smaller networks.
    pub fn size(&self) -> usize {
        self.hidden.iter().sum()
    }

    pub fn describe(&self) -> String {
        format!(
            "hidden={:?} activation={} l2={} lr={} momentum={}",
            self.hidden,
            self.activation.name(),
            self.l2,
            self.learning_rate,
            self.momentum
        )
    }
}

/// Hidden ∈ {[], [16], [32, 16]} × {rectifier, tanh} × L2 ∈ {0, 1e-3} ×
/// momentum ∈ {0, 0.9}.
pub fn default_grid(seed: u64) -> Vec<MlpConfig> {
    let mut grid = Vec::new();
    for hidden in [vec![], vec![16], vec![32, 16]] {
        for activation in [Activation::Rectifier, Activation::Tanh] {
            for l2 in [0.0, 1e-3] {
                for momentum in [0.0, 0.9] {
                    grid.push(MlpConfig {
                        hidden: hidden.clone(),
                        activation,
                        l2,
                        momentum,
                        seed,
                        ..MlpConfig::default()
                    });
                }
            }
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// out × in
    w: DMatrix<f64>,
    b: DVector<f64>,
}

/// Trained network with its feature standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    activation: Activation,
    layers: Vec<Layer>,
    mean: DVector<f64>,
    scale: DVector<f64>,
    /// Training loss after each epoch.
    pub loss_history: Vec<f64>,
}

fn check_features(features: &[Vec<f64>], labels: &[u8]) -> Result<usize> {
    if features.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            got: labels.len(),
        });
    }
    let d = features[0].len();
    if d == 0 {
        return Err(Error::invalid("features are empty"));
    }
    for f in features {
        if f.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: f.len(),
            });
        }
        if f.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("features contain NaN or infinite values"));
        }
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(format!("labels must be 0 or 1, got {l}")));
    }
    Ok(d)
}

impl Mlp {
    fn new_random(cfg: &MlpConfig, d: usize, rng: &mut impl Rng) -> Self {
        let mut sizes = vec![d];
        sizes.extend(&cfg.hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    w: DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..limit)),
                    b: DVector::zeros(fan_out),
                }
            })
            .collect();
        Self {
            activation: cfg.activation,
            layers,
            mean: DVector::zeros(d),
            scale: DVector::from_element(d, 1.0),
            loss_history: Vec::new(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    fn standardize(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter().enumerate().map(|(j, v)| (v - self.mean[j]) / self.scale[j]),
        )
    }

    /// Layer outputs for one standardized input; the last is the probability.
    fn forward(&self, x: &DVector<f64>) -> Vec<DVector<f64>> {
        let mut acts = vec![x.clone()];
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = &layer.w * acts.last().unwrap() + &layer.b;
            let a = if l == last {
                z.map(sigmoid)
            } else {
                z.map(|v| self.activation.apply(v))
            };
            acts.push(a);
        }
        acts
    }

    pub fn predict_proba(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        features
            .iter()
            .map(|f| {
                if f.len() != self.n_features() {
                    return Err(Error::DimensionMismatch {
                        expected: self.n_features(),
                        got: f.len(),
                    });
                }
                Ok(self.forward(&self.standardize(f)).last().unwrap()[0])
            })
            .collect()
    }

    /// Mean binary cross-entropy plus (l2/2)·Σ‖W‖² over already-standardized
    /// inputs, with gradients in the order of [`Mlp::parameters`].
    fn loss_grad(&self, xs: &[DVector<f64>], ys: &[f64], l2: f64) -> (f64, Vec<Layer>) {
        let mut grads: Vec<Layer> = self
            .layers
            .iter()
            .map(|l| Layer {
                w: DMatrix::zeros(l.w.nrows(), l.w.ncols()),
                b: DVector::zeros(l.b.len()),
            })
            .collect();
        let n = xs.len() as f64;
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let acts = self.forward(x);
            let p = acts.last().unwrap()[0];
            let pc = p.clamp(1e-15, 1.0 - 1e-15);
            loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
            // sigmoid + cross-entropy: dL/dz = p − y
            let mut delta = DVector::from_element(1, p - y);
            for l in (0..self.layers.len()).rev() {
                grads[l].w += &delta * acts[l].transpose();
                grads[l].b += &delta;
                if l > 0 {
                    let back = self.layers[l].w.tr_mul(&delta);
                    delta = back.zip_map(&acts[l], |g, a| g * self.activation.derivative(a));
                }
            }
        }
        loss /= n;
        for (g, layer) in grads.iter_mut().zip(&self.layers) {
            g.w /= n;
            g.b /= n;
            g.w += &layer.w * l2;
            loss += 0.5 * l2 * layer.w.norm_squared();
        }
        (loss, grads)
    }

    /// All weights and biases, layer by layer (W column-major, then b).
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied().collect::<Vec<_>>())
            .collect()
    }

    pub fn set_parameters(&mut self, p: &[f64]) -> Result<()> {
        let total: usize = self.layers.iter().map(|l| l.w.len() + l.b.len()).sum();
        if p.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                got: p.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.as_mut_slice().copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.b.len();
            l.b.as_mut_slice().copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Regularized training loss and its parameter gradient on raw features.
    pub fn loss_and_gradient(&self, features: &[Vec<f64>], labels: &[u8], l2: f64) -> Result<(f64, Vec<f64>)> {
        check_features(features, labels)?;
        let xs: Vec<DVector<f64>> = features.iter().map(|f| self.standardize(f)).collect();
        let ys: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
        let (loss, grads) = self.loss_grad(&xs, &ys, l2);
        let flat = grads
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied().collect::<Vec<_>>())
            .collect();
        Ok((loss, flat))
    }

    pub fn to_text(&self) -> String {
        let join = |v: &mut dyn Iterator<Item = &f64>| v.map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let mut out = String::from("MLP1\n");
        let _ = writeln!(out, "activation {}", self.activation.name());
        let _ = writeln!(out, "layers {}", self.layers.len());
        let _ = writeln!(out, "mean {}", join(&mut self.mean.iter()));
        let _ = writeln!(out, "scale {}", join(&mut self.scale.iter()));
        for l in &self.layers {
            let _ = writeln!(out, "layer {} {}", l.w.nrows(), l.w.ncols());
            for r in 0..l.w.nrows() {
                let _ = writeln!(out, "{}", join(&mut l.w.row(r).iter()));
            }
            let _ = writeln!(out, "bias {}", join(&mut l.b.iter()));
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, m: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: m.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| lines.next().ok_or_else(|| err(0, &format!("missing {what}")));
        let nums = |line: usize, s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| err(line, &format!("bad number '{t}'"))))
                .collect()
        };
        let (l, magic) = next("header")?;
        if magic != "MLP1" {
            return Err(err(l, "missing MLP1 header"));
        }
        let (l, act) = next("activation")?;
        let activation = Activation::parse(
            act.strip_prefix("activation ")
                .ok_or_else(|| err(l, "expected activation"))?,
        )?;
        let (l, nl) = next("layers")?;
        let n_layers: usize = nl
            .strip_prefix("layers ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(l, "expected layer count"))?;
        let (l, m) = next("mean")?;
        let mean = DVector::from_vec(nums(l, m.strip_prefix("mean").ok_or_else(|| err(l, "expected mean"))?)?);
        let (l, s) = next("scale")?;
        let scale = DVector::from_vec(nums(
            l,
            s.strip_prefix("scale").ok_or_else(|| err(l, "expected scale"))?,
        )?);
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let (l, head) = next("layer")?;
            let dims = nums(l, head.strip_prefix("layer").ok_or_else(|| err(l, "expected layer"))?)?;
            if dims.len() != 2 {
                return Err(err(l, "layer needs rows and columns"));
            }
            let (r, c) = (dims[0] as usize, dims[1] as usize);
            let mut w = DMatrix::zeros(r, c);
            for i in 0..r {
                let (l, row) = next("weights")?;
                let v = nums(l, row)?;
                if v.len() != c {
                    return Err(err(l, "wrong weight row length"));
                }
                w.row_mut(i).iter_mut().zip(v).for_each(|(x, y)| *x = y);
            }
            let (l, b) = next("bias")?;
            let b = nums(l, b.strip_prefix("bias").ok_or_else(|| err(l, "expected bias"))?)?;
            if b.len() != r {
                return Err(err(l, "wrong bias length"));
            }
            layers.push(Layer {
                w,
                b: DVector::from_vec(b),
            });
        }
        if mean.len() != scale.len() || layers.first().is_none_or(|l| l.w.ncols() != mean.len()) {
            return Err(err(0, "inconsistent model dimensions"));
        }
        Ok(Self {
            activation,
            layers,
            mean,
            scale,
            loss_history: Vec::new(),
        })
    }
}

/// Trains by mini-batch gradient descent with momentum on z-scored features
/// (constant features are only centred).
pub fn train_mlp(features: &[Vec<f64>], labels: &[u8], cfg: &MlpConfig) -> Result<Mlp> {
    cfg.validate()?;
    let d = check_features(features, labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos < 2 || labels.len() - pos < 2 {
        return Err(Error::invalid("training needs at least 2 samples of each class"));
    }
    let n = features.len();
    let mut rng = rng_from_seed(cfg.seed);
    let mut model = Mlp::new_random(cfg, d, &mut rng);
    let nf = n as f64;
    for j in 0..d {
        let m = features.iter().map(|f| f[j]).sum::<f64>() / nf;
        let var = features.iter().map(|f| (f[j] - m).powi(2)).sum::<f64>() / nf;
        model.mean[j] = m;
        model.scale[j] = if var > 1e-24 { var.sqrt() } else { 1.0 };
    }
    let xs: Vec<DVector<f64>> = features.iter().map(|f| model.standardize(f)).collect();
    let ys: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
    let mut velocity: Vec<Layer> = model
        .layers
        .iter()
        .map(|l| Layer {
            w: DMatrix::zeros(l.w.nrows(), l.w.ncols()),
            b: DVector::zeros(l.b.len()),
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let bx: Vec<DVector<f64>> = batch.iter().map(|&i| xs[i].clone()).collect();
            let by: Vec<f64> = batch.iter().map(|&i| ys[i]).collect();
            let (_, grads) = model.loss_grad(&bx, &by, cfg.l2);
            for ((layer, v), g) in model.layers.iter_mut().zip(&mut velocity).zip(&grads) {
                v.w = &v.w * cfg.momentum - &g.w * cfg.learning_rate;
                v.b = &v.b * cfg.momentum - &g.b * cfg.learning_rate;
                layer.w += &v.w;
                layer.b += &v.b;
            }
        }
        let (loss, _) = model.loss_grad(&xs, &ys, cfg.l2);
        if !loss.is_finite() {
            return Err(Error::Numerical("training loss diverged".into()));
        }
        model.loss_history.push(loss);
    }
    Ok(model)
}

/// Accuracy and F1 in percent; AUC absent when only one class is present.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub auc: Option<f64>,
}

/// Area under the ROC curve via the rank-sum statistic with midranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = mid;
        }
        i = j + 1;
    }
    let rank_sum: f64 = (0..scores.len()).filter(|&k| labels[k] == 1).map(|k| ranks[k]).sum();
    let (p, q) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

pub fn metrics_from_scores(scores: &[f64], labels: &[u8]) -> ClassMetrics {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    let mut correct = 0.0;
    for (&s, &l) in scores.iter().zip(labels) {
        let pred = u8::from(s >= 0.5);
        if pred == l {
            correct += 1.0;
        }
        match (pred, l) {
            (1, 1) => tp += 1.0,
            (1, 0) => fp += 1.0,
            (0, 1) => fn_ += 1.0,
            _ => {}
        }
    }
    let f1 = if tp > 0.0 {
        2.0 * tp / (2.0 * tp + fp + fn_)
    } else {
        0.0
    };
    ClassMetrics {
        accuracy: 100.0 * correct / labels.len() as f64,
        f1: 100.0 * f1,
        auc: auc(scores, labels),
    }
}

pub fn evaluate(model: &Mlp, features: &[Vec<f64>], labels: &[u8]) -> Result<ClassMetrics> {
    check_features(features, labels)?;
    Ok(metrics_from_scores(&model.predict_proba(features)?, labels))
}

/// Stratified folds: each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[u8], folds: usize, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    let mut out = vec![Vec::new(); folds];
    let mut next = 0;
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < folds {
            return Err(Error::invalid(format!(
                "class {class} has {} samples, fewer than {folds} folds",
                idx.len()
            )));
        }
        idx.shuffle(rng);
        for i in idx {
            out[next % folds].push(i);
            next += 1;
        }
    }
    out.iter_mut().for_each(|f| f.sort_unstable());
    Ok(out)
}

fn select<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub best: usize,
    /// Mean validation accuracy (%) per grid entry.
    pub scores: Vec<f64>,
}

/// k-fold stratified grid search on mean validation accuracy. Ties prefer
/// the smaller network, then the lower grid index. Configs that fail to
/// train score 0.
pub fn cv_grid_search(
    features: &[Vec<f64>],
    labels: &[u8],
    grid: &[MlpConfig],
    folds: usize,
    rng: &mut impl Rng,
) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(Error::invalid("empty hyperparameter grid"));
    }
    check_features(features, labels)?;
    let fold_idx = stratified_folds(labels, folds, rng)?;
    let scores: Vec<f64> = grid
        .par_iter()
        .map(|cfg| {
            let mut total = 0.0;
            for f in 0..folds {
                let val = &fold_idx[f];
                let train: Vec<usize> = (0..labels.len()).filter(|i| !val.contains(i)).collect();
                let acc = train_mlp(&select(features, &train), &select(labels, &train), cfg)
                    .and_then(|m| evaluate(&m, &select(features, val), &select(labels, val)))
                    .map_or(0.0, |m| m.accuracy);
                total += acc;
            }
            total / folds as f64
        })
        .collect();
    let mut best = 0;
    for i in 1..grid.len() {
        let better = scores[i] > scores[best] || (scores[i] == scores[best] && grid[i].size() < grid[best].size());
        if better {
            best = i;
        }
    }
    Ok(GridSearchResult { best, scores })
}

/// Mean ± sample standard deviation over repeats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn from_values(v: &[f64]) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n: v.len() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSummary {
    pub accuracy: MeanStd,
    pub f1: MeanStd,
    /// Over repeats where the split held both classes.
    pub auc: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierReport {
    pub train: SplitSummary,
    pub test: SplitSummary,
    pub n_repeats: usize,
    /// With one repeat the standard deviations are 0 by convention.
    pub single_repeat: bool,
    /// Grid index chosen in each repeat.
    pub chosen: Vec<usize>,
}

fn summarize(m: &[ClassMetrics]) -> SplitSummary {
    let acc: Vec<f64> = m.iter().map(|x| x.accuracy).collect();
    let f1: Vec<f64> = m.iter().map(|x| x.f1).collect();
    let auc: Vec<f64> = m.iter().filter_map(|x| x.auc).collect();
    SplitSummary {
        accuracy: MeanStd::from_values(&acc).expect("at least one repeat"),
        f1: MeanStd::from_values(&f1).expect("at least one repeat"),
        auc: MeanStd::from_values(&auc),
    }
}

/// Per repeat: stratified train/test split, grid search on the training
/// part, retrain the winner on all training data, evaluate both parts.
pub fn repeated_split_experiment<R: RngCore>(
    features: &[Vec<f64>],
    labels: &[u8],
    n_repeats: usize,
    test_fraction: f64,
    grid: &[MlpConfig],
    folds: usize,
    rng: &mut R,
) -> Result<ClassifierReport> {
    if n_repeats == 0 {
        return Err(Error::invalid("need at least one repeat"));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    check_features(features, labels)?;
    let seeds: Vec<u64> = (0..n_repeats).map(|_| rng.next_u64()).collect();
    let label_usize: Vec<usize> = labels.iter().map(|&l| usize::from(l)).collect();
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let mut r = rng_from_seed(seed);
            let (train, test) = stratified_split(&label_usize, 1.0 - test_fraction, &mut r)?;
            let (xtr, ytr) = (select(features, &train), select(labels, &train));
            let (xte, yte) = (select(features, &test), select(labels, &test));
            let gs = cv_grid_search(&xtr, &ytr, grid, folds, &mut r)?;
            let model = train_mlp(&xtr, &ytr, &grid[gs.best])?;
            Ok((evaluate(&model, &xtr, &ytr)?, evaluate(&model, &xte, &yte)?, gs.best))
        })
        .collect::<Result<Vec<_>>>()?;
    let train: Vec<ClassMetrics> = runs.iter().map(|r| r.0).collect();
    let test: Vec<ClassMetrics> = runs.iter().map(|r| r.1).collect();
    Ok(ClassifierReport {
        train: summarize(&train),
        test: summarize(&test),
        n_repeats,
        single_repeat: n_repeats == 1,
        chosen: runs.iter().map(|r| r.2).collect(),
    })
}

fn cell(m: Option<&MeanStd>, digits: usize) -> String {
    match m {
        Some(m) => format!("{:.*} ± {:.*}", digits, m.mean, digits, m.std),
        None => "n/a".into(),
    }
}

/// Table laid out as metric rows × model columns, cells "mean ± std".
pub fn table1_csv(reports: &[(String, ClassifierReport)]) -> String {
    let mut out = String::from("metric,split");
    for (name, _) in reports {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    type Getter = fn(&SplitSummary) -> Option<&MeanStd>;
    let rows: [(&str, Getter, usize); 3] = [
        ("Accuracy (%)", |s| Some(&s.accuracy), 2),
        ("F1 Score (%)", |s| Some(&s.f1), 2),
        ("AUC", |s| s.auc.as_ref(), 3),
    ];
    for (metric, get, digits) in rows {
        for split in ["train", "test"] {
            let _ = write!(out, "{metric},{split}");
            for (_, r) in reports {
                let s = if split == "train" { &r.train } else { &r.test };
                let _ = write!(out, ",{}", cell(get(s), digits));
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn separable(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = rng_from_seed(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let l = (i % 2) as u8;
            x.push(vec![f64::from(l) + rng.random_range(-0.2..0.2)]);
            y.push(l);
        }
        (x, y)
    }

    fn quick(hidden: Vec<usize>) -> MlpConfig {
        MlpConfig {
            hidden,
            epochs: 200,
            batch_size: 8,
            ..MlpConfig::default()
        }
    }

    #[test]
    fn separable_data_is_learned() {
        let (x, y) = separable(20, 1);
        for h in [vec![], vec![8]] {
            let m = train_mlp(&x, &y, &quick(h)).unwrap();
            assert_eq!(evaluate(&m, &x, &y).unwrap().accuracy, 100.0);
        }
    }

    #[test]
    fn constant_features_give_majority_rate() {
        let x = vec![vec![3.0, 3.0]; 12];
        let y = vec![1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0];
        let m = train_mlp(&x, &y, &quick(vec![4])).unwrap();
        let acc = evaluate(&m, &x, &y).unwrap().accuracy;
        assert!((acc - 100.0 * 8.0 / 12.0).abs() < 1e-9, "{acc}");
    }

    #[test]
    fn training_is_deterministic_and_validated() {
        let (x, y) = separable(10, 2);
        let a = train_mlp(&x, &y, &quick(vec![4])).unwrap();
        let b = train_mlp(&x, &y, &quick(vec![4])).unwrap();
        assert_eq!(a.parameters(), b.parameters());
        assert!(train_mlp(&x, &[1; 10], &quick(vec![])).is_err());
        let mut bad = x.clone();
        bad[0][0] = f64::NAN;
        assert!(train_mlp(&bad, &y, &quick(vec![])).is_err());
    }

    #[test]
    fn full_batch_loss_never_increases() {
        let (x, y) = separable(16, 3);
        let cfg = MlpConfig {
            hidden: vec![6],
            activation: Activation::Tanh,
            momentum: 0.0,
            learning_rate: 0.05,
            batch_size: 16,
            epochs: 300,
            ..MlpConfig::default()
        };
        let m = train_mlp(&x, &y, &cfg).unwrap();
        for w in m.loss_history.windows(2) {
            assert!(w[1] <= w[0], "{} > {}", w[1], w[0]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = rng_from_seed(4);
        let x: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let y = vec![0, 1, 1, 0, 1];
        for act in [Activation::Tanh, Activation::Sigmoid, Activation::Rectifier] {
            let cfg = MlpConfig {
                hidden: vec![4, 3],
                activation: act,
                epochs: 1,
                ..MlpConfig::default()
            };
            let m = Mlp::new_random(&cfg, 3, &mut rng);
            let (_, g) = m.loss_and_gradient(&x, &y, 0.01).unwrap();
            let p = m.parameters();
            for k in 0..p.len() {
                let h = 1e-6;
                let mut mp = m.clone();
                let mut q = p.clone();
                q[k] += h;
                mp.set_parameters(&q).unwrap();
                let lp = mp.loss_and_gradient(&x, &y, 0.01).unwrap().0;
                q[k] -= 2.0 * h;
                mp.set_parameters(&q).unwrap();
                let lm = mp.loss_and_gradient(&x, &y, 0.01).unwrap().0;
                let fd = (lp - lm) / (2.0 * h);
                assert!(
                    (fd - g[k]).abs() <= 1e-4 * g[k].abs().max(1e-3),
                    "{act:?} {k}: {fd} vs {}",
                    g[k]
                );
            }
        }
    }

    #[test]
    fn metric_values() {
        let labels = [0, 0, 1, 1];
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &labels), Some(1.0));
        assert_eq!(auc(&[0.5; 4], &labels), Some(0.5));
        assert_eq!(auc(&[0.1, 0.2], &[1, 1]), None);
        let m = metrics_from_scores(&[0.0, 0.0, 1.0, 1.0], &labels);
        assert_eq!((m.accuracy, m.f1), (100.0, 100.0));
        let mut rng = rng_from_seed(5);
        let s: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let l: Vec<u8> = (0..10_000).map(|i| (i % 2) as u8).collect();
        assert!((auc(&s, &l).unwrap() - 0.5).abs() < 0.02);
    }

    proptest! {
        #[test]
        fn auc_is_invariant_to_monotone_transforms(scores in prop::collection::vec(-5.0f64..5.0, 6..30)) {
            let labels: Vec<u8> = (0..scores.len()).map(|i| (i % 2) as u8).collect();
            let t: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 3.0).collect();
            prop_assert_eq!(auc(&scores, &labels), auc(&t, &labels));
        }
    }

    #[test]
    fn folds_are_stratified() {
        let labels: Vec<u8> = (0..20).map(|i| u8::from(i < 8)).collect();
        let folds = stratified_folds(&labels, 3, &mut rng_from_seed(6)).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        for f in &folds {
            let pos = f.iter().filter(|&&i| labels[i] == 1).count() as f64;
            let expect = 8.0 / 20.0 * f.len() as f64;
            assert!((pos - expect).abs() <= 1.0);
        }
        assert!(stratified_folds(&[0, 0, 0, 1, 1], 3, &mut rng_from_seed(1)).is_err());
    }

    #[test]
    fn grid_search_prefers_smaller_networks_on_ties() {
        let (x, y) = separable(18, 7);
        let one = cv_grid_search(&x, &y, &[quick(vec![])], 3, &mut rng_from_seed(1)).unwrap();
        assert_eq!(one.best, 0);
        let g = cv_grid_search(
            &x,
            &y,
            &[quick(vec![8]), quick(vec![]), quick(vec![])],
            3,
            &mut rng_from_seed(1),
        )
        .unwrap();
        assert_eq!(g.scores, vec![100.0; 3]);
        assert_eq!(g.best, 1);
        assert!(cv_grid_search(&x, &y, &[], 3, &mut rng_from_seed(1)).is_err());
        let frozen = MlpConfig {
            learning_rate: 0.0,
            ..quick(vec![])
        };
        let g = cv_grid_search(&x, &y, &[frozen, quick(vec![4])], 3, &mut rng_from_seed(1)).unwrap();
        assert_eq!((g.best, g.scores[0]), (1, 0.0));
    }

    #[test]
    fn repeated_splits_on_perfect_data() {
        let x: Vec<Vec<f64>> = (0..24).map(|i| vec![if i % 2 == 0 { 0.0 } else { 5.0 }, 1.0]).collect();
        let y: Vec<u8> = (0..24).map(|i| (i % 2) as u8).collect();
        let grid = vec![quick(vec![])];
        let r = repeated_split_experiment(&x, &y, 3, 0.3, &grid, 3, &mut rng_from_seed(8)).unwrap();
        assert_eq!((r.test.accuracy.mean, r.test.accuracy.std), (100.0, 0.0));
        let one = repeated_split_experiment(&x, &y, 1, 0.3, &grid, 3, &mut rng_from_seed(8)).unwrap();
        assert!(one.single_repeat && one.test.accuracy.std == 0.0);
        let csv = table1_csv(&[("synthetic".into(), r)]);
        assert!(csv.contains("Accuracy (%),test,100.00 ± 0.00"));
        assert!(csv.contains("AUC,test,1.000 ± 0.000"));
    }

    #[test]
    fn model_text_round_trip() {
        let (x, y) = separable(10, 9);
        let m = train_mlp(&x, &y, &quick(vec![3])).unwrap();
        let back = Mlp::from_text(&m.to_text(), Path::new("m.txt")).unwrap();
        assert_eq!(back.parameters(), m.parameters());
        assert_eq!(back.predict_proba(&x).unwrap(), m.predict_proba(&x).unwrap());
        assert!(Mlp::from_text("nope", Path::new("m.txt")).is_err());
    }
}
