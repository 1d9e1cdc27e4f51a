//! From-scratch binary detectors over spectral feature vectors: L2-regularized
//! logistic regression on standardized features and a CART/Gini random forest
//! with bootstrap bagging. Both are deterministic per seed and serialize to
//! the self-describing "SSDET1" binary format.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::spectral::FeatureVector;

const STD_FLOOR: f64 = 1e-12;

/// Per-feature mean/std scaler, fitted on training data only.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &[&FeatureVector]) -> Result<Standardizer> {
        let dim = check_dims(features)?;
        let n = features.len() as f64;
        let mut mean = vec![0.0; dim];
        for f in features {
            for (m, v) in mean.iter_mut().zip(&f.values) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for f in features {
            for ((s, v), m) in var.iter_mut().zip(&f.values).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Standardizer { mean, std })
    }

    pub fn transform(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.mean.len() {
            return Err(Error::Shape(format!(
                "standardizer fitted on {} features, got {}",
                self.mean.len(),
                values.len()
            )));
        }
        Ok(values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }
}

fn check_dims(features: &[&FeatureVector]) -> Result<usize> {
    let first = features.first().ok_or_else(|| Error::Data("empty feature set".into()))?;
    let dim = first.values.len();
    for f in features {
        if f.values.len() != dim {
            return Err(Error::Shape(format!(
                "inconsistent feature dimensions: {dim} vs {}",
                f.values.len()
            )));
        }
    }
    Ok(dim)
}

fn check_two_classes(features: &[&FeatureVector]) -> Result<()> {
    let has0 = features.iter().any(|f| f.label == 0);
    let has1 = features.iter().any(|f| f.label == 1);
    if has0 && has1 {
        Ok(())
    } else {
        Err(Error::Data("training set must contain both classes".into()))
    }
}

// ---- logistic regression ----

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRegHyper {
    pub lambda: f64,
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for LogRegHyper {
    fn default() -> Self {
        LogRegHyper { lambda: 1e-4, iterations: 500, learning_rate: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub hyper: LogRegHyper,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Regularized mean cross-entropy of a logistic model on standardized rows.
pub fn logreg_loss(weights: &[f64], bias: f64, rows: &[Vec<f64>], labels: &[u8], lambda: f64) -> f64 {
    let n = rows.len() as f64;
    let mut loss = 0.0;
    for (x, &y) in rows.iter().zip(labels) {
        let z = bias + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        let p = sigmoid(z).clamp(1e-15, 1.0 - 1e-15);
        loss -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    loss / n + 0.5 * lambda * weights.iter().map(|w| w * w).sum::<f64>()
}

/// Gradient of [`logreg_loss`] with respect to (weights, bias).
pub fn logreg_gradient(
    weights: &[f64],
    bias: f64,
    rows: &[Vec<f64>],
    labels: &[u8],
    lambda: f64,
) -> (Vec<f64>, f64) {
    let n = rows.len() as f64;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    for (x, &y) in rows.iter().zip(labels) {
        let z = bias + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        let err = sigmoid(z) - y as f64;
        for (g, v) in gw.iter_mut().zip(x) {
            *g += err * v;
        }
        gb += err;
    }
    for (g, w) in gw.iter_mut().zip(weights) {
        *g = *g / n + lambda * w;
    }
    (gw, gb / n)
}

/// Full-batch gradient descent on L2-regularized cross-entropy over
/// standardized features. Deterministic (zero init).
pub fn logreg_train(
    features: &[&FeatureVector],
    hyper: LogRegHyper,
) -> Result<(Standardizer, LogRegModel)> {
    let dim = check_dims(features)?;
    check_two_classes(features)?;
    let standardizer = Standardizer::fit(features)?;
    let rows: Vec<Vec<f64>> =
        features.iter().map(|f| standardizer.transform(&f.values)).collect::<Result<_>>()?;
    let labels: Vec<u8> = features.iter().map(|f| f.label).collect();

    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    for _ in 0..hyper.iterations {
        let (gw, gb) = logreg_gradient(&weights, bias, &rows, &labels, hyper.lambda);
        for (w, g) in weights.iter_mut().zip(&gw) {
            *w -= hyper.learning_rate * g;
        }
        bias -= hyper.learning_rate * gb;
    }
    if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("logistic regression parameters".into()));
    }
    Ok((standardizer, LogRegModel { weights, bias, hyper }))
}

/// Probability of the adversarial class for one feature vector.
pub fn logreg_predict(std: &Standardizer, model: &LogRegModel, values: &[f64]) -> Result<f64> {
    let x = std.transform(values)?;
    let z = model.bias + model.weights.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>();
    Ok(sigmoid(z))
}

// ---- random forest ----

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestHyper {
    pub trees: usize,
    /// Features tried per split; `None` means ⌈sqrt(d)⌉.
    pub feature_subset: Option<usize>,
    pub min_samples_split: usize,
}

impl Default for ForestHyper {
    fn default() -> Self {
        ForestHyper { trees: 100, feature_subset: None, min_samples_split: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: Box<TreeNode>, right: Box<TreeNode> },
    Leaf { p0: f64, p1: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<TreeNode>,
    pub dimension: usize,
    pub hyper: ForestHyper,
    pub seed: u64,
}

fn gini(c0: usize, c1: usize) -> f64 {
    let n = (c0 + c1) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p0 = c0 as f64 / n;
    let p1 = c1 as f64 / n;
    1.0 - p0 * p0 - p1 * p1
}

struct TreeBuilder<'a> {
    rows: &'a [&'a FeatureVector],
    dim: usize,
    subset: usize,
    min_split: usize,
}

impl<'a> TreeBuilder<'a> {
    fn leaf(&self, indices: &[usize]) -> TreeNode {
        let c1 = indices.iter().filter(|&&i| self.rows[i].label == 1).count();
        let n = indices.len() as f64;
        TreeNode::Leaf { p0: (indices.len() - c1) as f64 / n, p1: c1 as f64 / n }
    }

    fn grow(&self, indices: &mut Vec<usize>, rng: &mut ChaCha8Rng) -> TreeNode {
        let c1 = indices.iter().filter(|&&i| self.rows[i].label == 1).count();
        if indices.len() < self.min_split || c1 == 0 || c1 == indices.len() {
            return self.leaf(indices);
        }
        // random feature subset, scanned in ascending index order so that
        // gini ties break toward the lowest feature index
        let mut candidates: Vec<usize> = sample_without_replacement(self.dim, self.subset, rng);
        candidates.sort_unstable();

        let parent_impurity = gini(indices.len() - c1, c1);
        let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
        let mut sorted: Vec<(f64, u8)> = Vec::with_capacity(indices.len());
        for &feat in &candidates {
            sorted.clear();
            sorted.extend(indices.iter().map(|&i| (self.rows[i].values[feat], self.rows[i].label)));
            sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let total1 = c1;
            let total = indices.len();
            let mut left1 = 0usize;
            for i in 0..total - 1 {
                if sorted[i].1 == 1 {
                    left1 += 1;
                }
                if sorted[i].0 == sorted[i + 1].0 {
                    continue;
                }
                let left_n = i + 1;
                let right_n = total - left_n;
                let right1 = total1 - left1;
                let weighted = (left_n as f64 * gini(left_n - left1, left1)
                    + right_n as f64 * gini(right_n - right1, right1))
                    / total as f64;
                let gain = parent_impurity - weighted;
                let threshold = 0.5 * (sorted[i].0 + sorted[i + 1].0);
                // strict improvement keeps the lowest (feature, threshold)
                // among exact ties
                if gain > 1e-12 && best.map_or(true, |(bg, _, _)| gain > bg) {
                    best = Some((gain, feat, threshold));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return self.leaf(indices);
        };
        let (mut left, mut right): (Vec<usize>, Vec<usize>) =
            indices.iter().partition(|&&i| self.rows[i].values[feature] <= threshold);
        if left.is_empty() || right.is_empty() {
            return self.leaf(indices);
        }
        TreeNode::Split {
            feature,
            threshold,
            left: Box::new(self.grow(&mut left, rng)),
            right: Box::new(self.grow(&mut right, rng)),
        }
    }
}

fn sample_without_replacement(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let k = k.min(n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Grow a bagged forest: each tree on a bootstrap resample, greedy Gini
/// splits over a random feature subset. Deterministic per seed.
pub fn forest_train(
    features: &[&FeatureVector],
    hyper: ForestHyper,
    seed: u64,
) -> Result<ForestModel> {
    let dim = check_dims(features)?;
    check_two_classes(features)?;
    if hyper.trees == 0 {
        return Err(Error::Config("forest needs at least one tree".into()));
    }
    let subset = hyper.feature_subset.unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize).max(1);
    let builder = TreeBuilder { rows: features, dim, subset, min_split: hyper.min_samples_split.max(2) };
    let n = features.len();
    let mut trees = Vec::with_capacity(hyper.trees);
    for t in 0..hyper.trees {
        // per-tree stream so tree-level parallelism would stay deterministic
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x100000001b3).wrapping_add(t as u64));
        let mut indices: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        trees.push(builder.grow(&mut indices, &mut rng));
    }
    Ok(ForestModel { trees, dimension: dim, hyper, seed })
}

fn tree_predict(node: &TreeNode, values: &[f64]) -> f64 {
    match node {
        TreeNode::Leaf { p1, .. } => *p1,
        TreeNode::Split { feature, threshold, left, right } => {
            if values[*feature] <= *threshold {
                tree_predict(left, values)
            } else {
                tree_predict(right, values)
            }
        }
    }
}

/// Mean of per-tree leaf probabilities for the adversarial class.
pub fn forest_predict(model: &ForestModel, values: &[f64]) -> Result<f64> {
    if values.len() != model.dimension {
        return Err(Error::Shape(format!(
            "forest trained on {} features, got {}",
            model.dimension,
            values.len()
        )));
    }
    let sum: f64 = model.trees.iter().map(|t| tree_predict(t, values)).sum();
    Ok(sum / model.trees.len() as f64)
}

// ---- unified detector handle + serialization ----

/// Which base classifier a detector uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    LogReg,
    Forest,
}

impl DetectorKind {
    pub fn name(&self) -> &'static str {
        match self {
            DetectorKind::LogReg => "logreg",
            DetectorKind::Forest => "rf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "logreg" | "lr" => Ok(DetectorKind::LogReg),
            "rf" | "forest" => Ok(DetectorKind::Forest),
            other => Err(Error::Config(format!("unknown detector '{other}' (logreg, rf)"))),
        }
    }
}

/// A trained detector ready for prediction and serialization.
#[derive(Debug, Clone, PartialEq)]
pub enum Detector {
    LogReg { standardizer: Standardizer, model: LogRegModel },
    Forest(ForestModel),
}

impl Detector {
    pub fn train(features: &[&FeatureVector], kind: DetectorKind, seed: u64) -> Result<Detector> {
        match kind {
            DetectorKind::LogReg => {
                let (standardizer, model) = logreg_train(features, LogRegHyper::default())?;
                Ok(Detector::LogReg { standardizer, model })
            }
            DetectorKind::Forest => {
                Ok(Detector::Forest(forest_train(features, ForestHyper::default(), seed)?))
            }
        }
    }

    pub fn kind(&self) -> DetectorKind {
        match self {
            Detector::LogReg { .. } => DetectorKind::LogReg,
            Detector::Forest(_) => DetectorKind::Forest,
        }
    }

    /// Probability that the sample is adversarial.
    pub fn predict(&self, values: &[f64]) -> Result<f64> {
        match self {
            Detector::LogReg { standardizer, model } => logreg_predict(standardizer, model, values),
            Detector::Forest(model) => forest_predict(model, values),
        }
    }

    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"SSDET1")?;
        match self {
            Detector::LogReg { standardizer, model } => {
                w.write_all(&[0u8])?;
                w.write_all(&model.hyper.lambda.to_le_bytes())?;
                w.write_all(&(model.hyper.iterations as u32).to_le_bytes())?;
                w.write_all(&model.hyper.learning_rate.to_le_bytes())?;
                w.write_all(&(model.weights.len() as u32).to_le_bytes())?;
                for v in standardizer.mean.iter().chain(&standardizer.std).chain(&model.weights) {
                    w.write_all(&v.to_le_bytes())?;
                }
                w.write_all(&model.bias.to_le_bytes())?;
            }
            Detector::Forest(model) => {
                w.write_all(&[1u8])?;
                w.write_all(&(model.hyper.trees as u32).to_le_bytes())?;
                let subset = model.hyper.feature_subset.map_or(0u32, |s| s as u32);
                w.write_all(&subset.to_le_bytes())?;
                w.write_all(&(model.hyper.min_samples_split as u32).to_le_bytes())?;
                w.write_all(&model.seed.to_le_bytes())?;
                w.write_all(&(model.dimension as u32).to_le_bytes())?;
                for tree in &model.trees {
                    write_node(w, tree)?;
                }
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(r: &mut R) -> Result<Detector> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != b"SSDET1" {
            return Err(Error::Format("bad magic, not a SSDET1 detector file".into()));
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        match tag[0] {
            0 => {
                let lambda = read_f64(r)?;
                let iterations = read_u32(r)? as usize;
                let learning_rate = read_f64(r)?;
                let dim = read_u32(r)? as usize;
                let mut vals = Vec::with_capacity(3 * dim + 1);
                for _ in 0..3 * dim + 1 {
                    vals.push(read_f64(r)?);
                }
                let mean = vals[..dim].to_vec();
                let std = vals[dim..2 * dim].to_vec();
                let weights = vals[2 * dim..3 * dim].to_vec();
                let bias = vals[3 * dim];
                Ok(Detector::LogReg {
                    standardizer: Standardizer { mean, std },
                    model: LogRegModel {
                        weights,
                        bias,
                        hyper: LogRegHyper { lambda, iterations, learning_rate },
                    },
                })
            }
            1 => {
                let trees_n = read_u32(r)? as usize;
                let subset = read_u32(r)?;
                let min_samples_split = read_u32(r)? as usize;
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf)?;
                let seed = u64::from_le_bytes(buf);
                let dimension = read_u32(r)? as usize;
                let trees = (0..trees_n).map(|_| read_node(r)).collect::<Result<_>>()?;
                Ok(Detector::Forest(ForestModel {
                    trees,
                    dimension,
                    hyper: ForestHyper {
                        trees: trees_n,
                        feature_subset: if subset == 0 { None } else { Some(subset as usize) },
                        min_samples_split,
                    },
                    seed,
                }))
            }
            other => Err(Error::Format(format!("unknown detector kind tag {other}"))),
        }
    }

    pub fn save_file(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.save(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load_file(path: &Path) -> Result<Detector> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Detector::load(&mut f)
    }
}

fn write_node<W: Write>(w: &mut W, node: &TreeNode) -> Result<()> {
    match node {
        TreeNode::Split { feature, threshold, left, right } => {
            w.write_all(&[0u8])?;
            w.write_all(&(*feature as u32).to_le_bytes())?;
            w.write_all(&threshold.to_le_bytes())?;
            write_node(w, left)?;
            write_node(w, right)
        }
        TreeNode::Leaf { p0, p1 } => {
            w.write_all(&[1u8])?;
            w.write_all(&p0.to_le_bytes())?;
            w.write_all(&p1.to_le_bytes())?;
            Ok(())
        }
    }
}

fn read_node<R: Read>(r: &mut R) -> Result<TreeNode> {
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    match tag[0] {
        0 => {
            let feature = read_u32(r)? as usize;
            let threshold = read_f64(r)?;
            let left = Box::new(read_node(r)?);
            let right = Box::new(read_node(r)?);
            Ok(TreeNode::Split { feature, threshold, left, right })
        }
        1 => Ok(TreeNode::Leaf { p0: read_f64(r)?, p1: read_f64(r)? }),
        other => Err(Error::Format(format!("bad tree node tag {other}"))),
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn fv(values: Vec<f64>, label: u8) -> FeatureVector {
        let mut f = FeatureVector::unlabeled(values);
        f.label = label;
        f
    }

    fn refs(fs: &[FeatureVector]) -> Vec<&FeatureVector> {
        fs.iter().collect()
    }

    #[test]
    fn standardizer_centers_and_scales() {
        let fs: Vec<FeatureVector> =
            (0..50).map(|i| fv(vec![i as f64, 3.0 * i as f64 + 7.0], (i % 2) as u8)).collect();
        let r = refs(&fs);
        let s = Standardizer::fit(&r).unwrap();
        let rows: Vec<Vec<f64>> = r.iter().map(|f| s.transform(&f.values).unwrap()).collect();
        for d in 0..2 {
            let mean: f64 = rows.iter().map(|x| x[d]).sum::<f64>() / rows.len() as f64;
            let var: f64 = rows.iter().map(|x| x[d] * x[d]).sum::<f64>() / rows.len() as f64;
            assert!(mean.abs() < 1e-9);
            assert!((var.sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn logreg_separates_1d_points() {
        let fs = vec![fv(vec![-1.0], 0), fv(vec![1.0], 1)];
        let (s, m) = logreg_train(&refs(&fs), LogRegHyper::default()).unwrap();
        assert!(logreg_predict(&s, &m, &[-2.0]).unwrap() < 0.5);
        assert!(logreg_predict(&s, &m, &[2.0]).unwrap() > 0.5);
    }

    #[test]
    fn logreg_single_class_rejected() {
        let fs = vec![fv(vec![0.0], 1), fv(vec![1.0], 1)];
        assert!(logreg_train(&refs(&fs), LogRegHyper::default()).is_err());
    }

    #[test]
    fn logreg_duplicated_set_gives_identical_model() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let fs: Vec<FeatureVector> = (0..20)
            .map(|i| fv(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)], (i % 2) as u8))
            .collect();
        let doubled: Vec<FeatureVector> = fs.iter().chain(fs.iter()).cloned().collect();
        let hyper = LogRegHyper { lambda: 0.0, ..Default::default() };
        let (_, a) = logreg_train(&refs(&fs), hyper).unwrap();
        let (_, b) = logreg_train(&refs(&doubled), hyper).unwrap();
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!((a.bias - b.bias).abs() < 1e-9);
    }

    #[test]
    fn logreg_gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let rows: Vec<Vec<f64>> =
            (0..15).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let labels: Vec<u8> = (0..15).map(|i| (i % 2) as u8).collect();
        let weights: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let bias = 0.3;
        let lambda = 1e-3;
        let (gw, gb) = logreg_gradient(&weights, bias, &rows, &labels, lambda);
        let h = 1e-6;
        for d in 0..4 {
            let mut wp = weights.clone();
            wp[d] += h;
            let mut wm = weights.clone();
            wm[d] -= h;
            let fd = (logreg_loss(&wp, bias, &rows, &labels, lambda)
                - logreg_loss(&wm, bias, &rows, &labels, lambda))
                / (2.0 * h);
            assert!((gw[d] - fd).abs() / fd.abs().max(1e-6) < 1e-6);
        }
        let fdb = (logreg_loss(&weights, bias + h, &rows, &labels, lambda)
            - logreg_loss(&weights, bias - h, &rows, &labels, lambda))
            / (2.0 * h);
        assert!((gb - fdb).abs() / fdb.abs().max(1e-6) < 1e-6);
    }

    #[test]
    fn logreg_zero_model_predicts_half_and_flip_symmetry() {
        let s = Standardizer { mean: vec![0.0], std: vec![1.0] };
        let hyper = LogRegHyper::default();
        let zero = LogRegModel { weights: vec![0.0], bias: 0.0, hyper };
        assert_eq!(logreg_predict(&s, &zero, &[3.0]).unwrap(), 0.5);

        let m = LogRegModel { weights: vec![0.7], bias: -0.2, hyper };
        let neg = LogRegModel { weights: vec![-0.7], bias: 0.2, hyper };
        let p = logreg_predict(&s, &m, &[1.3]).unwrap();
        let q = logreg_predict(&s, &neg, &[1.3]).unwrap();
        assert!((p + q - 1.0).abs() < 1e-12);
        // monotone in a positively-weighted feature
        assert!(logreg_predict(&s, &m, &[2.0]).unwrap() > p);
    }

    #[test]
    fn forest_pure_split_reaches_full_training_accuracy() {
        let fs: Vec<FeatureVector> = (0..20)
            .map(|i| {
                let x = if i < 10 { -1.0 - i as f64 } else { 1.0 + i as f64 };
                fv(vec![x], u8::from(i >= 10))
            })
            .collect();
        let hyper = ForestHyper { trees: 1, feature_subset: Some(1), min_samples_split: 2 };
        let model = forest_train(&refs(&fs), hyper, 0).unwrap();
        for f in &fs {
            let p = forest_predict(&model, &f.values).unwrap();
            assert_eq!(u8::from(p >= 0.5), f.label);
        }
    }

    #[test]
    fn forest_same_seed_serializes_identically() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let fs: Vec<FeatureVector> = (0..40)
            .map(|i| {
                fv(
                    (0..5).map(|_| rng.gen_range(0.0..1.0)).collect(),
                    (i % 2) as u8,
                )
            })
            .collect();
        let a = forest_train(&refs(&fs), ForestHyper { trees: 5, ..Default::default() }, 3).unwrap();
        let b = forest_train(&refs(&fs), ForestHyper { trees: 5, ..Default::default() }, 3).unwrap();
        let mut ba = Vec::new();
        Detector::Forest(a).save(&mut ba).unwrap();
        let mut bb = Vec::new();
        Detector::Forest(b).save(&mut bb).unwrap();
        assert_eq!(ba, bb);
    }

    #[test]
    fn forest_beats_logreg_on_xor() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let fs: Vec<FeatureVector> = (0..200)
            .map(|_| {
                let a = rng.gen_range(-1.0..1.0f64);
                let b = rng.gen_range(-1.0..1.0f64);
                fv(vec![a, b], u8::from((a > 0.0) != (b > 0.0)))
            })
            .collect();
        let r = refs(&fs);
        let forest =
            forest_train(&r, ForestHyper { trees: 20, feature_subset: Some(2), ..Default::default() }, 1)
                .unwrap();
        let (s, lr) = logreg_train(&r, LogRegHyper::default()).unwrap();
        let acc = |pred: &dyn Fn(&[f64]) -> f64| {
            fs.iter()
                .filter(|f| u8::from(pred(&f.values) >= 0.5) == f.label)
                .count() as f64
                / fs.len() as f64
        };
        let forest_acc = acc(&|v| forest_predict(&forest, v).unwrap());
        let lr_acc = acc(&|v| logreg_predict(&s, &lr, v).unwrap());
        // A linear model cannot separate XOR; finite-sample asymmetry keeps
        // it somewhat above chance but far below the forest.
        assert!(forest_acc >= 0.95, "forest accuracy {forest_acc}");
        assert!(lr_acc <= 0.75, "logreg accuracy {lr_acc}");
        assert!(forest_acc - lr_acc >= 0.2, "gap {forest_acc} vs {lr_acc}");
    }

    #[test]
    fn forest_prediction_invariant_to_tree_order() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let fs: Vec<FeatureVector> = (0..30)
            .map(|i| fv((0..3).map(|_| rng.gen_range(0.0..1.0)).collect(), (i % 2) as u8))
            .collect();
        let mut model =
            forest_train(&refs(&fs), ForestHyper { trees: 7, ..Default::default() }, 2).unwrap();
        let probe = vec![0.4, 0.6, 0.1];
        let before = forest_predict(&model, &probe).unwrap();
        model.trees.reverse();
        let after = forest_predict(&model, &probe).unwrap();
        assert!((before - after).abs() < 1e-15);
    }

    #[test]
    fn forest_trivial_leaf_probabilities() {
        let model = ForestModel {
            trees: vec![TreeNode::Leaf { p0: 0.5, p1: 0.5 }],
            dimension: 1,
            hyper: ForestHyper::default(),
            seed: 0,
        };
        assert_eq!(forest_predict(&model, &[0.0]).unwrap(), 0.5);
        let unanimous = ForestModel {
            trees: vec![TreeNode::Leaf { p0: 0.0, p1: 1.0 }; 3],
            dimension: 1,
            hyper: ForestHyper::default(),
            seed: 0,
        };
        assert_eq!(forest_predict(&unanimous, &[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn detector_round_trips_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(14);
        let fs: Vec<FeatureVector> = (0..30)
            .map(|i| fv((0..4).map(|_| rng.gen_range(0.0..1.0)).collect(), (i % 2) as u8))
            .collect();
        let r = refs(&fs);
        for kind in [DetectorKind::LogReg, DetectorKind::Forest] {
            let det = Detector::train(&r, kind, 5).unwrap();
            let mut buf = Vec::new();
            det.save(&mut buf).unwrap();
            let loaded = Detector::load(&mut buf.as_slice()).unwrap();
            assert_eq!(det, loaded);
            let mut buf2 = Vec::new();
            loaded.save(&mut buf2).unwrap();
            assert_eq!(buf, buf2);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let s = Standardizer { mean: vec![0.0, 0.0], std: vec![1.0, 1.0] };
        let m = LogRegModel { weights: vec![0.1, 0.2], bias: 0.0, hyper: LogRegHyper::default() };
        assert!(logreg_predict(&s, &m, &[1.0]).is_err());
    }
}
