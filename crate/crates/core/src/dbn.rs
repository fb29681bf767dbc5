//! Deep belief network: greedily stacked RBMs with a logistic label readout.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::rbm::{shuffle, CdConfig, HardwareConfig, Mode, RbmModel};
use crate::rng::{stream, STREAM_DEVICE, STREAM_INIT, STREAM_SHUFFLE};

pub const EVAL_HEADER: &str = "topology,mode,n_train,n_test,err,rmse,seed";

/// Training of the top label layer: `dW = eta * (target - prediction) f^T`,
/// averaged over mini-batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        ReadoutConfig { learning_rate: 0.1, epochs: 20, batch_size: 10 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DbnConfig {
    /// Used for every hidden layer; `cd.seed` seeds the whole run.
    pub cd: CdConfig,
    pub readout: ReadoutConfig,
    /// Propagate sampled bits instead of probabilities between layers.
    pub sampled_propagation: bool,
    /// `Some` trains every layer, readout included, on hardware cells.
    pub hardware: Option<HardwareConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbnModel {
    topology: Vec<usize>,
    layers: Vec<RbmModel>,
    /// Visible side is the top feature vector, hidden side the class units.
    /// Its visible bias is unused.
    readout: RbmModel,
}

/// Per-epoch training history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Reconstruction error per epoch, one vector per hidden layer.
    pub layers: Vec<Vec<f64>>,
    /// Training-set error of the readout after each epoch.
    pub readout: Vec<f64>,
}

impl TrainLog {
    /// `stage,epoch,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,epoch,value\n");
        for (l, hist) in self.layers.iter().enumerate() {
            for (e, v) in hist.iter().enumerate() {
                let _ = writeln!(out, "layer{},{},{:.6}", l + 1, e + 1, v);
            }
        }
        for (e, v) in self.readout.iter().enumerate() {
            let _ = writeln!(out, "readout,{},{:.6}", e + 1, v);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalReport {
    pub n: usize,
    pub n_false: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn err(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.n_false as f64 / self.n as f64
        }
    }
}

/// Parse `784x800x10`.
pub fn parse_topology(s: &str) -> Result<Vec<usize>> {
    let widths: Vec<usize> = s
        .split(['x', 'X'])
        .map(|w| w.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidParameter(format!("bad topology '{s}'")))?;
    validate_topology(&widths)?;
    Ok(widths)
}

pub fn format_topology(t: &[usize]) -> String {
    t.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("x")
}

fn validate_topology(t: &[usize]) -> Result<()> {
    if t.len() < 2 || t.contains(&0) {
        return Err(Error::InvalidParameter(format!("topology needs at least two positive widths, got {t:?}")));
    }
    Ok(())
}

/// Lowest index among the maxima.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl DbnModel {
    /// Untrained model as `greedy_train` would initialize it.
    pub fn init(topology: &[usize], cfg: &DbnConfig) -> Result<Self> {
        validate_topology(topology)?;
        let n = topology.len();
        let layers = (0..n - 2)
            .map(|l| match &cfg.hardware {
                Some(hw) => RbmModel::hardware(topology[l], topology[l + 1], hw.clone()),
                None => RbmModel::ideal(topology[l], topology[l + 1], &mut stream(cfg.cd.seed, STREAM_INIT, l as u64)),
            })
            .collect();
        let readout = match &cfg.hardware {
            Some(hw) => RbmModel::hardware(topology[n - 2], topology[n - 1], hw.clone()),
            None => RbmModel::zeros(topology[n - 2], topology[n - 1]),
        };
        Ok(DbnModel { topology: topology.to_vec(), layers, readout })
    }

    pub fn from_parts(layers: Vec<RbmModel>, readout: RbmModel) -> Result<Self> {
        let mut topology: Vec<usize> = layers.iter().map(RbmModel::n_visible).collect();
        topology.push(readout.n_visible());
        topology.push(readout.n_hidden());
        for (l, layer) in layers.iter().enumerate() {
            check_dim(topology[l + 1], layer.n_hidden())?;
        }
        Ok(DbnModel { topology, layers, readout })
    }

    pub fn topology(&self) -> &[usize] {
        &self.topology
    }

    pub fn layers(&self) -> &[RbmModel] {
        &self.layers
    }

    pub fn readout(&self) -> &RbmModel {
        &self.readout
    }

    pub fn mode(&self) -> Mode {
        self.readout.mode()
    }

    pub fn n_classes(&self) -> usize {
        self.readout.n_hidden()
    }

    /// Mean-field top-layer features, one row per input row.
    pub fn features(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim(self.topology[0], data.ncols())?;
        let mut x = data.to_owned();
        for layer in &self.layers {
            x = layer.hidden_probabilities_batch(x.view())?;
        }
        Ok(x)
    }

    /// Label pre-activations for a batch of feature rows.
    fn label_scores(&self, features: ArrayView2<f64>) -> Array2<f64> {
        features.dot(self.readout.weights()) + self.readout.hidden_bias()
    }

    /// Class scores for a batch; argmax of each row is the prediction.
    pub fn scores(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.label_scores(self.features(data)?.view()))
    }

    /// Scores averaged over `n_passes` passes in which every hidden unit is
    /// sampled rather than replaced by its probability.
    fn sampled_scores<R: Rng + ?Sized>(&self, input: &[f64], n_passes: usize, rng: &mut R) -> Result<Vec<f64>> {
        let mut total = vec![0.0; self.n_classes()];
        for _ in 0..n_passes {
            let mut x = input.to_vec();
            for layer in &self.layers {
                x = layer
                    .hidden_probabilities(&x)?
                    .into_iter()
                    .map(|p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
                    .collect();
            }
            for (t, s) in total.iter_mut().zip(self.readout.hidden_preactivation(&x)?) {
                *t += s / n_passes as f64;
            }
        }
        Ok(total)
    }

    /// Predicted class of one input.
    ///
    /// Probabilities propagate upward as mean-field values. In hardware mode
    /// with `n_passes > 1` the p-bits are sampled instead and the label scores
    /// averaged over passes, drawing from the device stream of `seed`.
    pub fn infer(&self, input: &[f64], n_passes: usize, seed: u64) -> Result<usize> {
        self.infer_indexed(input, n_passes, seed, 0)
    }

    fn infer_indexed(&self, input: &[f64], n_passes: usize, seed: u64, index: u64) -> Result<usize> {
        if n_passes == 0 {
            return Err(Error::InvalidParameter("n_passes must be >= 1".into()));
        }
        check_dim(self.topology[0], input.len())?;
        if self.mode() == Mode::Hardware && n_passes > 1 {
            let mut rng = stream(seed, STREAM_DEVICE, index);
            return Ok(argmax(&self.sampled_scores(input, n_passes, &mut rng)?));
        }
        let row = ndarray::ArrayView2::from_shape((1, input.len()), input).expect("row shape");
        let s = self.scores(row)?;
        Ok(argmax(s.row(0).as_slice().expect("contiguous")))
    }

    /// Classify every row of `data`. Sample `i` uses device stream `i`, so
    /// the result does not depend on evaluation order.
    pub fn evaluate(&self, data: ArrayView2<f64>, labels: &[u8], n_passes: usize, seed: u64) -> Result<EvalReport> {
        check_dim(data.nrows(), labels.len())?;
        if n_passes == 0 {
            return Err(Error::InvalidParameter("n_passes must be >= 1".into()));
        }
        let k = self.n_classes();
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= k) {
            return Err(Error::InvalidParameter(format!("label {l} outside {k} classes")));
        }
        let predictions: Vec<usize> = if self.mode() == Mode::Hardware && n_passes > 1 {
            data.outer_iter()
                .enumerate()
                .map(|(i, row)| self.infer_indexed(&row.to_vec(), n_passes, seed, i as u64))
                .collect::<Result<_>>()?
        } else {
            let s = self.scores(data)?;
            s.outer_iter().map(|r| argmax(&r.to_vec())).collect()
        };
        let mut confusion = vec![vec![0; k]; k];
        let mut n_false = 0;
        for (&t, &p) in labels.iter().zip(&predictions) {
            confusion[t as usize][p] += 1;
            n_false += (t as usize != p) as usize;
        }
        Ok(EvalReport { n: labels.len(), n_false, confusion })
    }

    /// RMS reconstruction error of the first hidden layer; `None` when the
    /// network has no hidden layer.
    pub fn rmse(&self, data: ArrayView2<f64>) -> Result<Option<f64>> {
        match self.layers.first() {
            Some(l) => Ok(Some(l.reconstruction_rmse(data)?)),
            None => Ok(None),
        }
    }
}

fn one_hot(labels: &[u8], k: usize) -> Array2<f64> {
    let mut t = Array2::zeros((labels.len(), k));
    for (i, &l) in labels.iter().enumerate() {
        t[[i, l as usize]] = 1.0;
    }
    t
}

/// Train the label layer on fixed features. Returns the training error after
/// each epoch.
pub fn train_readout(
    readout: &mut RbmModel,
    features: ArrayView2<f64>,
    labels: &[u8],
    cfg: &ReadoutConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    check_dim(readout.n_visible(), features.ncols())?;
    check_dim(features.nrows(), labels.len())?;
    if cfg.batch_size == 0 || !(cfg.learning_rate >= 0.0) {
        return Err(Error::InvalidParameter("readout batch_size must be >= 1 and learning_rate >= 0".into()));
    }
    let k = readout.n_hidden();
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= k) {
        return Err(Error::InvalidParameter(format!("label {l} outside {k} classes")));
    }
    if labels.is_empty() {
        return Ok(vec![0.0; cfg.epochs]);
    }
    let targets = one_hot(labels, k);
    let mut rng = stream(seed, STREAM_SHUFFLE, u64::MAX);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let zero_bias = Array1::zeros(readout.n_visible());
    for _ in 0..cfg.epochs {
        shuffle(&mut order, &mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let f = features.select(Axis(0), chunk);
            let t = targets.select(Axis(0), chunk);
            let x = f.dot(readout.weights()) + readout.hidden_bias();
            let pred = x.mapv(|v| readout.activate_hidden(v));
            let e = t - pred;
            let scale = cfg.learning_rate / chunk.len() as f64;
            let dw = f.t().dot(&e) * scale;
            let db = e.sum_axis(Axis(0)) * scale;
            readout.apply_delta(dw, zero_bias.clone(), db)?;
        }
        let scores = features.dot(readout.weights()) + readout.hidden_bias();
        let wrong = scores.outer_iter().zip(labels).filter(|(r, &l)| argmax(&r.to_vec()) != l as usize).count();
        history.push(wrong as f64 / labels.len() as f64);
    }
    Ok(history)
}

/// Greedy layer-wise training: each hidden layer is trained by CD on the
/// representation produced by the frozen layers below it, then the readout
/// is trained on the top representation.
pub fn greedy_train(
    topology: &[usize],
    data: ArrayView2<f64>,
    labels: &[u8],
    cfg: &DbnConfig,
) -> Result<(DbnModel, TrainLog)> {
    validate_topology(topology)?;
    check_dim(topology[0], data.ncols())?;
    check_dim(data.nrows(), labels.len())?;
    let mut model = DbnModel::init(topology, cfg)?;
    let mut log = TrainLog::default();
    let seed = cfg.cd.seed;
    let mut x = data.to_owned();
    for (l, layer) in model.layers.iter_mut().enumerate() {
        let mut rng = stream(seed, STREAM_DEVICE, l as u64);
        let hist =
            if cfg.cd.epochs > 0 && x.nrows() > 0 { layer.train(x.view(), &cfg.cd, &mut rng)? } else { Vec::new() };
        log.layers.push(hist);
        let p = layer.hidden_probabilities_batch(x.view())?;
        x = if cfg.sampled_propagation { p.mapv(|q| if rng.random::<f64>() < q { 1.0 } else { 0.0 }) } else { p };
    }
    log.readout = train_readout(&mut model.readout, x.view(), labels, &cfg.readout, seed)?;
    Ok((model, log))
}

/// One evaluation CSV row (without header). Unknown values are left empty.
pub fn eval_csv_row(
    topology: &[usize],
    mode: Mode,
    n_train: Option<usize>,
    report: &EvalReport,
    rmse: Option<f64>,
    seed: u64,
) -> String {
    let mode = match mode {
        Mode::Ideal => "ideal",
        Mode::Hardware => "hardware",
    };
    let rmse = rmse.map(|r| format!("{r:.6}")).unwrap_or_default();
    let n_train = n_train.map(|n| n.to_string()).unwrap_or_default();
    format!("{},{},{},{},{:.4},{},{}", format_topology(topology), mode, n_train, report.n, report.err(), rmse, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbm::HardwareConfig;
    use ndarray::Array2;

    fn patterns() -> (Array2<f64>, Vec<u8>) {
        let a = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let b = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let data = Array2::from_shape_fn((100, 8), |(i, j)| if i % 2 == 0 { a[j] } else { b[j] });
        let labels = (0..100).map(|i| (i % 2) as u8).collect();
        (data, labels)
    }

    #[test]
    fn topology_parsing() {
        assert_eq!(parse_topology("784x800x800x10").unwrap(), vec![784, 800, 800, 10]);
        assert!(parse_topology("784").is_err());
        assert!(parse_topology("784x0x10").is_err());
        assert!(parse_topology("784xx10").is_err());
        assert_eq!(format_topology(&[784, 10]), "784x10");
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.1, 0.5, 0.5, 0.2]), 1);
        assert_eq!(argmax(&[0.0; 4]), 0);
    }

    #[test]
    fn zero_epochs_equals_initialization() {
        let (data, labels) = patterns();
        let mut cfg = DbnConfig::default();
        cfg.cd.epochs = 0;
        cfg.readout.epochs = 0;
        let (model, _) = greedy_train(&[8, 4, 2], data.view(), &labels, &cfg).unwrap();
        assert_eq!(model, DbnModel::init(&[8, 4, 2], &cfg).unwrap());
    }

    #[test]
    fn feature_width_follows_topology() {
        let (data, _) = patterns();
        let model = DbnModel::init(&[8, 5, 3, 2], &DbnConfig::default()).unwrap();
        assert_eq!(model.features(data.view()).unwrap().ncols(), 3);
        assert_eq!(model.layers()[0].hidden_probabilities_batch(data.view()).unwrap().ncols(), 5);
    }

    #[test]
    fn saturated_label_bias_wins() {
        let mut readout = RbmModel::zeros(4, 10);
        let mut db = Array1::zeros(10);
        db[3] = 1e6;
        readout.apply_delta(Array2::zeros((4, 10)), Array1::zeros(4), db).unwrap();
        let model = DbnModel::from_parts(vec![RbmModel::zeros(6, 4)], readout).unwrap();
        for input in [[0.0; 6], [1.0; 6]] {
            assert_eq!(model.infer(&input, 1, 0).unwrap(), 3);
        }
    }

    #[test]
    fn toy_patterns_are_learned() {
        let (data, labels) = patterns();
        let mut cfg = DbnConfig {
            cd: CdConfig { learning_rate: 0.1, batch_size: 10, epochs: 20, seed: 4, ..Default::default() },
            ..Default::default()
        };
        cfg.readout.epochs = 30;
        let (model, _) = greedy_train(&[8, 6, 2], data.view(), &labels, &cfg).unwrap();
        assert_eq!(model.infer(data.row(0).as_slice().unwrap(), 1, 0).unwrap(), 0);
        assert_eq!(model.infer(data.row(1).as_slice().unwrap(), 1, 0).unwrap(), 1);
        let report = model.evaluate(data.view(), &labels, 1, 0).unwrap();
        assert_eq!(report.n_false, 0);
        assert_eq!(report.err(), 0.0);
    }

    #[test]
    fn hardware_toy_is_deterministic() {
        let (data, labels) = patterns();
        let mut cfg = DbnConfig { hardware: Some(HardwareConfig::default()), ..Default::default() };
        cfg.cd = CdConfig { learning_rate: 0.1, batch_size: 10, epochs: 5, seed: 2, ..Default::default() };
        cfg.readout.epochs = 5;
        let (a, _) = greedy_train(&[8, 6, 2], data.view(), &labels, &cfg).unwrap();
        let (b, _) = greedy_train(&[8, 6, 2], data.view(), &labels, &cfg).unwrap();
        assert_eq!(a, b);
        let r1 = a.evaluate(data.view(), &labels, 4, 9).unwrap();
        let r2 = a.evaluate(data.view(), &labels, 4, 9).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn confusion_rows_match_class_counts() {
        let (data, labels) = patterns();
        let model = DbnModel::init(&[8, 2], &DbnConfig::default()).unwrap();
        let r = model.evaluate(data.view(), &labels, 1, 0).unwrap();
        assert_eq!(r.confusion[0].iter().sum::<usize>(), 50);
        assert_eq!(r.confusion[1].iter().sum::<usize>(), 50);
        // all-zero readout ties everywhere and picks class 0
        assert_eq!(r.n_false, 50);
        assert!((r.err() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let model = DbnModel::init(&[8, 2], &DbnConfig::default()).unwrap();
        assert!(model.infer(&[0.0; 7], 1, 0).is_err());
        assert!(model.infer(&[0.0; 8], 0, 0).is_err());
        assert!(model.evaluate(Array2::zeros((3, 8)).view(), &[0, 1], 1, 0).is_err());
        let (data, labels) = patterns();
        assert!(greedy_train(&[7, 2], data.view(), &labels, &DbnConfig::default()).is_err());
    }

    #[test]
    fn csv_row_layout() {
        let r = EvalReport { n: 4, n_false: 1, confusion: vec![vec![0; 2]; 2] };
        assert_eq!(eval_csv_row(&[784, 10], Mode::Ideal, Some(100), &r, None, 1), "784x10,ideal,100,4,0.2500,,1");
        assert_eq!(
            eval_csv_row(&[784, 5, 10], Mode::Hardware, None, &r, Some(0.25), 7),
            "784x5x10,hardware,,4,0.2500,0.250000,7"
        );
    }
}
