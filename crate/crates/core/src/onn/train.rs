use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{check_labels, cross_entropy, Gradients, MlpModel};
use crate::dataio::Split;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// L2 weight on the second weighted layer only.
    pub l2: f64,
    /// Inverted dropout on the inputs.
    pub dropout: f64,
    pub runs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 100,
            l2: 0.02,
            dropout: 0.1,
            runs: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be ≥ 1");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be ≥ 0");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.runs == 0 {
            return bad("runs must be ≥ 1");
        }
        Ok(())
    }
}

/// Adam moments for every parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u32,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        let zeros = Gradients {
            w1: Array2::zeros(model.w1.raw_dim()),
            c1: Array1::zeros(model.c1.len()),
            w2: Array2::zeros(model.w2.raw_dim()),
            c2: Array1::zeros(model.c2.len()),
        };
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

fn adam_update<D: ndarray::Dimension>(
    p: &mut ndarray::Array<f64, D>,
    g: &ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    lr: f64,
    (b1, b2, eps): (f64, f64, f64),
    (c1, c2): (f64, f64),
) {
    ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let mh = *m / c1;
        let vh = *v / c2;
        // Projection onto the non-negative orthant.
        *p = (*p - lr * mh / (vh.sqrt() + eps)).max(0.0);
    });
}

/// One Adam step followed by clamping every parameter at zero.
pub fn apply_step(
    model: &mut MlpModel,
    state: &mut AdamState,
    grads: &Gradients,
    lr: f64,
) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::TrainingDiverged {
            epoch: 0,
            reason: "non-finite gradient".into(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let corr = (1.0 - state.beta1.powi(t), 1.0 - state.beta2.powi(t));
    let hyper = (state.beta1, state.beta2, state.eps);
    adam_update(&mut model.w1, &grads.w1, &mut state.m.w1, &mut state.v.w1, lr, hyper, corr);
    adam_update(&mut model.c1, &grads.c1, &mut state.m.c1, &mut state.v.c1, lr, hyper, corr);
    adam_update(&mut model.w2, &grads.w2, &mut state.m.w2, &mut state.v.w2, lr, hyper, corr);
    adam_update(&mut model.c2, &grads.c2, &mut state.m.c2, &mut state.v.c2, lr, hyper, corr);
    Ok(())
}

/// Forward/backward on one minibatch and a projected Adam update. Returns
/// the batch loss and the number of correct predictions.
pub fn train_step(
    model: &mut MlpModel,
    state: &mut AdamState,
    batch: ArrayView2<f64>,
    labels: &[u8],
    config: &TrainConfig,
    dropout_seed: u64,
) -> Result<(f64, usize)> {
    let dropout = (config.dropout > 0.0).then_some((config.dropout, dropout_seed));
    let (loss, grads, fp) = model.loss_and_gradients(batch, labels, config.l2, dropout)?;
    if !loss.is_finite() {
        return Err(Error::TrainingDiverged {
            epoch: 0,
            reason: format!("loss is {loss}"),
        });
    }
    apply_step(model, state, &grads, config.learning_rate)?;
    Ok((loss, count_correct(&fp.probs, labels)))
}

pub(crate) fn argmax_row(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn count_correct(scores: &Array2<f64>, labels: &[u8]) -> usize {
    scores
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(r, &y)| argmax_row(r.view()) == y as usize)
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Running averages over the epoch's minibatches (dropout active).
    pub train_accuracy: f64,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub test_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    pub per_label: Vec<f64>,
    pub label_counts: Vec<usize>,
    pub predictions: Vec<u8>,
}

const EVAL_CHUNK: usize = 2048;

/// Argmax-of-softmax accuracy, mean cross-entropy (without the regulariser)
/// and per-label accuracy. Dropout is never applied.
pub fn evaluate(model: &MlpModel, split: &Split) -> Result<Evaluation> {
    let classes = model.dims().outputs;
    check_labels(&split.labels, split.images.nrows(), classes)?;
    let n = split.len();
    if n == 0 {
        return Err(Error::Precondition("empty evaluation split".into()));
    }
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(n);
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let x = split.images.slice(ndarray::s![start..end, ..]);
        let fp = model.forward(x, None);
        loss += cross_entropy(&fp.a2, &split.labels[start..end]) * (end - start) as f64;
        predictions.extend(fp.probs.axis_iter(Axis(0)).map(|r| argmax_row(r) as u8));
    }
    let mut hits = vec![0usize; classes];
    let mut counts = vec![0usize; classes];
    for (&p, &y) in predictions.iter().zip(&split.labels) {
        counts[y as usize] += 1;
        if p == y {
            hits[y as usize] += 1;
        }
    }
    let correct: usize = hits.iter().sum();
    Ok(Evaluation {
        accuracy: correct as f64 / n as f64,
        loss: loss / n as f64,
        per_label: hits
            .iter()
            .zip(&counts)
            .map(|(&h, &c)| if c == 0 { f64::NAN } else { h as f64 / c as f64 })
            .collect(),
        label_counts: counts,
        predictions,
    })
}

/// Seeded shuffled minibatch training. `test` (if any) is evaluated after
/// every epoch.
pub fn train(
    train_split: &Split,
    test: Option<&Split>,
    mut model: MlpModel,
    config: &TrainConfig,
) -> Result<(MlpModel, Vec<EpochRecord>)> {
    config.validate()?;
    model.check()?;
    check_labels(&train_split.labels, train_split.images.nrows(), model.dims().outputs)?;
    let n = train_split.len();
    if n == 0 {
        return Err(Error::Precondition("empty training split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut state = AdamState::new(&model);
    let mut history = Vec::with_capacity(config.epochs);
    let cols = train_split.images.ncols();
    let mut batch = Array2::<f64>::zeros((config.batch_size, cols));
    let mut labels = Vec::with_capacity(config.batch_size);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let mut view = batch.slice_mut(ndarray::s![..chunk.len(), ..]);
            labels.clear();
            for (row, &i) in chunk.iter().enumerate() {
                view.row_mut(row).assign(&train_split.images.row(i));
                labels.push(train_split.labels[i]);
            }
            let x = batch.slice(ndarray::s![..chunk.len(), ..]);
            let seed = rng.gen();
            let (loss, ok) = train_step(&mut model, &mut state, x, &labels, config, seed)
                .map_err(|e| match e {
                    Error::TrainingDiverged { reason, .. } => {
                        Error::TrainingDiverged { epoch, reason }
                    }
                    other => other,
                })?;
            loss_sum += loss * chunk.len() as f64;
            correct += ok;
        }
        let (test_accuracy, test_loss) = match test {
            Some(t) => {
                let e = evaluate(&model, t)?;
                (e.accuracy, e.loss)
            }
            None => (f64::NAN, f64::NAN),
        };
        let rec = EpochRecord {
            epoch,
            train_accuracy: correct as f64 / n as f64,
            train_loss: loss_sum / n as f64,
            test_accuracy,
            test_loss,
        };
        log::debug!("epoch {epoch}: {rec:?}");
        history.push(rec);
    }
    Ok((model, history))
}

/// First epoch whose running train accuracy reaches `target`.
pub fn epochs_to_accuracy(history: &[EpochRecord], target: f64) -> Option<usize> {
    history.iter().find(|r| r.train_accuracy >= target).map(|r| r.epoch)
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_accuracy,train_loss,test_accuracy,test_loss\n");
    for r in history {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.train_accuracy, r.train_loss, r.test_accuracy, r.test_loss
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actfit::ActivationCoeffs;
    use crate::onn::model::{init_model, Dims};
    use ndarray::array;

    fn scalar_model(w: f64) -> MlpModel {
        let id = ActivationCoeffs::identity(10.0);
        MlpModel {
            w1: array![[w]],
            c1: array![0.0],
            w2: array![[0.0], [0.0]],
            c2: array![0.0, 0.0],
            act1: id.clone(),
            act2: id,
            seed: 0,
        }
    }

    fn zero_grads(m: &MlpModel) -> Gradients {
        Gradients {
            w1: Array2::zeros(m.w1.raw_dim()),
            c1: Array1::zeros(m.c1.len()),
            w2: Array2::zeros(m.w2.raw_dim()),
            c2: Array1::zeros(m.c2.len()),
        }
    }

    #[test]
    fn first_adam_step_by_hand() {
        let mut m = scalar_model(1.0);
        let mut st = AdamState::new(&m);
        let mut g = zero_grads(&m);
        g.w1[[0, 0]] = 0.5;
        apply_step(&mut m, &mut st, &g, 0.001).unwrap();
        // m̂ = 0.5, v̂ = 0.25 → Δ = lr·0.5/(0.5 + 1e-8)
        let want = 1.0 - 0.001 * 0.5 / (0.5 + 1e-8);
        assert!((m.w1[[0, 0]] - want).abs() < 1e-15);
        assert!((m.w1[[0, 0]] - 0.999).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut m = scalar_model(0.7);
        let before = m.clone();
        let mut st = AdamState::new(&m);
        let g = zero_grads(&m);
        apply_step(&mut m, &mut st, &g, 0.001).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn projection_keeps_zero_parameters_non_negative() {
        let mut m = scalar_model(0.0);
        let mut st = AdamState::new(&m);
        let mut g = zero_grads(&m);
        g.w1[[0, 0]] = 3.0;
        g.c2[1] = 0.2;
        apply_step(&mut m, &mut st, &g, 0.01).unwrap();
        assert_eq!(m.w1[[0, 0]], 0.0);
        assert!(m.min_parameter() >= 0.0);
    }

    #[test]
    fn non_finite_gradient_diverges() {
        let mut m = scalar_model(0.5);
        let mut st = AdamState::new(&m);
        let mut g = zero_grads(&m);
        g.c1[0] = f64::NAN;
        assert!(matches!(
            apply_step(&mut m, &mut st, &g, 0.001),
            Err(Error::TrainingDiverged { .. })
        ));
    }

    fn toy_split(n: usize, seed: u64) -> Split {
        // Class k lights up a block of 78 pixels.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut images = Array2::zeros((n, 784));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let k: u8 = rng.gen_range(0..10);
            labels.push(k);
            for j in 0..78 {
                images[[i, k as usize * 78 + j]] = rng.gen_range(0.5..1.0);
            }
        }
        Split { images, labels }
    }

    fn act() -> ActivationCoeffs {
        ActivationCoeffs::new([1.5, 1.2, 0.9, 1.0, 0.8, 1.3, 0.05], 50.0).unwrap()
    }

    #[test]
    fn one_epoch_learns_and_records_history() {
        let data = toy_split(512, 1);
        let m = init_model(Dims::mnist(10), act(), act(), 0).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let (trained, hist) = train(&data, Some(&data), m, &cfg).unwrap();
        assert_eq!(hist.len(), 1);
        assert!(hist[0].test_loss < 10f64.ln());
        assert!(trained.min_parameter() >= 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_split(300, 2);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 64,
            ..TrainConfig::default()
        };
        let m = init_model(Dims::mnist(10), act(), act(), 3).unwrap();
        let (a, ha) = train(&data, None, m.clone(), &cfg).unwrap();
        let (b, hb) = train(&data, None, m, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha.len(), hb.len());
    }

    #[test]
    fn per_label_accuracies_average_to_overall() {
        let data = toy_split(777, 4);
        let m = init_model(Dims::mnist(10), act(), act(), 5).unwrap();
        let e = evaluate(&m, &data).unwrap();
        let weighted: f64 = e
            .per_label
            .iter()
            .zip(&e.label_counts)
            .filter(|(_, &c)| c > 0)
            .map(|(a, &c)| a * c as f64)
            .sum::<f64>()
            / data.len() as f64;
        assert!((weighted - e.accuracy).abs() < 1e-12);
    }

    #[test]
    fn uniform_model_scores_chance() {
        let data = toy_split(10_000, 6);
        let mut m = init_model(Dims::mnist(10), act(), act(), 0).unwrap();
        m.w1.fill(0.0);
        m.w2.fill(0.0);
        let e = evaluate(&m, &data).unwrap();
        // Ties resolve to label 0, whose share is ≈ 0.1.
        assert!((e.accuracy - 0.1).abs() < 0.02, "{}", e.accuracy);
        assert!((e.loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { dropout: 1.0, ..TrainConfig::default() },
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { l2: -1.0, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
