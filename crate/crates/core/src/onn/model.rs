use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actfit::ActivationCoeffs;
use crate::error::{Error, Result};

/// Inputs below this use the activation slope at this power (the fitted
/// curve may have an infinite slope at exactly zero).
pub const DERIVATIVE_FLOOR: f64 = 1e-6;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Two optically activated weighted layers followed by a softmax readout.
/// All weights and intercepts are non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// hidden × inputs
    pub w1: Array2<f64>,
    pub c1: Array1<f64>,
    /// outputs × hidden
    pub w2: Array2<f64>,
    pub c2: Array1<f64>,
    pub act1: ActivationCoeffs,
    pub act2: ActivationCoeffs,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
}

impl Dims {
    pub fn mnist(hidden: usize) -> Self {
        Self {
            inputs: 784,
            hidden,
            outputs: 10,
        }
    }
}

/// He-style uniform init on [0, √(2/fan_in)], zero intercepts.
pub fn init_model(
    dims: Dims,
    act1: ActivationCoeffs,
    act2: ActivationCoeffs,
    seed: u64,
) -> Result<MlpModel> {
    if dims.inputs == 0 || dims.hidden == 0 || dims.outputs < 2 {
        return Err(Error::Precondition(format!("invalid layer dims {dims:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |rows: usize, cols: usize| {
        let hi = (2.0 / cols as f64).sqrt();
        Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(0.0..hi))
    };
    let w1 = uniform(dims.hidden, dims.inputs);
    let w2 = uniform(dims.outputs, dims.hidden);
    Ok(MlpModel {
        w1,
        c1: Array1::zeros(dims.hidden),
        w2,
        c2: Array1::zeros(dims.outputs),
        act1,
        act2,
        seed,
    })
}

/// Everything backpropagation needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Inputs after dropout (equal to the batch when not training).
    pub input: Array2<f64>,
    pub z1: Array2<f64>,
    pub a1: Array2<f64>,
    pub d1: Array2<f64>,
    pub z2: Array2<f64>,
    pub a2: Array2<f64>,
    pub d2: Array2<f64>,
    pub probs: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub c1: Array1<f64>,
    pub w2: Array2<f64>,
    pub c2: Array1<f64>,
}

impl Gradients {
    pub fn all_finite(&self) -> bool {
        self.w1.iter().chain(&self.c1).chain(&self.w2).chain(&self.c2).all(|g| g.is_finite())
    }
}

fn activate(z: &Array2<f64>, act: &ActivationCoeffs) -> (Array2<f64>, Array2<f64>) {
    let mut a = Array2::zeros(z.raw_dim());
    let mut d = Array2::zeros(z.raw_dim());
    Zip::from(&mut a).and(&mut d).and(z).for_each(|a, d, &z| {
        (*a, *d) = act.eval_saturating(z, DERIVATIVE_FLOOR);
    });
    (a, d)
}

fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut p = x.clone();
    for mut row in p.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

impl MlpModel {
    pub fn dims(&self) -> Dims {
        Dims {
            inputs: self.w1.ncols(),
            hidden: self.w1.nrows(),
            outputs: self.w2.nrows(),
        }
    }

    pub fn min_parameter(&self) -> f64 {
        self.w1
            .iter()
            .chain(&self.c1)
            .chain(&self.w2)
            .chain(&self.c2)
            .fold(f64::INFINITY, |a, &b| a.min(b))
    }

    pub fn check(&self) -> Result<()> {
        let d = self.dims();
        if self.c1.len() != d.hidden || self.w2.ncols() != d.hidden || self.c2.len() != d.outputs {
            return Err(Error::Precondition("inconsistent model dims".into()));
        }
        if !(self.min_parameter() >= 0.0) {
            return Err(Error::Precondition("model has negative or NaN parameters".into()));
        }
        Ok(())
    }

    /// Forward pass. With `dropout = Some((rate, seed))` inverted dropout is
    /// applied to the inputs.
    pub fn forward(&self, batch: ArrayView2<f64>, dropout: Option<(f64, u64)>) -> ForwardPass {
        let input = match dropout {
            Some((rate, seed)) if rate > 0.0 => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let keep = 1.0 - rate;
                // Keep when a uniform u32 falls below keep·2³².
                let cut = (keep * 4_294_967_296.0).min(u32::MAX as f64) as u32;
                batch.mapv(|x| if rng.next_u32() < cut { x / keep } else { 0.0 })
            }
            _ => batch.to_owned(),
        };
        let z1 = input.dot(&self.w1.t()) + &self.c1;
        let (a1, d1) = activate(&z1, &self.act1);
        let z2 = a1.dot(&self.w2.t()) + &self.c2;
        let (a2, d2) = activate(&z2, &self.act2);
        let probs = softmax_rows(&a2);
        ForwardPass {
            input,
            z1,
            a1,
            d1,
            z2,
            a2,
            d2,
            probs,
        }
    }

    pub fn l2_penalty(&self, lambda: f64) -> f64 {
        lambda * self.w2.iter().map(|w| w * w).sum::<f64>()
    }

    /// Mean cross-entropy plus λ‖W2‖², and its gradient.
    pub fn loss_and_gradients(
        &self,
        batch: ArrayView2<f64>,
        labels: &[u8],
        lambda: f64,
        dropout: Option<(f64, u64)>,
    ) -> Result<(f64, Gradients, ForwardPass)> {
        check_labels(labels, batch.nrows(), self.dims().outputs)?;
        let fp = self.forward(batch, dropout);
        let n = labels.len() as f64;
        let loss = cross_entropy(&fp.a2, labels) + self.l2_penalty(lambda);

        let mut g2 = fp.probs.clone();
        for (i, &y) in labels.iter().enumerate() {
            g2[[i, y as usize]] -= 1.0;
        }
        g2 /= n;
        let dz2 = &g2 * &fp.d2;
        let w2 = dz2.t().dot(&fp.a1) + &(&self.w2 * (2.0 * lambda));
        let c2 = dz2.sum_axis(Axis(0));
        let da1 = dz2.dot(&self.w2);
        let dz1 = &da1 * &fp.d1;
        let w1 = dz1.t().dot(&fp.input);
        let c1 = dz1.sum_axis(Axis(0));
        Ok((loss, Gradients { w1, c1, w2, c2 }, fp))
    }
}

pub(crate) fn check_labels(labels: &[u8], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Precondition(format!(
            "{} labels for {rows} inputs",
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::Precondition(format!("label {l} out of range")));
    }
    Ok(())
}

/// Mean −ln softmax(logits)[label], computed via log-sum-exp.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[u8]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.axis_iter(Axis(0)).zip(labels) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[y as usize];
    }
    total / labels.len() as f64
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    inputs: usize,
    hidden: usize,
    outputs: usize,
    seed: u64,
    act1: ActivationCoeffs,
    act2: ActivationCoeffs,
    w1: Vec<f64>,
    c1: Vec<f64>,
    w2: Vec<f64>,
    c2: Vec<f64>,
}

impl MlpModel {
    pub fn to_json(&self) -> Result<String> {
        let d = self.dims();
        let flat = |a: &Array2<f64>| a.iter().copied().collect::<Vec<_>>();
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            inputs: d.inputs,
            hidden: d.hidden,
            outputs: d.outputs,
            seed: self.seed,
            act1: self.act1.clone(),
            act2: self.act2.clone(),
            w1: flat(&self.w1),
            c1: self.c1.to_vec(),
            w2: flat(&self.w2),
            c2: self.c2.to_vec(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        let shape = |r, c, v: Vec<f64>| {
            Array2::from_shape_vec((r, c), v)
                .map_err(|e| Error::Config(format!("checkpoint shape: {e}")))
        };
        let m = Self {
            w1: shape(ck.hidden, ck.inputs, ck.w1)?,
            c1: Array1::from(ck.c1),
            w2: shape(ck.outputs, ck.hidden, ck.w2)?,
            c2: Array1::from(ck.c2),
            act1: ck.act1,
            act2: ck.act2,
            seed: ck.seed,
        };
        m.check()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    pub(crate) fn smooth_act(p_max: f64) -> ActivationCoeffs {
        ActivationCoeffs::new([1.5, 1.2, 0.9, 1.0, 0.8, 1.3, 0.05], p_max).unwrap()
    }

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(0.05..1.0))
    }

    #[test]
    fn init_is_seeded_and_non_negative() {
        let a = init_model(Dims::mnist(10), smooth_act(50.0), smooth_act(50.0), 0).unwrap();
        let b = init_model(Dims::mnist(10), smooth_act(50.0), smooth_act(50.0), 0).unwrap();
        let c = init_model(Dims::mnist(10), smooth_act(50.0), smooth_act(50.0), 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.w1, c.w1);
        assert!(a.min_parameter() >= 0.0);
        assert!(a.c1.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn zero_model_is_uniform() {
        let mut m = init_model(Dims::mnist(10), smooth_act(50.0), smooth_act(50.0), 0).unwrap();
        m.w1.fill(0.0);
        m.w2.fill(0.0);
        let x = random_batch(4, 784, 3);
        let fp = m.forward(x.view(), None);
        assert!(fp.probs.iter().all(|&p| p == 0.1));
        let (loss, _, _) = m.loss_and_gradients(x.view(), &[0, 3, 9, 1], 0.0, None).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn toy_identity_network() {
        let id = ActivationCoeffs::identity(10.0);
        let m = MlpModel {
            w1: array![[2.0]],
            c1: array![0.0],
            w2: array![[1.0], [0.0]],
            c2: array![0.0, 0.0],
            act1: id.clone(),
            act2: id,
            seed: 0,
        };
        let fp = m.forward(array![[0.5]].view(), None);
        assert_eq!(fp.a1[[0, 0]], 1.0);
    }

    #[test]
    fn softmax_rows_normalised() {
        let m = init_model(Dims::mnist(10), smooth_act(50.0), smooth_act(50.0), 5).unwrap();
        let fp = m.forward(random_batch(32, 784, 9).view(), None);
        for row in fp.probs.axis_iter(Axis(0)) {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn regulariser_is_additive() {
        let m = init_model(Dims::mnist(10), smooth_act(50.0), smooth_act(50.0), 2).unwrap();
        let x = random_batch(8, 784, 4);
        let y = [0, 1, 2, 3, 4, 5, 6, 7];
        let (l0, _, _) = m.loss_and_gradients(x.view(), &y, 0.0, None).unwrap();
        let (l1, _, _) = m.loss_and_gradients(x.view(), &y, 0.02, None).unwrap();
        let norm: f64 = m.w2.iter().map(|w| w * w).sum();
        assert!((l1 - l0 - 0.02 * norm).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let dims = Dims {
            inputs: 784,
            hidden: 3,
            outputs: 10,
        };
        let mut m = init_model(dims, smooth_act(400.0), smooth_act(400.0), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        m.c1.mapv_inplace(|_| rng.gen_range(0.1..0.5));
        m.c2.mapv_inplace(|_| rng.gen_range(0.1..0.5));
        let x = random_batch(20, 784, 13);
        let y: Vec<u8> = (0..20).map(|i| (i % 10) as u8).collect();
        let lambda = 0.02;
        let (_, g, _) = m.loss_and_gradients(x.view(), &y, lambda, None).unwrap();
        let loss = |m: &MlpModel| m.loss_and_gradients(x.view(), &y, lambda, None).unwrap().0;
        let h = 1e-5;
        let check = |an: f64, fd: f64, what: &str| {
            let tol = 1e-4 * an.abs().max(fd.abs()) + 1e-10;
            assert!((an - fd).abs() <= tol, "{what}: analytic {an} vs fd {fd}");
        };
        macro_rules! sweep {
            ($field:ident, $grad:expr, $idx:expr) => {
                for idx in $idx {
                    let mut up = m.clone();
                    let mut dn = m.clone();
                    up.$field[idx] += h;
                    dn.$field[idx] -= h;
                    let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
                    check($grad[idx], fd, &format!("{} {:?}", stringify!($field), idx));
                }
            };
        }
        let w1_idx: Vec<[usize; 2]> = (0..3)
            .flat_map(|r| (0..784).step_by(37).map(move |c| [r, c]))
            .collect();
        sweep!(w1, g.w1, w1_idx.iter().map(|i| (i[0], i[1])));
        sweep!(c1, g.c1, 0..3);
        sweep!(w2, g.w2, (0..10).flat_map(|r| (0..3).map(move |c| (r, c))));
        sweep!(c2, g.c2, 0..10);
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let m = init_model(Dims::mnist(25), smooth_act(50.0), smooth_act(60.0), 7).unwrap();
        let back = MlpModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn dropout_changes_only_training_pass() {
        let m = init_model(Dims::mnist(10), smooth_act(50.0), smooth_act(50.0), 2).unwrap();
        let x = random_batch(4, 784, 1);
        let a = m.forward(x.view(), Some((0.1, 1)));
        let b = m.forward(x.view(), Some((0.1, 2)));
        assert_ne!(a.input, b.input);
        let kept = a.input.iter().zip(x.iter()).filter(|(d, _)| **d != 0.0);
        for (d, o) in kept {
            assert!((d - o / 0.9).abs() < 1e-15);
        }
    }
}
