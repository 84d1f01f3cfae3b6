//! Waveform-level inference: pixels become Gaussian pulses, an ideal
//! power-additive stage applies the trained weights and every neuron is a
//! simulated laser.

use ndarray::ArrayView1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Split;
use crate::error::{Error, Result};
use crate::laser::Simulator;
use crate::onn::MlpModel;
use crate::waveform::{gaussian_pulse, measure_peak_fwhm, PulseGrid, Waveform, PS};

/// Fraction of images allowed to fail before the whole evaluation fails.
pub const MAX_FAILURE_FRACTION: f64 = 1e-3;

/// Pixel value (normalised, read as mW) as a Gaussian pulse of the given
/// FWHM centred on the grid.
pub fn encode_pixel(value: f64, fwhm_ps: f64, grid: &PulseGrid) -> Result<Waveform> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::Precondition(format!("pixel value {value} outside [0, 1]")));
    }
    grid.check_fwhm(fwhm_ps * PS)?;
    Ok(gaussian_pulse(value, fwhm_ps * PS, grid))
}

/// Pointwise Σ wᵢ·sᵢ(t) plus `intercept` × a unit-peak Gaussian of
/// `bias_fwhm_ps` on the same grid.
pub fn weighted_sum(
    waveforms: &[&Waveform],
    weights: &[f64],
    intercept: f64,
    bias_fwhm_ps: f64,
    grid: &PulseGrid,
) -> Result<Waveform> {
    if waveforms.len() != weights.len() {
        return Err(Error::Precondition(format!(
            "{} waveforms but {} weights",
            waveforms.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) || !(intercept >= 0.0) {
        return Err(Error::Precondition("weights and intercept must be ≥ 0".into()));
    }
    let mut out = Waveform::zeros(grid);
    for (w, &k) in waveforms.iter().zip(weights) {
        if !w.same_grid(&out) {
            return Err(Error::Precondition("waveforms are on different time grids".into()));
        }
        if k == 0.0 {
            continue;
        }
        for (o, s) in out.samples.iter_mut().zip(&w.samples) {
            *o += k * s;
        }
    }
    if intercept > 0.0 {
        let bias = gaussian_pulse(1.0, bias_fwhm_ps * PS, grid);
        for (o, s) in out.samples.iter_mut().zip(&bias.samples) {
            *o += intercept * s;
        }
    }
    Ok(out)
}

/// Output of one simulated activation unit driven by `input`.
pub fn neuron_response(sim: &Simulator, mode: i32, detuning: f64, input: &Waveform) -> Result<Waveform> {
    sim.pulse_response(mode, detuning, input)
}

/// Laser set-up shared by every neuron of a physical network.
#[derive(Debug)]
pub struct PhysicalLayout<'a> {
    pub sim: &'a Simulator,
    pub mode: i32,
    /// rad/s
    pub detuning1: f64,
    pub detuning2: f64,
    pub fwhm1_ps: f64,
    pub fwhm2_ps: f64,
    pub grid: PulseGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronRecord {
    pub image: usize,
    pub layer: u8,
    pub neuron: usize,
    /// Peak power into the laser (mW).
    pub pre_peak: f64,
    pub post_peak: f64,
    pub post_fwhm_ps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub label: u8,
    pub records: Vec<NeuronRecord>,
}

fn record(image: usize, layer: u8, neuron: usize, input: &Waveform, output: &Waveform) -> NeuronRecord {
    let post_fwhm_ps = measure_peak_fwhm(output).map_or(f64::NAN, |(_, f)| f / PS);
    NeuronRecord {
        image,
        layer,
        neuron,
        pre_peak: input.peak(),
        post_peak: output.peak(),
        post_fwhm_ps,
    }
}

/// Propagate one image through both layers; the prediction is the output
/// neuron with the highest peak power (ties go to the lowest label).
pub fn infer_image(
    model: &MlpModel,
    layout: &PhysicalLayout,
    image: ArrayView1<f64>,
    index: usize,
) -> Result<Inference> {
    let dims = model.dims();
    if image.len() != dims.inputs {
        return Err(Error::Precondition(format!(
            "image has {} pixels, model expects {}",
            image.len(),
            dims.inputs
        )));
    }
    let grid = &layout.grid;
    let lit: Vec<(usize, Waveform)> = image
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, &v)| encode_pixel(v, layout.fwhm1_ps, grid).map(|w| (i, w)))
        .collect::<Result<_>>()?;
    let inputs: Vec<&Waveform> = lit.iter().map(|(_, w)| w).collect();
    let mut records = Vec::with_capacity(dims.hidden + dims.outputs);
    let mut hidden_out = Vec::with_capacity(dims.hidden);
    for j in 0..dims.hidden {
        let weights: Vec<f64> = lit.iter().map(|(i, _)| model.w1[[j, *i]]).collect();
        let drive = weighted_sum(&inputs, &weights, model.c1[j], layout.fwhm1_ps, grid)?;
        let out = neuron_response(layout.sim, layout.mode, layout.detuning1, &drive)?;
        records.push(record(index, 1, j, &drive, &out));
        hidden_out.push(out);
    }
    let hidden_refs: Vec<&Waveform> = hidden_out.iter().collect();
    let mut peaks = Vec::with_capacity(dims.outputs);
    for k in 0..dims.outputs {
        let weights = model.w2.row(k).to_vec();
        let drive = weighted_sum(&hidden_refs, &weights, model.c2[k], layout.fwhm2_ps, grid)?;
        let out = neuron_response(layout.sim, layout.mode, layout.detuning2, &drive)?;
        records.push(record(index, 2, k, &drive, &out));
        peaks.push(out.peak());
    }
    let mut label = 0;
    for (k, &p) in peaks.iter().enumerate() {
        if p > peaks[label] {
            label = k;
        }
    }
    Ok(Inference {
        label: label as u8,
        records,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalEvaluation {
    pub accuracy: f64,
    pub per_label: Vec<f64>,
    pub label_counts: Vec<usize>,
    pub predictions: Vec<Option<u8>>,
    pub failures: usize,
    /// Sorted by (image, layer, neuron).
    pub records: Vec<NeuronRecord>,
}

impl PhysicalEvaluation {
    pub fn scatter_csv(&self) -> String {
        let mut s = String::from("image,layer,neuron,pre_peak_mw,post_peak_mw,post_fwhm_ps\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.image, r.layer, r.neuron, r.pre_peak, r.post_peak, r.post_fwhm_ps
            ));
        }
        s
    }

    /// Mean output FWHM of one layer (ps), ignoring unmeasurable pulses.
    pub fn mean_fwhm(&self, layer: u8) -> f64 {
        let v: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.layer == layer && r.post_fwhm_ps.is_finite())
            .map(|r| r.post_fwhm_ps)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Per-label accuracy table for two testing modes side by side.
pub fn per_label_csv(analytic: &[f64], physical: &[f64], counts: &[usize]) -> String {
    let mut s = String::from("label,count,analytic_accuracy,physical_accuracy,delta\n");
    for (k, ((a, p), c)) in analytic.iter().zip(physical).zip(counts).enumerate() {
        s.push_str(&format!("{k},{c},{a},{p},{}\n", p - a));
    }
    s
}

/// Physical-layer accuracy over `subset`. Images whose simulation fails are
/// excluded and counted; more than 0.1% failures is an error.
pub fn evaluate_physical(
    model: &MlpModel,
    layout: &PhysicalLayout,
    subset: &Split,
) -> Result<PhysicalEvaluation> {
    if subset.is_empty() {
        return Err(Error::Precondition("empty physical-evaluation subset".into()));
    }
    let classes = model.dims().outputs;
    let outcomes: Vec<Result<Inference>> = (0..subset.len())
        .into_par_iter()
        .map(|i| infer_image(model, layout, subset.images.row(i), i))
        .collect();
    let mut hits = vec![0usize; classes];
    let mut counts = vec![0usize; classes];
    let mut predictions = Vec::with_capacity(subset.len());
    let mut records = Vec::new();
    let mut failures = 0;
    let mut last_error = None;
    for (outcome, &y) in outcomes.into_iter().zip(&subset.labels) {
        match outcome {
            Ok(inf) => {
                counts[y as usize] += 1;
                if inf.label == y {
                    hits[y as usize] += 1;
                }
                predictions.push(Some(inf.label));
                records.extend(inf.records);
            }
            Err(e) => {
                log::warn!("physical inference failed: {e}");
                failures += 1;
                predictions.push(None);
                last_error = Some(e);
            }
        }
    }
    if failures as f64 > MAX_FAILURE_FRACTION * subset.len() as f64 {
        return Err(Error::Dependency(format!(
            "{failures} of {} images failed; last error: {}",
            subset.len(),
            last_error.map_or_else(String::new, |e| e.to_string())
        )));
    }
    records.sort_by_key(|r| (r.image, r.layer, r.neuron));
    let evaluated: usize = counts.iter().sum();
    Ok(PhysicalEvaluation {
        accuracy: hits.iter().sum::<usize>() as f64 / evaluated as f64,
        per_label: hits
            .iter()
            .zip(&counts)
            .map(|(&h, &c)| if c == 0 { f64::NAN } else { h as f64 / c as f64 })
            .collect(),
        label_counts: counts,
        predictions,
        failures,
        records,
    })
}
