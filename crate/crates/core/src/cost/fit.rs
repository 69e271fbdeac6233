use serde::{Deserialize, Serialize};

use super::{CostError, LinearComputeModel};

/// One observed computation: `(data_size, performance, seconds)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub data_size: f64,
    pub performance: f64,
    pub seconds: f64,
}

impl Sample {
    pub fn new(data_size: f64, performance: f64, seconds: f64) -> Self {
        Sample { data_size, performance, seconds }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub model: LinearComputeModel,
    /// Mean absolute percentage error over samples with non-zero time.
    pub mpe: f64,
}

/// Ordinary least squares of `seconds` on `data_size / performance`.
pub fn fit_linear_model(samples: &[Sample]) -> Result<LinearFit, CostError> {
    if samples.len() < 2 {
        return Err(CostError::TooFewSamples(samples.len()));
    }
    let mut xs = Vec::with_capacity(samples.len());
    for s in samples {
        if !(s.performance > 0.0 && s.data_size >= 0.0 && s.seconds.is_finite()) {
            return Err(CostError::Domain(format!("bad sample {s:?}")));
        }
        xs.push(s.data_size / s.performance);
    }
    let n = samples.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = samples.iter().map(|s| s.seconds).sum::<f64>() / n;

    // Centered sums keep the fit exact for noiseless data at large offsets.
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, s) in xs.iter().zip(samples) {
        let dx = x - mean_x;
        let dy = s.seconds - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }

    let model = if sxx == 0.0 {
        if syy != 0.0 {
            return Err(CostError::Singular(format!(
                "all samples share abscissa {mean_x} but observed times differ"
            )));
        }
        LinearComputeModel::new(0.0, mean_y)
    } else {
        let phi = sxy / sxx;
        LinearComputeModel::new(phi, mean_y - phi * mean_x)
    };

    // Linear in x, so non-negativity over the sampled range reduces to the ends.
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    for x in [lo, hi] {
        if model.eval(x) < 0.0 {
            return Err(CostError::Domain(format!(
                "fitted model (phi={}, psi={}) is negative at x={x}",
                model.phi, model.psi
            )));
        }
    }

    let errs: Vec<f64> = xs
        .iter()
        .zip(samples)
        .filter(|(_, s)| s.seconds != 0.0)
        .map(|(&x, s)| ((model.eval(x) - s.seconds) / s.seconds).abs() * 100.0)
        .collect();
    let mpe = if errs.is_empty() { 0.0 } else { errs.iter().sum::<f64>() / errs.len() as f64 };

    Ok(LinearFit { model, mpe })
}
