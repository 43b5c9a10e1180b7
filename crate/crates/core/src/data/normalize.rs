use serde::{Deserialize, Serialize};

use super::{DataError, FlowFeatureVector, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMethod {
    Minmax,
    Zscore,
}

/// Fitted per-feature affine map `x' = (x - offset) * factor`.
///
/// Constant features get `factor = 0` and map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerState {
    pub method: NormMethod,
    pub offset: Vec<f64>,
    pub factor: Vec<f64>,
}

impl NormalizerState {
    pub fn fit(flows: &[FlowFeatureVector], method: NormMethod) -> Result<Self> {
        let first = flows.first().ok_or(DataError::Empty)?;
        let d = first.features.len();
        if let Some(f) = flows.iter().find(|f| f.features.len() != d) {
            return Err(DataError::Dimension {
                expected: d,
                got: f.features.len(),
            });
        }
        let n = flows.len() as f64;
        let mut offset = Vec::with_capacity(d);
        let mut factor = Vec::with_capacity(d);
        for j in 0..d {
            let col = flows.iter().map(|f| f.features[j]);
            match method {
                NormMethod::Minmax => {
                    let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                    offset.push(lo);
                    factor.push(if hi > lo { 1.0 / (hi - lo) } else { 0.0 });
                }
                NormMethod::Zscore => {
                    let mean = col.clone().sum::<f64>() / n;
                    let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    offset.push(mean);
                    factor.push(if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 });
                }
            }
        }
        Ok(Self { method, offset, factor })
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.offset.iter().zip(&self.factor))
            .map(|(v, (o, f))| if *f == 0.0 { 0.0 } else { (v - o) * f })
            .collect()
    }

    /// Applies the stored map without refitting.
    pub fn apply(&self, flows: &[FlowFeatureVector]) -> Result<Vec<FlowFeatureVector>> {
        flows
            .iter()
            .map(|f| {
                if f.features.len() != self.dim() {
                    return Err(DataError::Dimension {
                        expected: self.dim(),
                        got: f.features.len(),
                    });
                }
                Ok(FlowFeatureVector {
                    features: self.transform(&f.features),
                    ..f.clone()
                })
            })
            .collect()
    }
}

/// Fits on `flows` and returns them normalised with the fitted state.
pub fn normalize(flows: &[FlowFeatureVector], method: NormMethod) -> Result<(Vec<FlowFeatureVector>, NormalizerState)> {
    let state = NormalizerState::fit(flows, method)?;
    Ok((state.apply(flows)?, state))
}
