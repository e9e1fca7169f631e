use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::SampleWeighting;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::losses::LossFamily;
use crate::points::Points;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A fitted kernel expansion `f = sum_i c_i k(anchor_i, .)`.
///
/// Anchors hold the numerator sample first (`n_numerator` rows) followed by
/// the denominator sample. For KuLSIF the two coefficient blocks are the
/// closed-form `beta` (numerator) and `alpha` (denominator) vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioModel {
    kernel: KernelSpec,
    family: LossFamily,
    weighting: SampleWeighting,
    anchors: Points,
    n_numerator: usize,
    coeffs: Vec<f64>,
    lambda: f64,
    iterations: usize,
}

impl RatioModel {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        kernel: KernelSpec,
        family: LossFamily,
        weighting: SampleWeighting,
        anchors: Points,
        n_numerator: usize,
        coeffs: Vec<f64>,
        lambda: f64,
        iterations: usize,
    ) -> Self {
        assert_eq!(anchors.len(), coeffs.len(), "one coefficient per anchor");
        assert!(n_numerator <= anchors.len());
        Self {
            kernel,
            family,
            weighting,
            anchors,
            n_numerator,
            coeffs,
            lambda,
            iterations,
        }
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn family(&self) -> LossFamily {
        self.family
    }

    pub fn weighting(&self) -> SampleWeighting {
        self.weighting
    }

    pub fn anchors(&self) -> &Points {
        &self.anchors
    }

    pub fn n_numerator(&self) -> usize {
        self.n_numerator
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Coefficients over the denominator anchors.
    pub fn alpha(&self) -> &[f64] {
        &self.coeffs[self.n_numerator..]
    }

    /// Coefficients over the numerator anchors.
    pub fn beta(&self) -> &[f64] {
        &self.coeffs[..self.n_numerator]
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument {
            version: MODEL_FORMAT_VERSION,
            family: self.family,
            kernel: self.kernel,
            weighting: self.weighting,
            lambda: self.lambda,
            iterations: self.iterations,
            dim: self.anchors.dim(),
            n_numerator: self.n_numerator,
            n_anchors: self.anchors.len(),
            anchors: encode(self.anchors.as_slice()),
            coeffs: encode(&self.coeffs),
            kulsif: (self.family == LossFamily::Kulsif).then(|| KulsifBlocks {
                alpha: encode(self.alpha()),
                beta: encode(self.beta()),
            }),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model version {} (expected {MODEL_FORMAT_VERSION})",
                doc.version
            )));
        }
        doc.kernel.validate()?;
        let anchors = Points::new(doc.dim, decode(&doc.anchors)?)?;
        let coeffs = decode(&doc.coeffs)?;
        if anchors.len() != doc.n_anchors || coeffs.len() != doc.n_anchors {
            return Err(Error::Format(format!(
                "expected {} anchors and coefficients, found {} and {}",
                doc.n_anchors,
                anchors.len(),
                coeffs.len()
            )));
        }
        if doc.n_numerator > doc.n_anchors {
            return Err(Error::Format("n_numerator exceeds anchor count".into()));
        }
        if let Some(blocks) = &doc.kulsif {
            let alpha = decode(&blocks.alpha)?;
            let beta = decode(&blocks.beta)?;
            if beta.as_slice() != &coeffs[..doc.n_numerator] || alpha.as_slice() != &coeffs[doc.n_numerator..] {
                return Err(Error::Format("KuLSIF alpha/beta blocks disagree with coeffs".into()));
            }
        }
        if !(doc.lambda > 0.0) || doc.iterations == 0 {
            return Err(Error::Format("lambda must be positive and iterations at least 1".into()));
        }
        Ok(Self::from_parts(
            doc.kernel,
            doc.family,
            doc.weighting,
            anchors,
            doc.n_numerator,
            coeffs,
            doc.lambda,
            doc.iterations,
        ))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    version: u32,
    family: LossFamily,
    kernel: KernelSpec,
    weighting: SampleWeighting,
    lambda: f64,
    iterations: usize,
    dim: usize,
    n_numerator: usize,
    n_anchors: usize,
    /// base64 of little-endian f64, row-major
    anchors: String,
    /// base64 of little-endian f64
    coeffs: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kulsif: Option<KulsifBlocks>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KulsifBlocks {
    alpha: String,
    beta: String,
}

pub(crate) fn encode(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

pub(crate) fn decode(text: &str) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| Error::Format(format!("bad base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format("coefficient payload is not a whole number of f64".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}
