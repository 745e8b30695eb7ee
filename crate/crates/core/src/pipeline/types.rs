use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BACKGROUND: u8 = 0;
pub const GM: u8 = 1;
pub const WM: u8 = 2;
pub const NUM_CLASSES: usize = 3;

/// Acquisition identity of a slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SliceId {
    pub subject: u32,
    pub scan: u32,
    pub slice: u32,
}

impl SliceId {
    pub fn new(subject: u32, scan: u32, slice: u32) -> Self {
        Self {
            subject,
            scan,
            slice,
        }
    }

    /// Canonical file stem, e.g. `s003_c1_z02`.
    pub fn stem(&self) -> String {
        format!("s{:03}_c{}_z{:02}", self.subject, self.scan, self.slice)
    }
}

impl std::fmt::Display for SliceId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "subject {} scan {} slice {}",
            self.subject, self.scan, self.slice
        )
    }
}

/// `H×W×C` image (interleaved channels) with pixel spacing in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelSlice {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
    pub spacing_mm: (f64, f64),
    pub id: SliceId,
}

impl MultiChannelSlice {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<f64>,
        spacing_mm: (f64, f64),
        id: SliceId,
    ) -> Result<Self> {
        let s = Self {
            height,
            width,
            channels,
            pixels,
            spacing_mm,
            id,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn zeros(height: usize, width: usize, channels: usize, spacing_mm: (f64, f64)) -> Self {
        Self {
            height,
            width,
            channels,
            pixels: vec![0.0; height * width * channels],
            spacing_mm,
            id: SliceId::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pixels.len() != self.height * self.width * self.channels {
            return Err(Error::InvalidShape {
                shape: vec![self.height, self.width, self.channels],
                reason: format!("pixel buffer has {} values", self.pixels.len()),
            });
        }
        if !(self.spacing_mm.0 > 0.0 && self.spacing_mm.1 > 0.0) {
            return Err(Error::invalid("pixel spacing must be positive"));
        }
        if self.pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("slice {}", self.id)));
        }
        Ok(())
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.pixels[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn at_mut(&mut self, row: usize, col: usize, ch: usize) -> &mut f64 {
        &mut self.pixels[(row * self.width + col) * self.channels + ch]
    }

    /// One channel as a row-major plane.
    pub fn channel(&self, ch: usize) -> Vec<f64> {
        self.pixels
            .iter()
            .skip(ch)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn set_channel(&mut self, ch: usize, plane: &[f64]) {
        for (i, v) in plane.iter().enumerate() {
            self.pixels[i * self.channels + ch] = *v;
        }
    }

    /// Same geometry and metadata, new per-channel planes.
    pub(crate) fn map_channels(&self, mut f: impl FnMut(&[f64]) -> (usize, usize, Vec<f64>)) -> Self {
        let mut planes = Vec::with_capacity(self.channels);
        let mut dims = (self.height, self.width);
        for c in 0..self.channels {
            let (h, w, p) = f(&self.channel(c));
            dims = (h, w);
            planes.push(p);
        }
        let mut out = MultiChannelSlice::zeros(dims.0, dims.1, self.channels, self.spacing_mm);
        out.id = self.id;
        for (c, p) in planes.iter().enumerate() {
            out.set_channel(c, p);
        }
        out
    }

    pub fn to_tensor(&self) -> crate::tensor::Tensor {
        crate::tensor::Tensor::new(vec![self.height, self.width, self.channels], self.pixels.clone())
            .expect("consistent slice")
    }
}

/// Per-pixel class indices in {0: background, 1: GM, 2: WM}.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
    pub spacing_mm: (f64, f64),
    pub id: SliceId,
    pub rater: Option<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>, spacing_mm: (f64, f64)) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::InvalidShape {
                shape: vec![height, width],
                reason: format!("label buffer has {} values", labels.len()),
            });
        }
        Ok(Self {
            height,
            width,
            labels,
            spacing_mm,
            id: SliceId::default(),
            rater: None,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8, spacing_mm: (f64, f64)) -> Self {
        Self {
            height,
            width,
            labels: vec![value; height * width],
            spacing_mm,
            id: SliceId::default(),
            rater: None,
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    /// Binary mask of one class.
    pub fn mask(&self, class: u8) -> Vec<bool> {
        self.labels.iter().map(|&l| l == class).collect()
    }

    pub fn count(&self, class: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }

    pub fn same_extent(&self, other: &LabelMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn validate_palette(&self) -> Result<()> {
        match self.labels.iter().find(|&&l| l > WM) {
            Some(bad) => Err(Error::invalid(format!("label value {bad} outside palette"))),
            None => Ok(()),
        }
    }
}

/// `H×W×L` per-class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub probs: Vec<f64>,
}

impl ProbabilityMap {
    /// Arg-max labels; ties go to the lower class index.
    pub fn argmax(&self) -> Vec<u8> {
        self.probs
            .chunks_exact(self.classes)
            .map(|px| {
                let mut best = 0;
                for (c, &v) in px.iter().enumerate() {
                    if v > px[best] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect()
    }

    pub fn to_slice(&self, spacing_mm: (f64, f64), id: SliceId) -> MultiChannelSlice {
        MultiChannelSlice {
            height: self.height,
            width: self.width,
            channels: self.classes,
            pixels: self.probs.clone(),
            spacing_mm,
            id,
        }
    }
}
