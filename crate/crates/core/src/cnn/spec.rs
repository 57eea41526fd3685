use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STANDARD_DEPTH: usize = 10;
pub const DEFAULT_WIDTH: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resample {
    None,
    Down2,
    Up2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

/// One 3×3 convolution with zero padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub resample: Resample,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_channels: usize, out_channels: usize, resample: Resample, activation: Activation) -> Self {
        Self {
            in_channels,
            out_channels,
            resample,
            activation,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * 9
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.out_channels
    }
}

/// Layer list plus additive skips. A pair `(i, j)` (0-based) adds the
/// pre-activation of layer `i` into the pre-activation of layer `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub skip_pairs: Vec<(usize, usize)>,
}

impl NetworkSpec {
    /// The ten-layer encoder-decoder with base width `w`:
    /// `2→w, w→w↓, w→2w, 2w→2w↓, 2w→4w | 4w→2w, 2w→2w↑, 2w→w, w→w↑, w→1`.
    /// Layer `i` of the down track feeds layer `10 − i` (1-based), the first
    /// up-track layer working at its resolution and width.
    pub fn standard(w: usize) -> Self {
        use Activation::*;
        use Resample::*;
        let l = LayerSpec::new;
        Self {
            layers: vec![
                l(2, w, None, Relu),
                l(w, w, Down2, Relu),
                l(w, 2 * w, None, Relu),
                l(2 * w, 2 * w, Down2, Relu),
                l(2 * w, 4 * w, None, Relu),
                l(4 * w, 2 * w, None, Relu),
                l(2 * w, 2 * w, Up2, Relu),
                l(2 * w, w, None, Relu),
                l(w, w, Up2, Relu),
                l(w, 1, None, Linear),
            ],
            skip_pairs: vec![(0, 8), (1, 7), (2, 6), (3, 5)],
        }
    }

    pub fn param_len(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_len).sum()
    }

    pub fn in_channels(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_channels)
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_channels)
    }

    /// Log2 of each layer's output resolution relative to the input.
    fn scales(&self) -> Vec<i32> {
        let mut s = 0;
        self.layers
            .iter()
            .map(|l| {
                match l.resample {
                    Resample::Down2 => s -= 1,
                    Resample::Up2 => s += 1,
                    Resample::None => {}
                }
                s
            })
            .collect()
    }

    /// Spatial dims must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        let deepest = self.scales().into_iter().min().unwrap_or(0).min(0);
        1 << (-deepest) as u32
    }

    /// Structural consistency: channel chain, skip shapes, output scale.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Shape(m));
        if self.layers.is_empty() {
            return bad("network has no layers".into());
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_channels != pair[1].in_channels {
                return bad(format!("layer {} outputs {} channels, layer {} expects {}", i, pair[0].out_channels, i + 1, pair[1].in_channels));
            }
        }
        if self.layers.iter().any(|l| l.in_channels == 0 || l.out_channels == 0) {
            return bad("layers need at least one channel".into());
        }
        let scales = self.scales();
        if *scales.last().expect("non-empty") != 0 {
            return bad("output resolution differs from input".into());
        }
        if scales.iter().any(|&s| s > 0) {
            return bad("network upsamples above the input resolution".into());
        }
        for &(i, j) in &self.skip_pairs {
            if i >= j || j >= self.layers.len() {
                return bad(format!("skip ({i}, {j}) must point forward inside the network"));
            }
            if self.layers[i].out_channels != self.layers[j].out_channels || scales[i] != scales[j] {
                return bad(format!("skip ({i}, {j}) joins tensors of different shape"));
            }
        }
        Ok(())
    }

    /// The constraints of the standard architecture on top of [`validate`](Self::validate).
    pub fn validate_standard(&self) -> Result<()> {
        self.validate()?;
        let bad = |m: &str| Err(Error::Shape(m.to_string()));
        if self.layers.len() != STANDARD_DEPTH {
            return bad("standard network has exactly 10 convolutional layers");
        }
        if self.in_channels() != 2 || self.out_channels() != 1 {
            return bad("standard network maps 2 channels to 1");
        }
        if self.layers.last().map(|l| l.activation) != Some(Activation::Linear) {
            return bad("final layer must be linear");
        }
        if self.skip_pairs.len() != 4 {
            return bad("standard network has 4 symmetric skips");
        }
        for &(i, j) in &self.skip_pairs {
            if i >= 4 || i + j != 8 {
                return bad("skips must pair down layer i with up layer 10 - i (1-based)");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_is_valid() {
        for w in [1, 2, 16, 32] {
            let s = NetworkSpec::standard(w);
            s.validate_standard().unwrap();
            assert_eq!(s.size_multiple(), 4);
        }
    }

    #[test]
    fn parameter_count() {
        let s = NetworkSpec::standard(16);
        let w = 16usize;
        let convs = [2 * w, w * w, 2 * w * w, 4 * w * w, 8 * w * w, 8 * w * w, 4 * w * w, 2 * w * w, w * w, w];
        let biases = [w, w, 2 * w, 2 * w, 4 * w, 2 * w, 2 * w, w, w, 1];
        let expect: usize = convs.iter().map(|c| 9 * c).sum::<usize>() + biases.iter().sum::<usize>();
        assert_eq!(s.param_len(), expect);
    }

    #[test]
    fn rejects_mismatched_skip() {
        let mut s = NetworkSpec::standard(4);
        s.skip_pairs[0] = (0, 9);
        assert!(matches!(s.validate(), Err(Error::Shape(_))));
        let mut s = NetworkSpec::standard(4);
        s.layers[3].in_channels = 5;
        assert!(s.validate().is_err());
    }
}
