//! Encoder-decoder with skip connections and three output branches:
//! segmentation logits, a distance regression map and contour logits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, LabelMap};
use crate::tensor::{ParamId, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Number of 2×2 pooling stages.
    pub depth: usize,
    pub base_channels: usize,
    /// Organs plus background.
    pub num_classes: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 8,
            num_classes: 5,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 || self.base_channels < 1 || self.num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "net config needs depth ≥ 1, base_channels ≥ 1, num_classes ≥ 2; got {self:?}"
            )));
        }
        if self.num_classes > 256 {
            return Err(Error::InvalidArgument("num_classes must not exceed 256".into()));
        }
        if self.depth > 12 {
            return Err(Error::InvalidArgument("depth must not exceed 12".into()));
        }
        Ok(())
    }

    /// Input extents must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }

    fn channels(&self, stage: usize) -> usize {
        self.base_channels << stage
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct Decoder {
    up: ParamId,
    convs: [Conv; 2],
}

#[derive(Clone, Debug)]
struct Layout {
    encoder: Vec<[Conv; 2]>,
    bottleneck: [Conv; 2],
    /// Deepest stage first; the last entry is the shared block feeding the heads.
    decoder: Vec<Decoder>,
    seg_head: Conv,
    dist_head: Conv,
    contour_head: Conv,
}

/// Declares parameters in a fixed order. Values are drawn from `init`.
struct Builder<'a> {
    params: ParamSet,
    init: &'a mut dyn FnMut(&[usize], usize, bool) -> Tensor,
}

impl Builder<'_> {
    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, hidden: bool) -> Conv {
        let shape = [c_out, c_in, k, k];
        let weight = (self.init)(&shape, c_in * k * k, hidden);
        let weight = self.params.add(format!("{name}.weight"), weight);
        let bias = self.params.add(format!("{name}.bias"), Tensor::zeros(&[c_out]));
        Conv { weight, bias }
    }

    fn up(&mut self, name: &str, c_in: usize, c_out: usize) -> ParamId {
        let shape = [c_in, c_out, 2, 2];
        let weight = (self.init)(&shape, c_in, true);
        self.params.add(format!("{name}.weight"), weight)
    }
}

fn build_layout(config: &NetConfig, init: &mut dyn FnMut(&[usize], usize, bool) -> Tensor) -> (ParamSet, Layout) {
    let mut b = Builder {
        params: ParamSet::new(),
        init,
    };
    let mut encoder = Vec::with_capacity(config.depth);
    let mut c_in = 1;
    for stage in 0..config.depth {
        let c = config.channels(stage);
        encoder.push([
            b.conv(&format!("enc{stage}.conv0"), c_in, c, 3, true),
            b.conv(&format!("enc{stage}.conv1"), c, c, 3, true),
        ]);
        c_in = c;
    }
    let cb = config.channels(config.depth);
    let bottleneck = [
        b.conv("bottleneck.conv0", c_in, cb, 3, true),
        b.conv("bottleneck.conv1", cb, cb, 3, true),
    ];
    let mut decoder = Vec::with_capacity(config.depth);
    let mut below = cb;
    for stage in (0..config.depth).rev() {
        let c = config.channels(stage);
        decoder.push(Decoder {
            up: b.up(&format!("dec{stage}.up"), below, c),
            convs: [
                b.conv(&format!("dec{stage}.conv0"), 2 * c, c, 3, true),
                b.conv(&format!("dec{stage}.conv1"), c, c, 3, true),
            ],
        });
        below = c;
    }
    let base = config.base_channels;
    let seg_head = b.conv("head.seg", base, config.num_classes, 1, false);
    let dist_head = b.conv("head.dist", base, 1, 1, false);
    let contour_head = b.conv("head.contour", base, 2, 1, false);
    (
        b.params,
        Layout {
            encoder,
            bottleneck,
            decoder,
            seg_head,
            dist_head,
            contour_head,
        },
    )
}

/// Raw head outputs for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// `L×H×W`
    pub seg_logits: Tensor,
    /// `1×H×W`, no output nonlinearity.
    pub dist: Tensor,
    /// `2×H×W`
    pub contour_logits: Tensor,
}

/// Head outputs recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct PredictionVars {
    pub seg_logits: Var,
    pub dist: Var,
    pub contour_logits: Var,
}

#[derive(Clone, Debug)]
pub struct UNet {
    config: NetConfig,
    seed: u64,
    params: ParamSet,
    layout: Layout,
}

impl UNet {
    /// Fan-in scaled normal initialization (He scaling for layers followed by
    /// a relu, unit-variance scaling for the heads); biases start at zero.
    pub fn build(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |shape: &[usize], fan_in: usize, hidden: bool| {
            let gain = if hidden { 2.0 } else { 1.0 };
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
            Tensor::new(shape.to_vec(), data).expect("shape matches")
        };
        let (params, layout) = build_layout(&config, &mut init);
        Ok(Self {
            config,
            seed,
            params,
            layout,
        })
    }

    /// Rebuild a model from stored parameters, checking names and shapes
    /// against the architecture implied by `config`.
    pub fn from_params(config: NetConfig, seed: u64, stored: ParamSet) -> Result<Self> {
        config.validate()?;
        let mut zeros = |shape: &[usize], _: usize, _: bool| Tensor::zeros(shape);
        let (expected, layout) = build_layout(&config, &mut zeros);
        if expected.len() != stored.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters for {config:?}, found {}",
                expected.len(),
                stored.len()
            )));
        }
        for (e, s) in expected.iter().zip(stored.iter()) {
            if e.name() != s.name() || e.value().shape() != s.value().shape() {
                return Err(Error::InvalidArgument(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    s.name(),
                    s.value().shape(),
                    e.name(),
                    e.value().shape()
                )));
            }
        }
        Ok(Self {
            config,
            seed,
            params: stored,
            layout,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn check_input(&self, image: &Tensor) -> Result<(usize, usize)> {
        let (c, h, w) = image.dims3()?;
        let m = self.config.spatial_multiple();
        if c != 1 || h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::InvalidShape(format!(
                "input must be 1×H×W with H, W positive multiples of {m}; got {:?}",
                image.shape()
            )));
        }
        Ok((h, w))
    }

    fn conv_relu(&self, tape: &mut Tape, x: Var, conv: Conv) -> Result<Var> {
        let y = self.conv(tape, x, conv)?;
        Ok(tape.relu(y))
    }

    fn conv(&self, tape: &mut Tape, x: Var, conv: Conv) -> Result<Var> {
        let w = tape.param(&self.params, conv.weight);
        let b = tape.param(&self.params, conv.bias);
        tape.conv2d(x, w, b)
    }

    /// Record a forward pass of `image` (a tape leaf) on `tape`.
    pub fn forward_on_tape(&self, tape: &mut Tape, image: Var) -> Result<PredictionVars> {
        self.check_input(tape.value(image))?;
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut x = image;
        for [c0, c1] in &self.layout.encoder {
            x = self.conv_relu(tape, x, *c0)?;
            x = self.conv_relu(tape, x, *c1)?;
            skips.push(x);
            x = tape.max_pool2(x)?;
        }
        let [b0, b1] = self.layout.bottleneck;
        x = self.conv_relu(tape, x, b0)?;
        x = self.conv_relu(tape, x, b1)?;
        for stage in &self.layout.decoder {
            let w = tape.param(&self.params, stage.up);
            let up = tape.up_conv2(x, w)?;
            let skip = skips.pop().expect("one skip per stage");
            x = tape.concat(skip, up)?;
            x = self.conv_relu(tape, x, stage.convs[0])?;
            x = self.conv_relu(tape, x, stage.convs[1])?;
        }
        Ok(PredictionVars {
            seg_logits: self.conv(tape, x, self.layout.seg_head)?,
            dist: self.conv(tape, x, self.layout.dist_head)?,
            contour_logits: self.conv(tape, x, self.layout.contour_head)?,
        })
    }

    pub fn forward(&self, image: &Tensor) -> Result<Prediction> {
        let mut tape = Tape::new();
        let x = tape.leaf(image.clone());
        let out = self.forward_on_tape(&mut tape, x)?;
        Ok(Prediction {
            seg_logits: tape.value(out.seg_logits).clone(),
            dist: tape.value(out.dist).clone(),
            contour_logits: tape.value(out.contour_logits).clone(),
        })
    }

    /// Hard segmentation of one image.
    pub fn segment(&self, image: &Tensor) -> Result<LabelMap> {
        predict_labels(&self.forward(image)?.seg_logits)
    }
}

/// Per-pixel argmax over classes; ties go to the smaller class id.
pub fn predict_labels(seg_logits: &Tensor) -> Result<LabelMap> {
    let (l, h, w) = seg_logits.dims3()?;
    if !(2..=256).contains(&l) {
        return Err(Error::InvalidArgument(format!("need 2..=256 classes, got {l}")));
    }
    let hw = h * w;
    let d = seg_logits.data();
    let ids = (0..hw)
        .map(|px| {
            let mut best = 0;
            for c in 1..l {
                if d[c * hw + px] > d[best * hw + px] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(Grid::new(h, w, ids)?, l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_configs_rejected() {
        for bad in [
            NetConfig { depth: 0, ..NetConfig::default() },
            NetConfig { base_channels: 0, ..NetConfig::default() },
            NetConfig { num_classes: 1, ..NetConfig::default() },
        ] {
            assert!(matches!(UNet::build(bad, 0), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn argmax_ties_prefer_smaller_class() {
        let logits = Tensor::new(vec![3, 1, 2], vec![0.0, 5.0, 2.0, 1.0, 2.0, 1.0]).unwrap();
        assert_eq!(predict_labels(&logits).unwrap().labels(), &[1, 0]);
    }

    #[test]
    fn from_params_rejects_foreign_layout() {
        let a = UNet::build(NetConfig { depth: 1, base_channels: 2, num_classes: 3 }, 1).unwrap();
        let other = NetConfig { depth: 1, base_channels: 3, num_classes: 3 };
        assert!(UNet::from_params(other, 1, a.params().clone()).is_err());
        assert!(UNet::from_params(*a.config(), 1, a.params().clone()).is_ok());
    }
}
