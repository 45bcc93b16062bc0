//! Stacked hourglass face alignment network.
//!
//! ```text
//! image ─ stem ─┬─ hourglass ─ 1×1+BN+ReLU ─ features ─ 1×1 ─ heatmaps[0]
//!               │                               │               │
//!               └──────────── + ◄── 1×1 ◄───────┘      1×1 ◄────┘
//!                             │
//!                             └─ next stack ...
//! ```

use serde::{Deserialize, Serialize};

use super::hourglass::{Hourglass, HourglassConfig};
use super::layers::{BatchNorm, Block, BlockConfig, BlockKind, Conv};
use super::params::{seeded_rng, Builder, ParamStore};
use super::session::{Mode, Session};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StemConfig {
    /// Output channels of the 7×7 stride-2 convolution.
    pub channels: usize,
    /// Width of the residual block before the stem's max pooling.
    pub mid_channels: usize,
}

impl Default for StemConfig {
    fn default() -> Self {
        StemConfig {
            channels: 64,
            mid_channels: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FanConfig {
    pub n_stacks: usize,
    pub m_landmarks: usize,
    /// Input image (height, width).
    pub input_hw: (usize, usize),
    /// Heatmap (height, width); the stem reduces the input by 4.
    pub heatmap_hw: (usize, usize),
    pub hourglass: HourglassConfig,
    pub stem: StemConfig,
}

impl Default for FanConfig {
    fn default() -> Self {
        FanConfig {
            n_stacks: 4,
            m_landmarks: 68,
            input_hw: (256, 256),
            heatmap_hw: (64, 64),
            hourglass: HourglassConfig::default(),
            stem: StemConfig::default(),
        }
    }
}

pub const STEM_REDUCTION: usize = 4;

impl FanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_stacks == 0 {
            return Err(Error::Config("n_stacks must be >= 1".into()));
        }
        if self.m_landmarks == 0 {
            return Err(Error::Config("m_landmarks must be >= 1".into()));
        }
        if self.hourglass.block == BlockKind::Identity {
            return Err(Error::Config(
                "identity blocks are a test hook and cannot build a full network".into(),
            ));
        }
        self.hourglass.validate()?;
        let (h, w) = self.input_hw;
        if h % STEM_REDUCTION != 0 || w % STEM_REDUCTION != 0 {
            return Err(Error::Config(format!(
                "input {h}x{w} is not divisible by the stem reduction {STEM_REDUCTION}"
            )));
        }
        let expected = (h / STEM_REDUCTION, w / STEM_REDUCTION);
        if self.heatmap_hw != expected {
            return Err(Error::Config(format!(
                "heatmap_hw {:?} must equal the hourglass working resolution {:?}",
                self.heatmap_hw, expected
            )));
        }
        self.hourglass
            .check_extent(expected.0, expected.1)
            .map_err(|e| Error::Config(e.to_string()))?;
        for (cin, cout) in [
            (self.stem.channels, self.stem.mid_channels),
            (self.stem.mid_channels, self.stem.mid_channels),
            (self.stem.mid_channels, self.hourglass.width),
        ] {
            BlockConfig {
                kind: self.hourglass.block,
                in_channels: cin,
                out_channels: cout,
            }
            .validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Stem {
    conv: Conv,
    bn: BatchNorm,
    blocks: [Block; 3],
}

#[derive(Clone, Debug)]
struct Stack {
    hourglass: Hourglass,
    head_conv: Conv,
    head_bn: BatchNorm,
    heat: Conv,
    /// Present on every stack but the last.
    remap: Option<(Conv, Conv)>,
}

#[derive(Clone, Debug)]
pub struct Fan<T> {
    config: FanConfig,
    stem: Stem,
    stacks: Vec<Stack>,
    pub params: ParamStore<T>,
}

/// Deterministic parameter initialisation for a configuration.
pub fn init_params<T: Real>(config: &FanConfig, seed: u64) -> Result<ParamStore<T>> {
    Ok(Fan::new(config.clone(), seed)?.params)
}

impl<T: Real> Fan<T> {
    pub fn new(config: FanConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = seeded_rng(seed);
        let mut b = Builder::new(&mut params, &mut rng);
        let kind = config.hourglass.block;
        let block = |cin, cout| BlockConfig {
            kind,
            in_channels: cin,
            out_channels: cout,
        };
        let sc = config.stem;
        let width = config.hourglass.width;
        let m = config.m_landmarks;

        let stem = {
            let mut sb = b.scope("stem");
            Stem {
                conv: Conv::build(&mut sb.scope("conv"), 3, sc.channels, 7, 2, 3)?,
                bn: BatchNorm::build(&mut sb.scope("bn"), sc.channels)?,
                blocks: [
                    Block::build(&mut sb.scope("block.0"), block(sc.channels, sc.mid_channels))?,
                    Block::build(&mut sb.scope("block.1"), block(sc.mid_channels, sc.mid_channels))?,
                    Block::build(&mut sb.scope("block.2"), block(sc.mid_channels, width))?,
                ],
            }
        };

        let mut stacks = Vec::with_capacity(config.n_stacks);
        for s in 0..config.n_stacks {
            let mut st = b.scope(format!("stack.{s}"));
            let hourglass = Hourglass::build(&mut st.scope("hg"), config.hourglass)?;
            let head_conv = Conv::build(&mut st.scope("head.conv"), width, width, 1, 1, 0)?;
            let head_bn = BatchNorm::build(&mut st.scope("head.bn"), width)?;
            let heat = Conv::build(&mut st.scope("heat"), width, m, 1, 1, 0)?;
            let remap = if s + 1 < config.n_stacks {
                Some((
                    Conv::build(&mut st.scope("remap_feat"), width, width, 1, 1, 0)?,
                    Conv::build(&mut st.scope("remap_heat"), m, width, 1, 1, 0)?,
                ))
            } else {
                None
            };
            stacks.push(Stack {
                hourglass,
                head_conv,
                head_bn,
                heat,
                remap,
            });
        }
        Ok(Fan {
            config,
            stem,
            stacks,
            params,
        })
    }

    /// Rebuilds the architecture for `config` and adopts `params`, which must
    /// match its manifest exactly.
    pub fn from_params(config: FanConfig, params: ParamStore<T>) -> Result<Self> {
        let mut fan = Fan::new(config, 0)?;
        fan.params.copy_values_from(&params)?;
        Ok(fan)
    }

    pub fn config(&self) -> &FanConfig {
        &self.config
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let (h, w) = self.config.input_hw;
        if shape.len() != 4 || shape[1] != 3 || shape[2] != h || shape[3] != w {
            return Err(Error::Shape(format!(
                "network requires input (N,3,{h},{w}), got {shape:?}"
            )));
        }
        Ok(())
    }

    /// Heatmaps after every stack, in order, each (N, m, H, W).
    pub fn forward(&self, s: &mut Session<T>, image: Var) -> Result<Vec<Var>> {
        self.check_input(s.tape.value(image).shape())?;
        let p = &self.params;
        let stem = &self.stem;
        let mut x = stem.conv.forward(s, p, image)?;
        x = stem.bn.forward(s, p, x)?;
        x = s.tape.relu(x);
        x = stem.blocks[0].forward(s, p, x)?;
        x = s.tape.max_pool2d(x, 2, 2)?;
        x = stem.blocks[1].forward(s, p, x)?;
        x = stem.blocks[2].forward(s, p, x)?;

        let mut outputs = Vec::with_capacity(self.stacks.len());
        for stack in &self.stacks {
            let hg = stack.hourglass.forward(s, p, x)?;
            let mut feat = stack.head_conv.forward(s, p, hg)?;
            feat = stack.head_bn.forward(s, p, feat)?;
            feat = s.tape.relu(feat);
            let heat = stack.heat.forward(s, p, feat)?;
            outputs.push(heat);
            if let Some((remap_feat, remap_heat)) = &stack.remap {
                let f = remap_feat.forward(s, p, feat)?;
                let h = remap_heat.forward(s, p, heat)?;
                let fused = s.tape.add(f, h)?;
                x = s.tape.add(x, fused)?;
            }
        }
        Ok(outputs)
    }

    /// Eval-mode forward pass returning the heatmaps of every stack.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut s = Session::new(Mode::Eval);
        let x = s.input(images.clone());
        let outs = self.forward(&mut s, x)?;
        Ok(outs.into_iter().map(|v| s.tape.value(v).clone()).collect())
    }
}
