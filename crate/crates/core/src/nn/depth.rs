//! Depth lifting network: image and per-landmark heatmaps in, one depth
//! value per landmark out.

use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm, Block, BlockConfig, BlockKind, Conv, Linear};
use super::params::{seeded_rng, Builder, ParamStore};
use super::session::{Mode, Session};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub width: usize,
    pub blocks: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthNetConfig {
    pub n_landmarks: usize,
    /// RGB plus one heatmap per landmark.
    pub input_channels: usize,
    pub input_hw: (usize, usize),
    /// Each stage halves the resolution with a stride-2 convolution and
    /// then applies `blocks` bottleneck blocks.
    pub tower: Vec<StageConfig>,
    pub output_dim: usize,
}

impl Default for DepthNetConfig {
    fn default() -> Self {
        DepthNetConfig::for_landmarks(68, (256, 256))
    }
}

impl DepthNetConfig {
    pub fn for_landmarks(n: usize, input_hw: (usize, usize)) -> Self {
        DepthNetConfig {
            n_landmarks: n,
            input_channels: 3 + n,
            input_hw,
            tower: [32, 64, 128, 256]
                .into_iter()
                .map(|width| StageConfig { width, blocks: 2 })
                .collect(),
            output_dim: n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_landmarks == 0 {
            return Err(Error::Config("depth network needs n_landmarks >= 1".into()));
        }
        if self.input_channels != 3 + self.n_landmarks {
            return Err(Error::Config(format!(
                "depth network input_channels must be 3 + n_landmarks = {}, got {}",
                3 + self.n_landmarks,
                self.input_channels
            )));
        }
        if self.output_dim != self.n_landmarks {
            return Err(Error::Config(format!(
                "depth network output_dim must equal n_landmarks ({}), got {}",
                self.n_landmarks, self.output_dim
            )));
        }
        if self.tower.is_empty() {
            return Err(Error::Config("depth tower needs at least one stage".into()));
        }
        for st in &self.tower {
            BlockConfig {
                kind: BlockKind::Bottleneck,
                in_channels: st.width,
                out_channels: st.width,
            }
            .validate()?;
        }
        if self.input_hw.0 == 0 || self.input_hw.1 == 0 {
            return Err(Error::Config("depth network input extent must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Stage {
    down: Conv,
    down_bn: BatchNorm,
    blocks: Vec<Block>,
}

#[derive(Clone, Debug)]
pub struct DepthNet<T> {
    config: DepthNetConfig,
    stages: Vec<Stage>,
    final_bn: BatchNorm,
    head: Linear,
    pub params: ParamStore<T>,
}

impl<T: Real> DepthNet<T> {
    pub fn new(config: DepthNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = seeded_rng(seed);
        let mut b = Builder::new(&mut params, &mut rng);
        let mut stages = Vec::new();
        let mut cin = config.input_channels;
        for (i, st) in config.tower.iter().enumerate() {
            let mut sb = b.scope(format!("tower.{i}"));
            let down = Conv::build(&mut sb.scope("down.conv"), cin, st.width, 3, 2, 1)?;
            let down_bn = BatchNorm::build(&mut sb.scope("down.bn"), st.width)?;
            let blocks = (0..st.blocks)
                .map(|j| {
                    Block::build(
                        &mut sb.scope(format!("block.{j}")),
                        BlockConfig {
                            kind: BlockKind::Bottleneck,
                            in_channels: st.width,
                            out_channels: st.width,
                        },
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(Stage {
                down,
                down_bn,
                blocks,
            });
            cin = st.width;
        }
        let final_bn = BatchNorm::build(&mut b.scope("final_bn"), cin)?;
        let head = Linear::build(&mut b.scope("head"), cin, config.output_dim)?;
        Ok(DepthNet {
            config,
            stages,
            final_bn,
            head,
            params,
        })
    }

    pub fn from_params(config: DepthNetConfig, params: ParamStore<T>) -> Result<Self> {
        let mut net = DepthNet::new(config, 0)?;
        net.params.copy_values_from(&params)?;
        Ok(net)
    }

    pub fn config(&self) -> &DepthNetConfig {
        &self.config
    }

    /// `image` is (N,3,H,W); `heatmaps` is (N,Nl,H,W), already resampled to
    /// the image resolution. Returns (N,Nl) depths.
    pub fn forward(&self, s: &mut Session<T>, image: Var, heatmaps: Var) -> Result<Var> {
        let img = s.tape.value(image).shape().to_vec();
        let hm = s.tape.value(heatmaps).shape().to_vec();
        let (h, w) = self.config.input_hw;
        if img.len() != 4 || img[1] != 3 || img[2] != h || img[3] != w {
            return Err(Error::Shape(format!(
                "depth network requires image (N,3,{h},{w}), got {img:?}"
            )));
        }
        if hm.len() != 4 || hm[1] != self.config.n_landmarks {
            return Err(Error::Shape(format!(
                "depth network configured for {} landmarks got heatmaps {:?}",
                self.config.n_landmarks, hm
            )));
        }
        if hm[0] != img[0] || hm[2] != h || hm[3] != w {
            return Err(Error::Shape(format!(
                "heatmaps {hm:?} must be resampled to the image resolution {img:?}"
            )));
        }
        let p = &self.params;
        let mut x = s.tape.concat_channels(&[image, heatmaps])?;
        for stage in &self.stages {
            x = stage.down.forward(s, p, x)?;
            x = stage.down_bn.forward(s, p, x)?;
            x = s.tape.relu(x);
            for block in &stage.blocks {
                x = block.forward(s, p, x)?;
            }
        }
        x = self.final_bn.forward(s, p, x)?;
        x = s.tape.relu(x);
        let pooled = s.tape.global_avg_pool(x)?;
        self.head.forward(s, p, pooled)
    }

    pub fn predict(&self, image: &Tensor<T>, heatmaps: &Tensor<T>) -> Result<Tensor<T>> {
        let mut s = Session::new(Mode::Eval);
        let i = s.input(image.clone());
        let h = s.input(heatmaps.clone());
        let out = self.forward(&mut s, i, h)?;
        Ok(s.tape.value(out).clone())
    }
}

/// Nearest-neighbour resampling of heatmaps to the image resolution.
pub fn heatmaps_to_image_resolution<T: Real>(
    heatmaps: &Tensor<T>,
    image_hw: (usize, usize),
) -> Result<Tensor<T>> {
    let (_, _, h, w) = heatmaps.dims4()?;
    if h == 0 || !image_hw.0.is_multiple_of(h) || !image_hw.1.is_multiple_of(w) || image_hw.0 / h != image_hw.1 / w {
        return Err(Error::Shape(format!(
            "cannot resample {h}x{w} heatmaps to {}x{} by an integer factor",
            image_hw.0, image_hw.1
        )));
    }
    ops::upsample_nearest(heatmaps, image_hw.0 / h)
}
