//! Layer primitives and the residual block variants.

use serde::{Deserialize, Serialize};

use super::params::{Builder, ParamId, ParamStore};
use super::session::Session;
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    pub fn build<T: Real>(
        b: &mut Builder<'_, T>,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = cin * kernel * kernel;
        Ok(Conv {
            weight: b.fan_in_uniform("weight", &[cout, cin, kernel, kernel], fan_in)?,
            bias: b.constant("bias", &[cout], 0.0, true)?,
            stride,
            padding,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = s.param(p, self.weight);
        let b = s.param(p, self.bias);
        s.tape.conv2d(x, w, Some(b), self.stride, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: b.constant("gamma", &[channels], 1.0, true)?,
            beta: b.constant("beta", &[channels], 0.0, true)?,
            running_mean: b.constant("running_mean", &[channels], 0.0, false)?,
            running_var: b.constant("running_var", &[channels], 1.0, false)?,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let gamma = s.param(p, self.gamma);
        let beta = s.param(p, self.beta);
        let eps = s.bn_eps();
        if s.is_train() {
            let (y, moments) = s.tape.batch_norm_train(x, gamma, beta, eps)?;
            s.record_moments(self.running_mean, self.running_var, moments);
            Ok(y)
        } else {
            let mean = p.get(self.running_mean).tensor.data();
            let var = p.get(self.running_var).tensor.data();
            s.tape.batch_norm_eval(x, gamma, beta, mean, var, eps)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, fin: usize, fout: usize) -> Result<Self> {
        Ok(Linear {
            weight: b.fan_in_uniform("weight", &[fout, fin], fin)?,
            bias: b.constant("bias", &[fout], 0.0, true)?,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = s.param(p, self.weight);
        let b = s.param(p, self.bias);
        s.tape.linear(x, w, Some(b))
    }
}

/// BN → ReLU → conv.
#[derive(Clone, Debug)]
pub struct PreActConv {
    pub bn: BatchNorm,
    pub conv: Conv,
}

impl PreActConv {
    pub fn build<T: Real>(
        b: &mut Builder<'_, T>,
        cin: usize,
        cout: usize,
        kernel: usize,
    ) -> Result<Self> {
        Ok(PreActConv {
            bn: BatchNorm::build(&mut b.scope("bn"), cin)?,
            conv: Conv::build(&mut b.scope("conv"), cin, cout, kernel, 1, kernel / 2)?,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.bn.forward(s, p, x)?;
        let y = s.tape.relu(y);
        self.conv.forward(s, p, y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Bottleneck,
    /// Hierarchical, parallel and multi-scale block.
    Hpm,
    /// Passes its input through unchanged. Only for structural tests of the
    /// hourglass wiring; requires equal input and output widths.
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config(format!("block channels must be >= 1: {self:?}")));
        }
        match self.kind {
            BlockKind::Hpm if !self.out_channels.is_multiple_of(4) => Err(Error::Config(format!(
                "hpm block needs output channels divisible by 4, got {}",
                self.out_channels
            ))),
            BlockKind::Bottleneck if self.out_channels < 2 => Err(Error::Config(
                "bottleneck block needs at least 2 output channels".into(),
            )),
            BlockKind::Identity if self.in_channels != self.out_channels => Err(Error::Config(
                "identity block needs equal input and output channels".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Residual block: `skip(x) + f(x)`, with `skip` the identity when the widths
/// match and a 1×1 convolution otherwise.
#[derive(Clone, Debug)]
pub struct Block {
    pub config: BlockConfig,
    /// Three pre-activated convolutions. For a bottleneck they run in
    /// sequence (1×1, 3×3, 1×1); for an hpm block they are three chained 3×3
    /// paths whose outputs are concatenated.
    pub stages: Vec<PreActConv>,
    pub skip: Option<Conv>,
}

impl Block {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, config: BlockConfig) -> Result<Self> {
        config.validate()?;
        let (cin, cout) = (config.in_channels, config.out_channels);
        let stages = match config.kind {
            BlockKind::Bottleneck => {
                let mid = cout / 2;
                vec![
                    PreActConv::build(&mut b.scope("conv1"), cin, mid, 1)?,
                    PreActConv::build(&mut b.scope("conv2"), mid, mid, 3)?,
                    PreActConv::build(&mut b.scope("conv3"), mid, cout, 1)?,
                ]
            }
            BlockKind::Hpm => {
                let (w1, w2, w3) = hpm_widths(cout);
                vec![
                    PreActConv::build(&mut b.scope("path1"), cin, w1, 3)?,
                    PreActConv::build(&mut b.scope("path2"), w1, w2, 3)?,
                    PreActConv::build(&mut b.scope("path3"), w2, w3, 3)?,
                ]
            }
            BlockKind::Identity => Vec::new(),
        };
        let skip = if cin != cout && config.kind != BlockKind::Identity {
            Some(Conv::build(&mut b.scope("skip"), cin, cout, 1, 1, 0)?)
        } else {
            None
        };
        Ok(Block {
            config,
            stages,
            skip,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let cin = s.tape.value(x).shape().get(1).copied().unwrap_or(0);
        if cin != self.config.in_channels {
            return Err(Error::Shape(format!(
                "block expects {} input channels, got input {:?}",
                self.config.in_channels,
                s.tape.value(x).shape()
            )));
        }
        let residual = match self.config.kind {
            BlockKind::Identity => return Ok(x),
            BlockKind::Bottleneck => {
                let mut y = x;
                for stage in &self.stages {
                    y = stage.forward(s, p, y)?;
                }
                y
            }
            BlockKind::Hpm => {
                let p1 = self.stages[0].forward(s, p, x)?;
                let p2 = self.stages[1].forward(s, p, p1)?;
                let p3 = self.stages[2].forward(s, p, p2)?;
                s.tape.concat_channels(&[p1, p2, p3])?
            }
        };
        let skip = match &self.skip {
            Some(conv) => conv.forward(s, p, x)?,
            None => x,
        };
        s.tape.add(skip, residual)
    }
}

/// Output widths of the three hpm paths: C'/2, C'/4, C'/4.
pub fn hpm_widths(out_channels: usize) -> (usize, usize, usize) {
    (out_channels / 2, out_channels / 4, out_channels / 4)
}

/// Closed-form count of scalar parameters (trainable plus running
/// statistics) in one block.
pub fn block_param_count(config: &BlockConfig) -> usize {
    let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout;
    let bn = |c: usize| 4 * c;
    let (cin, cout) = (config.in_channels, config.out_channels);
    let body = match config.kind {
        BlockKind::Identity => return 0,
        BlockKind::Bottleneck => {
            let mid = cout / 2;
            bn(cin) + conv(cin, mid, 1) + bn(mid) + conv(mid, mid, 3) + bn(mid) + conv(mid, cout, 1)
        }
        BlockKind::Hpm => {
            let (w1, w2, w3) = hpm_widths(cout);
            bn(cin) + conv(cin, w1, 3) + bn(w1) + conv(w1, w2, 3) + bn(w2) + conv(w2, w3, 3)
        }
    };
    body + if cin != cout { conv(cin, cout, 1) } else { 0 }
}
