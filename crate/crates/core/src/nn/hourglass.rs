use serde::{Deserialize, Serialize};

use super::layers::{Block, BlockConfig, BlockKind};
use super::params::{Builder, ParamStore};
use super::session::Session;
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HourglassConfig {
    /// Number of pooling levels.
    pub depth: usize,
    /// Feature channels, constant through the hourglass.
    pub width: usize,
    pub block: BlockKind,
}

impl Default for HourglassConfig {
    fn default() -> Self {
        HourglassConfig {
            depth: 4,
            width: 256,
            block: BlockKind::Hpm,
        }
    }
}

impl HourglassConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("hourglass depth must be >= 1".into()));
        }
        self.block_config().validate()
    }

    pub fn block_config(&self) -> BlockConfig {
        BlockConfig {
            kind: self.block,
            in_channels: self.width,
            out_channels: self.width,
        }
    }

    /// Spatial extents must be divisible by `2^depth`.
    pub fn check_extent(&self, h: usize, w: usize) -> Result<()> {
        let d = 1usize << self.depth;
        if h == 0 || w == 0 || !h.is_multiple_of(d) || !w.is_multiple_of(d) {
            return Err(Error::Shape(format!(
                "hourglass of depth {} needs spatial extents divisible by {}, got {}x{}",
                self.depth, d, h, w
            )));
        }
        Ok(())
    }
}

/// One resolution level:
/// `up(inner(down(maxpool(x))))` upsampled and added to `branch(x)`.
#[derive(Clone, Debug)]
struct Level {
    branch: Block,
    down: Block,
    inner: Inner,
    up: Block,
}

#[derive(Clone, Debug)]
enum Inner {
    Level(Box<Level>),
    Bottom(Block),
}

#[derive(Clone, Debug)]
pub struct Hourglass {
    pub config: HourglassConfig,
    top: Level,
}

impl Hourglass {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, config: HourglassConfig) -> Result<Self> {
        config.validate()?;
        let top = build_level(b, &config, config.depth)?;
        Ok(Hourglass { config, top })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let shape = s.tape.value(x).shape().to_vec();
        if shape.len() != 4 || shape[1] != self.config.width {
            return Err(Error::Shape(format!(
                "hourglass of width {} got input {:?}",
                self.config.width, shape
            )));
        }
        self.config.check_extent(shape[2], shape[3])?;
        level_forward(&self.top, s, p, x)
    }
}

fn build_level<T: Real>(
    b: &mut Builder<'_, T>,
    config: &HourglassConfig,
    remaining: usize,
) -> Result<Level> {
    let level = config.depth - remaining;
    let mut lb = b.scope(format!("level.{level}"));
    let bc = config.block_config();
    let branch = Block::build(&mut lb.scope("branch"), bc)?;
    let down = Block::build(&mut lb.scope("down"), bc)?;
    let inner = if remaining > 1 {
        Inner::Level(Box::new(build_level(b, config, remaining - 1)?))
    } else {
        Inner::Bottom(Block::build(&mut lb.scope("bottom"), bc)?)
    };
    let up = Block::build(&mut b.scope(format!("level.{level}")).scope("up"), bc)?;
    Ok(Level {
        branch,
        down,
        inner,
        up,
    })
}

fn level_forward<T: Real>(l: &Level, s: &mut Session<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
    let branch = l.branch.forward(s, p, x)?;
    let pooled = s.tape.max_pool2d(x, 2, 2)?;
    let mut main = l.down.forward(s, p, pooled)?;
    main = match &l.inner {
        Inner::Level(next) => level_forward(next, s, p, main)?,
        Inner::Bottom(block) => block.forward(s, p, main)?,
    };
    main = l.up.forward(s, p, main)?;
    let up = s.tape.upsample_nearest(main, 2)?;
    s.tape.add(up, branch)
}
