use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    /// Super-resolution by an integer scale.
    Sr,
    /// Additive Gaussian noise removal.
    Denoise,
    /// Compression artifact reduction.
    Car,
}

impl Task {
    pub fn code(self) -> u32 {
        match self {
            Task::Sr => 0,
            Task::Denoise => 1,
            Task::Car => 2,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Task::Sr),
            1 => Ok(Task::Denoise),
            2 => Ok(Task::Car),
            _ => Err(Error::invalid(format!("unknown task code {code}"))),
        }
    }

    /// Same-resolution tasks predict a residual added back onto the input.
    pub fn is_residual(self) -> bool {
        !matches!(self, Task::Sr)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Sr => "sr",
            Task::Denoise => "denoise",
            Task::Car => "car",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sr" => Ok(Task::Sr),
            "denoise" => Ok(Task::Denoise),
            "car" => Ok(Task::Car),
            _ => Err(Error::invalid(format!(
                "unknown task '{s}' (expected sr, denoise or car)"
            ))),
        }
    }
}

/// Super-resolution head variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Upsampler {
    /// conv C→F + LeakyReLU, then conv→pixel-shuffle stages (two ×2 stages
    /// for ×4), then conv F→out.
    PixelShuffle,
    /// A single conv C→r²·out followed by one pixel shuffle.
    PixelShuffleDirect,
}

impl Upsampler {
    pub fn code(self) -> u32 {
        match self {
            Upsampler::PixelShuffle => 0,
            Upsampler::PixelShuffleDirect => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Upsampler::PixelShuffle),
            1 => Ok(Upsampler::PixelShuffleDirect),
            _ => Err(Error::invalid(format!("unknown upsampler code {code}"))),
        }
    }
}

impl fmt::Display for Upsampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Upsampler::PixelShuffle => "pixelshuffle",
            Upsampler::PixelShuffleDirect => "pixelshuffledirect",
        })
    }
}

impl FromStr for Upsampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixelshuffle" => Ok(Upsampler::PixelShuffle),
            "pixelshuffledirect" => Ok(Upsampler::PixelShuffleDirect),
            _ => Err(Error::invalid(format!(
                "unknown upsampler '{s}' (expected pixelshuffle or pixelshuffledirect)"
            ))),
        }
    }
}

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SwinIRConfig {
    /// Residual Swin Transformer blocks (K).
    pub num_blocks: usize,
    /// Swin layers per block (L).
    pub layers_per_block: usize,
    /// Attention window side (M).
    pub window: usize,
    /// Feature channels (C).
    pub channels: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub task: Task,
    pub scale: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub upsampler: Upsampler,
    /// Width of the pre-upsampling feature for [`Upsampler::PixelShuffle`].
    pub num_feat: usize,
    /// Block-level skip around each RSTB; off reproduces the "no residual"
    /// ablation.
    pub block_residual: bool,
}

impl SwinIRConfig {
    /// The full-size classical super-resolution model.
    pub fn classical_sr(scale: usize) -> Self {
        Self {
            num_blocks: 6,
            layers_per_block: 6,
            window: 8,
            channels: 180,
            heads: 6,
            mlp_ratio: 2,
            task: Task::Sr,
            scale,
            in_channels: 3,
            out_channels: 3,
            upsampler: Upsampler::PixelShuffle,
            num_feat: 64,
            block_residual: true,
        }
    }

    /// Reduced model for lightweight super-resolution.
    pub fn lightweight_sr(scale: usize) -> Self {
        Self {
            num_blocks: 4,
            channels: 60,
            upsampler: Upsampler::PixelShuffleDirect,
            ..Self::classical_sr(scale)
        }
    }

    pub fn denoise(in_channels: usize) -> Self {
        Self {
            task: Task::Denoise,
            scale: 1,
            in_channels,
            out_channels: in_channels,
            ..Self::classical_sr(1)
        }
    }

    /// Compression artifact reduction uses a 7×7 window.
    pub fn car(in_channels: usize) -> Self {
        Self {
            task: Task::Car,
            window: 7,
            ..Self::denoise(in_channels)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.channels == 0 {
            return bad("channels must be positive".into());
        }
        if self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return bad(format!(
                "heads ({}) must divide channels ({})",
                self.heads, self.channels
            ));
        }
        if self.window == 0 {
            return bad("window must be positive".into());
        }
        if self.num_blocks > 0 && self.layers_per_block == 0 {
            return bad("layers_per_block must be positive".into());
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio must be positive".into());
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("in/out channel counts must be positive".into());
        }
        match self.task {
            Task::Sr if !(2..=4).contains(&self.scale) => {
                return bad(format!("sr needs scale 2, 3 or 4, got {}", self.scale))
            }
            Task::Denoise | Task::Car if self.scale != 1 => {
                return bad(format!("{} needs scale 1, got {}", self.task, self.scale))
            }
            Task::Denoise | Task::Car if self.in_channels != self.out_channels => {
                return bad(format!("{} needs equal in/out channels", self.task))
            }
            _ => {}
        }
        if self.task == Task::Sr && self.upsampler == Upsampler::PixelShuffle && self.num_feat == 0 {
            return bad("num_feat must be positive".into());
        }
        Ok(())
    }

    /// Cyclic shift of layer `j` inside a block: 0 for even, `⌊M/2⌋` for odd.
    pub fn shift_for_layer(&self, j: usize) -> usize {
        if j % 2 == 1 {
            self.window / 2
        } else {
            0
        }
    }

    /// Pixel-shuffle factors of the SR head, in application order.
    pub fn upsample_stages(&self) -> Vec<usize> {
        match (self.task, self.upsampler, self.scale) {
            (Task::Sr, Upsampler::PixelShuffle, 4) => vec![2, 2],
            (Task::Sr, _, r) => vec![r],
            _ => Vec::new(),
        }
    }
}
