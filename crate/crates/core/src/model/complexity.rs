//! Closed-form parameter and multiply-accumulate counts.

use crate::error::{Error, Result};

use super::config::{SwinIRConfig, Task, Upsampler};

fn conv3x3(cin: usize, cout: usize) -> usize {
    cout * cin * 9 + cout
}

/// Learnable scalars in one Swin layer.
fn stl_params(cfg: &SwinIRConfig) -> usize {
    let c = cfg.channels;
    let hidden = cfg.mlp_ratio * c;
    let span = 2 * cfg.window - 1;
    let norms = 2 * (2 * c);
    let projections = 4 * (c * c + c);
    let table = span * span * cfg.heads;
    let mlp = (c * hidden + hidden) + (hidden * c + c);
    norms + projections + table + mlp
}

/// Exact number of learnable scalars for `cfg`.
pub fn param_count(cfg: &SwinIRConfig) -> Result<u64> {
    cfg.validate()?;
    let c = cfg.channels;
    let mut total = conv3x3(cfg.in_channels, c);
    total += cfg.num_blocks * (cfg.layers_per_block * stl_params(cfg) + conv3x3(c, c));
    total += conv3x3(c, c);
    total += match (cfg.task, cfg.upsampler) {
        (Task::Sr, Upsampler::PixelShuffle) => {
            let f = cfg.num_feat;
            let stages: usize = cfg.upsample_stages().iter().map(|&r| conv3x3(f, r * r * f)).sum();
            conv3x3(c, f) + stages + conv3x3(f, cfg.out_channels)
        }
        (Task::Sr, Upsampler::PixelShuffleDirect) => conv3x3(c, cfg.scale * cfg.scale * cfg.out_channels),
        _ => conv3x3(c, cfg.out_channels),
    };
    Ok(total as u64)
}

/// Multiply-accumulate counts of one forward pass, split by source.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MultAdds {
    /// All 3×3 convolutions, including the reconstruction head.
    pub convolutions: u64,
    /// Q/K/V/output projections and MLP layers.
    pub projections: u64,
    /// `QKᵀ` and `AV` products inside the windows.
    pub attention: u64,
}

impl MultAdds {
    /// Parametric layers only: convolutions and projections.
    pub fn parametric(&self) -> u64 {
        self.convolutions + self.projections
    }

    pub fn total(&self) -> u64 {
        self.parametric() + self.attention
    }
}

/// Per-source counts for producing an `out_height × out_width` output.
/// The network input is the output divided by the scale (floored).
pub fn mult_adds_breakdown(cfg: &SwinIRConfig, out_height: usize, out_width: usize) -> Result<MultAdds> {
    cfg.validate()?;
    if out_height == 0 || out_width == 0 {
        return Err(Error::invalid("output resolution must be positive"));
    }
    let r = cfg.scale;
    let (h, w) = (out_height / r, out_width / r);
    if h == 0 || w == 0 {
        return Err(Error::invalid(format!(
            "{out_height}x{out_width} is smaller than one input pixel at scale {r}"
        )));
    }
    let lq = (h * w) as u64;
    let c = cfg.channels as u64;
    let k = 9u64;
    let layers = (cfg.num_blocks * cfg.layers_per_block) as u64;
    let tokens_per_window = (cfg.window * cfg.window) as u64;
    let hidden = cfg.mlp_ratio as u64 * c;

    let mut conv = lq * k * cfg.in_channels as u64 * c;
    conv += cfg.num_blocks as u64 * lq * k * c * c;
    conv += lq * k * c * c;
    let cout = cfg.out_channels as u64;
    conv += match (cfg.task, cfg.upsampler) {
        (Task::Sr, Upsampler::PixelShuffle) => {
            let f = cfg.num_feat as u64;
            let mut head = lq * k * c * f;
            let mut pixels = lq;
            for s in cfg.upsample_stages() {
                let s = s as u64;
                head += pixels * k * f * s * s * f;
                pixels *= s * s;
            }
            head + pixels * k * f * cout
        }
        (Task::Sr, Upsampler::PixelShuffleDirect) => lq * k * c * (r * r) as u64 * cout,
        _ => lq * k * c * cout,
    };
    let projections = layers * lq * (4 * c * c + 2 * c * hidden);
    let attention = layers * lq * 2 * tokens_per_window * c;
    Ok(MultAdds {
        convolutions: conv,
        projections,
        attention,
    })
}

/// Multiply-accumulates of the parametric layers (convolutions and
/// projections) for an `out_height × out_width` output.
pub fn count_mult_adds(cfg: &SwinIRConfig, out_height: usize, out_width: usize) -> Result<u64> {
    Ok(mult_adds_breakdown(cfg, out_height, out_width)?.parametric())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::network::init_params;

    #[test]
    fn zero_channels_rejected() {
        let mut cfg = SwinIRConfig::lightweight_sr(4);
        cfg.channels = 0;
        assert!(param_count(&cfg).is_err());
    }

    #[test]
    fn zero_resolution_rejected() {
        let cfg = SwinIRConfig::lightweight_sr(4);
        assert!(count_mult_adds(&cfg, 0, 720).is_err());
        assert!(count_mult_adds(&cfg, 1280, 0).is_err());
    }

    #[test]
    fn matches_initialized_tensor_sizes() {
        let mut configs = vec![
            SwinIRConfig::lightweight_sr(2),
            SwinIRConfig::lightweight_sr(3),
            SwinIRConfig::lightweight_sr(4),
            SwinIRConfig::car(1),
            SwinIRConfig::denoise(3),
        ];
        let mut small = SwinIRConfig::classical_sr(4);
        small.channels = 12;
        small.num_feat = 8;
        configs.push(small.clone());
        small.scale = 3;
        configs.push(small);
        for cfg in configs {
            let p = init_params::<f32>(&cfg, 0).unwrap();
            assert_eq!(param_count(&cfg).unwrap(), p.num_scalars() as u64, "{cfg:?}");
        }
    }

    #[test]
    fn attention_products_scale_with_window_area() {
        let a = SwinIRConfig::lightweight_sr(4);
        let mut b = a.clone();
        b.window = 4;
        let ma = mult_adds_breakdown(&a, 1280, 720).unwrap();
        let mb = mult_adds_breakdown(&b, 1280, 720).unwrap();
        assert_eq!(ma.attention, 4 * mb.attention);
        assert_eq!(ma.parametric(), mb.parametric());
    }
}
