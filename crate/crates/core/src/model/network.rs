//! Shallow extraction, residual Swin Transformer blocks, and the
//! reconstruction heads, assembled on a [`Graph`].
//!
//! Images are `[N, C, H, W]`; inside a block the features become
//! `[N, H, W, C]` tokens, reflect-padded to window multiples for the
//! attention layers and cropped back before the block's convolution.

use crate::attention::{StlParams, SwinLayer};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{ModelParams, ParamVars};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};
use crate::windowing;

use super::config::{SwinIRConfig, Task, Upsampler};

/// Negative slope of the activation after the pre-upsampling conv.
pub const HEAD_LEAKY_SLOPE: f64 = 0.01;

fn conv<T: Scalar>(g: &mut Graph<T>, pv: &ParamVars, name: &str, x: Var) -> Result<Var> {
    let w = pv.get(&format!("{name}.weight"))?;
    let b = pv.get(&format!("{name}.bias"))?;
    let k = g.shape(w)[2];
    g.conv2d(x, w, Some(b), (k - 1) / 2)
}

/// `F_0`: one 3×3 convolution from image channels to `C`.
pub fn shallow_extract<T: Scalar>(g: &mut Graph<T>, cfg: &SwinIRConfig, pv: &ParamVars, lq: Var) -> Result<Var> {
    match *g.shape(lq) {
        [_, c, _, _] if c == cfg.in_channels => {}
        ref s => {
            return Err(Error::shape(format!(
                "input {s:?} does not have {} channels",
                cfg.in_channels
            )))
        }
    }
    conv(g, pv, "conv_first", lq)
}

/// Block `index`: `L` Swin layers with alternating shifts, a 3×3 conv, and
/// (unless ablated) the block input added back.
pub fn rstb_forward<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &SwinIRConfig,
    pv: &ParamVars,
    index: usize,
    x: Var,
) -> Result<Var> {
    let prefix = format!("rstb.{index}");
    let tokens = g.permute(x, &[0, 2, 3, 1])?;
    let (mut t, (h, w)) = windowing::ops::pad_to_multiple(g, tokens, cfg.window)?;
    let (hp, wp) = (g.shape(t)[1], g.shape(t)[2]);
    let shift = cfg.window / 2;
    let mask = if cfg.layers_per_block > 1 && shift > 0 {
        let m = windowing::build_attn_mask::<T>(hp, wp, cfg.window, shift)?;
        Some(g.constant(m.into_tensor()))
    } else {
        None
    };
    for j in 0..cfg.layers_per_block {
        let layer = SwinLayer::bind(
            pv,
            &format!("{prefix}.stl.{j}"),
            cfg.heads,
            cfg.window,
            cfg.shift_for_layer(j),
        )?;
        t = layer.forward(g, t, mask)?;
    }
    let t = windowing::ops::crop(g, t, h, w)?;
    let y = g.permute(t, &[0, 3, 1, 2])?;
    let y = conv(g, pv, &format!("{prefix}.conv"), y)?;
    if cfg.block_residual {
        g.add(y, x)
    } else {
        Ok(y)
    }
}

/// `F_DF`: all blocks in sequence, then the trailing 3×3 conv.
pub fn deep_extract<T: Scalar>(g: &mut Graph<T>, cfg: &SwinIRConfig, pv: &ParamVars, f0: Var) -> Result<Var> {
    let mut x = f0;
    for i in 0..cfg.num_blocks {
        x = rstb_forward(g, cfg, pv, i, x)?;
    }
    conv(g, pv, "conv_after_body", x)
}

/// Super-resolution head applied to `F_0 + F_DF`.
pub fn reconstruct_sr<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &SwinIRConfig,
    pv: &ParamVars,
    f0: Var,
    fdf: Var,
) -> Result<Var> {
    if cfg.task != Task::Sr || !(2..=4).contains(&cfg.scale) {
        return Err(Error::invalid(format!("unsupported sr scale {}", cfg.scale)));
    }
    let x = g.add(f0, fdf)?;
    match cfg.upsampler {
        Upsampler::PixelShuffle => {
            let x = conv(g, pv, "conv_before_upsample", x)?;
            let mut x = g.leaky_relu(x, T::of(HEAD_LEAKY_SLOPE))?;
            for (s, r) in cfg.upsample_stages().into_iter().enumerate() {
                let y = conv(g, pv, &format!("upsample.{s}"), x)?;
                x = g.pixel_shuffle(y, r)?;
            }
            conv(g, pv, "conv_last", x)
        }
        Upsampler::PixelShuffleDirect => {
            let y = conv(g, pv, "upsample.0", x)?;
            g.pixel_shuffle(y, cfg.scale)
        }
    }
}

/// Residual head: `conv(F_0 + F_DF) + I_LQ`.
pub fn reconstruct_residual<T: Scalar>(g: &mut Graph<T>, pv: &ParamVars, lq: Var, f0: Var, fdf: Var) -> Result<Var> {
    let x = g.add(f0, fdf)?;
    let r = conv(g, pv, "conv_last", x)?;
    if g.shape(r) != g.shape(lq) {
        return Err(Error::shape(format!(
            "residual {:?} does not match input {:?}",
            g.shape(r),
            g.shape(lq)
        )));
    }
    g.add(r, lq)
}

/// Full network on an `[N, Cin, H, W]` input in `[0, 1]`.
pub fn forward<T: Scalar>(g: &mut Graph<T>, cfg: &SwinIRConfig, pv: &ParamVars, lq: Var) -> Result<Var> {
    cfg.validate()?;
    let f0 = shallow_extract(g, cfg, pv, lq)?;
    let fdf = deep_extract(g, cfg, pv, f0)?;
    match cfg.task {
        Task::Sr => reconstruct_sr(g, cfg, pv, f0, fdf),
        Task::Denoise | Task::Car => reconstruct_residual(g, pv, lq, f0, fdf),
    }
}

/// `U(−1/√fan_in, 1/√fan_in)` for both weight and bias.
fn conv_params<T: Scalar>(
    params: &mut ModelParams<T>,
    name: &str,
    cout: usize,
    cin: usize,
    rng: &mut SeededRng,
) -> Result<()> {
    let bound = 1.0 / ((cin * 9) as f64).sqrt();
    let w = Tensor::from_fn([cout, cin, 3, 3], |_| T::of(rng.uniform_range(-bound, bound)))?;
    let b = Tensor::from_fn([cout], |_| T::of(rng.uniform_range(-bound, bound)))?;
    params.insert(format!("{name}.weight"), w)?;
    params.insert(format!("{name}.bias"), b)
}

/// Freshly initialized parameters for `cfg`, deterministic in `seed`.
pub fn init_params<T: Scalar>(cfg: &SwinIRConfig, seed: u64) -> Result<ModelParams<T>> {
    cfg.validate()?;
    let mut rng = SeededRng::new(seed);
    let mut p = ModelParams::new();
    let c = cfg.channels;
    conv_params(&mut p, "conv_first", c, cfg.in_channels, &mut rng)?;
    for i in 0..cfg.num_blocks {
        for j in 0..cfg.layers_per_block {
            let stl = StlParams::<T>::init(
                c,
                cfg.heads,
                cfg.window,
                cfg.mlp_ratio,
                cfg.shift_for_layer(j),
                &mut rng,
            )?;
            stl.store_into(&mut p, &format!("rstb.{i}.stl.{j}"))?;
        }
        conv_params(&mut p, &format!("rstb.{i}.conv"), c, c, &mut rng)?;
    }
    conv_params(&mut p, "conv_after_body", c, c, &mut rng)?;
    match (cfg.task, cfg.upsampler) {
        (Task::Sr, Upsampler::PixelShuffle) => {
            let f = cfg.num_feat;
            conv_params(&mut p, "conv_before_upsample", f, c, &mut rng)?;
            for (s, r) in cfg.upsample_stages().into_iter().enumerate() {
                conv_params(&mut p, &format!("upsample.{s}"), r * r * f, f, &mut rng)?;
            }
            conv_params(&mut p, "conv_last", cfg.out_channels, f, &mut rng)?;
        }
        (Task::Sr, Upsampler::PixelShuffleDirect) => {
            let r = cfg.scale;
            conv_params(&mut p, "upsample.0", r * r * cfg.out_channels, c, &mut rng)?;
        }
        (Task::Denoise | Task::Car, _) => {
            conv_params(&mut p, "conv_last", cfg.out_channels, c, &mut rng)?;
        }
    }
    Ok(p)
}

/// A configuration together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SwinIR<T: Scalar = f32> {
    config: SwinIRConfig,
    params: ModelParams<T>,
}

impl<T: Scalar> SwinIR<T> {
    pub fn new(config: SwinIRConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Self { config, params })
    }

    /// Pairs a config with existing parameters, checking that every expected
    /// tensor is present with the expected shape.
    pub fn from_parts(config: SwinIRConfig, params: ModelParams<T>) -> Result<Self> {
        let reference = init_params::<T>(&config, 0)?;
        if reference.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                reference.len(),
                params.len()
            )));
        }
        for (name, t) in reference.iter() {
            let got = params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if got.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        if !params.all_finite() {
            return Err(Error::NonFinite("parameters contain NaN or Inf".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &SwinIRConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<T> {
        &mut self.params
    }

    pub fn into_parts(self) -> (SwinIRConfig, ModelParams<T>) {
        (self.config, self.params)
    }

    /// Restores an `[N, Cin, H, W]` batch without recording gradients.
    pub fn infer(&self, lq: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let pv = self.params.register(&mut g, false);
        let x = g.constant(lq.clone());
        let y = forward(&mut g, &self.config, &pv, x)?;
        Ok(g.value(y).clone())
    }
}
