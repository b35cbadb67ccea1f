//! Window multi-head self-attention with relative position bias, the MLP
//! block, and the Swin Transformer layer that combines them.
//!
//! Each layer comes in two forms: a `*Params` struct owning tensors (used
//! for initialization and tensor-level calls) and a handle struct holding
//! graph [`Var`]s bound from a [`ParamVars`] by name.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{join, ModelParams, ParamVars};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};
use crate::windowing::{self, AttnMask, WindowGrid};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Standard deviation of the truncated-normal init for projections and
/// bias tables.
pub const INIT_STD: f64 = 0.02;

/// Bias-table row for every (query, key) token pair of an `M×M` window,
/// row-major `M²×M²`:
/// `(ph−qh+M−1)·(2M−1) + (pw−qw+M−1)`.
pub fn relative_position_index(window: usize) -> Vec<usize> {
    let m = window;
    let n = m * m;
    let span = 2 * m - 1;
    let mut idx = Vec::with_capacity(n * n);
    for p in 0..n {
        let (ph, pw) = (p / m, p % m);
        for q in 0..n {
            let (qh, qw) = (q / m, q % m);
            idx.push((ph + m - 1 - qh) * span + (pw + m - 1 - qw));
        }
    }
    idx
}

fn trunc_normal<T: Scalar>(shape: &[usize], rng: &mut SeededRng) -> Result<Tensor<T>> {
    Tensor::from_fn(shape.to_vec(), |_| T::of(rng.truncated_normal(INIT_STD)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowAttentionParams<T: Scalar = f32> {
    pub q_weight: Tensor<T>,
    pub q_bias: Tensor<T>,
    pub k_weight: Tensor<T>,
    pub k_bias: Tensor<T>,
    pub v_weight: Tensor<T>,
    pub v_bias: Tensor<T>,
    pub proj_weight: Tensor<T>,
    pub proj_bias: Tensor<T>,
    /// `[(2M−1)², heads]`
    pub bias_table: Tensor<T>,
    pub num_heads: usize,
    pub window: usize,
}

fn check_heads(channels: usize, heads: usize) -> Result<()> {
    if channels == 0 || heads == 0 || !channels.is_multiple_of(heads) {
        return Err(Error::invalid(format!(
            "{heads} heads do not divide {channels} channels"
        )));
    }
    Ok(())
}

impl<T: Scalar> WindowAttentionParams<T> {
    pub fn zeros(channels: usize, heads: usize, window: usize) -> Result<Self> {
        check_heads(channels, heads)?;
        let c = channels;
        let span = 2 * window - 1;
        Ok(Self {
            q_weight: Tensor::zeros([c, c])?,
            q_bias: Tensor::zeros([c])?,
            k_weight: Tensor::zeros([c, c])?,
            k_bias: Tensor::zeros([c])?,
            v_weight: Tensor::zeros([c, c])?,
            v_bias: Tensor::zeros([c])?,
            proj_weight: Tensor::zeros([c, c])?,
            proj_bias: Tensor::zeros([c])?,
            bias_table: Tensor::zeros([span * span, heads])?,
            num_heads: heads,
            window,
        })
    }

    pub fn init(channels: usize, heads: usize, window: usize, rng: &mut SeededRng) -> Result<Self> {
        let mut p = Self::zeros(channels, heads, window)?;
        let c = channels;
        p.q_weight = trunc_normal(&[c, c], rng)?;
        p.k_weight = trunc_normal(&[c, c], rng)?;
        p.v_weight = trunc_normal(&[c, c], rng)?;
        p.proj_weight = trunc_normal(&[c, c], rng)?;
        p.bias_table = trunc_normal(p.bias_table.shape(), rng)?;
        Ok(p)
    }

    pub fn channels(&self) -> usize {
        self.q_weight.shape()[0]
    }

    pub fn store_into(&self, params: &mut ModelParams<T>, prefix: &str) -> Result<()> {
        for (name, t) in [
            ("q.weight", &self.q_weight),
            ("q.bias", &self.q_bias),
            ("k.weight", &self.k_weight),
            ("k.bias", &self.k_bias),
            ("v.weight", &self.v_weight),
            ("v.bias", &self.v_bias),
            ("proj.weight", &self.proj_weight),
            ("proj.bias", &self.proj_bias),
            ("relative_position_bias_table", &self.bias_table),
        ] {
            params.insert(join(prefix, name), t.clone())?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct LinearVars {
    weight: Var,
    bias: Var,
}

impl LinearVars {
    fn bind(pv: &ParamVars, prefix: &str) -> Result<Self> {
        Ok(Self {
            weight: pv.get(&join(prefix, "weight"))?,
            bias: pv.get(&join(prefix, "bias"))?,
        })
    }

    fn apply<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        g.linear(x, self.weight, Some(self.bias))
    }
}

/// Output of one attention call; `weights` is the post-softmax
/// `[windows, heads, M², M²]` tensor.
#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Var,
}

#[derive(Clone, Debug)]
pub struct WindowAttention {
    q: LinearVars,
    k: LinearVars,
    v: LinearVars,
    proj: LinearVars,
    bias_table: Var,
    num_heads: usize,
    window: usize,
    relative_index: Vec<usize>,
}

impl WindowAttention {
    pub fn bind(pv: &ParamVars, prefix: &str, num_heads: usize, window: usize) -> Result<Self> {
        Ok(Self {
            q: LinearVars::bind(pv, &join(prefix, "q"))?,
            k: LinearVars::bind(pv, &join(prefix, "k"))?,
            v: LinearVars::bind(pv, &join(prefix, "v"))?,
            proj: LinearVars::bind(pv, &join(prefix, "proj"))?,
            bias_table: pv.get(&join(prefix, "relative_position_bias_table"))?,
            num_heads,
            window,
            relative_index: relative_position_index(window),
        })
    }

    fn heads_first<T: Scalar>(&self, g: &mut Graph<T>, x: Var, dims: [usize; 3]) -> Result<Var> {
        let [bw, n, c] = dims;
        let x = g.reshape(x, &[bw, n, self.num_heads, c / self.num_heads])?;
        g.permute(x, &[0, 2, 1, 3])
    }

    /// `x` is `[B·nW, M², C]`; `mask`, when given, is `[nW, M², M²]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var, mask: Option<Var>) -> Result<AttentionOutput> {
        let [bw, n, c] = match *g.shape(x) {
            [a, b, c] => [a, b, c],
            ref s => {
                return Err(Error::shape(format!(
                    "attention input must be [windows, tokens, C], got {s:?}"
                )))
            }
        };
        check_heads(c, self.num_heads)?;
        if n != self.window * self.window {
            return Err(Error::shape(format!(
                "{n} tokens per window, expected {}",
                self.window * self.window
            )));
        }
        let h = self.num_heads;
        let d = c / h;
        let q = self.q.apply(g, x)?;
        let q = self.heads_first(g, q, [bw, n, c])?;
        let k = self.k.apply(g, x)?;
        let k = self.heads_first(g, k, [bw, n, c])?;
        let v = self.v.apply(g, x)?;
        let v = self.heads_first(g, v, [bw, n, c])?;

        let logits = g.matmul(q, k, true)?;
        let logits = g.scale(logits, T::one() / T::from_usize(d).unwrap().sqrt())?;

        let bias = g.index_select(self.bias_table, &self.relative_index)?;
        let bias = g.reshape(bias, &[n, n, h])?;
        let bias = g.permute(bias, &[2, 0, 1])?;
        let bias = g.reshape(bias, &[1, h, n, n])?;
        let mut logits = g.add_broadcast(logits, bias)?;

        if let Some(mask) = mask {
            let nw = g.shape(mask)[0];
            if g.shape(mask) != [nw, n, n] || bw % nw != 0 {
                return Err(Error::shape(format!(
                    "mask {:?} does not fit {bw} windows of {n} tokens",
                    g.shape(mask)
                )));
            }
            let l = g.reshape(logits, &[bw / nw, nw, h, n, n])?;
            let m = g.reshape(mask, &[1, nw, 1, n, n])?;
            let l = g.add_broadcast(l, m)?;
            logits = g.reshape(l, &[bw, h, n, n])?;
        }

        let weights = g.softmax(logits)?;
        let out = g.matmul(weights, v, false)?;
        let out = g.permute(out, &[0, 2, 1, 3])?;
        let out = g.reshape(out, &[bw, n, c])?;
        let output = self.proj.apply(g, out)?;
        Ok(AttentionOutput { output, weights })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T: Scalar = f32> {
    pub fc1_weight: Tensor<T>,
    pub fc1_bias: Tensor<T>,
    pub fc2_weight: Tensor<T>,
    pub fc2_bias: Tensor<T>,
}

impl<T: Scalar> MlpParams<T> {
    pub fn zeros(channels: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fc1_weight: Tensor::zeros([channels, hidden])?,
            fc1_bias: Tensor::zeros([hidden])?,
            fc2_weight: Tensor::zeros([hidden, channels])?,
            fc2_bias: Tensor::zeros([channels])?,
        })
    }

    pub fn init(channels: usize, hidden: usize, rng: &mut SeededRng) -> Result<Self> {
        let mut p = Self::zeros(channels, hidden)?;
        p.fc1_weight = trunc_normal(&[channels, hidden], rng)?;
        p.fc2_weight = trunc_normal(&[hidden, channels], rng)?;
        Ok(p)
    }

    pub fn store_into(&self, params: &mut ModelParams<T>, prefix: &str) -> Result<()> {
        params.insert(join(prefix, "fc1.weight"), self.fc1_weight.clone())?;
        params.insert(join(prefix, "fc1.bias"), self.fc1_bias.clone())?;
        params.insert(join(prefix, "fc2.weight"), self.fc2_weight.clone())?;
        params.insert(join(prefix, "fc2.bias"), self.fc2_bias.clone())?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    fc1: LinearVars,
    fc2: LinearVars,
}

impl Mlp {
    pub fn bind(pv: &ParamVars, prefix: &str) -> Result<Self> {
        Ok(Self {
            fc1: LinearVars::bind(pv, &join(prefix, "fc1"))?,
            fc2: LinearVars::bind(pv, &join(prefix, "fc2"))?,
        })
    }

    /// `fc2(gelu(fc1(x)))`
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let h = self.fc1.apply(g, x)?;
        let h = g.gelu(h)?;
        self.fc2.apply(g, h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StlParams<T: Scalar = f32> {
    pub norm1_weight: Tensor<T>,
    pub norm1_bias: Tensor<T>,
    pub attn: WindowAttentionParams<T>,
    pub norm2_weight: Tensor<T>,
    pub norm2_bias: Tensor<T>,
    pub mlp: MlpParams<T>,
    pub shift: usize,
}

impl<T: Scalar> StlParams<T> {
    pub fn zeros(channels: usize, heads: usize, window: usize, mlp_ratio: usize, shift: usize) -> Result<Self> {
        Ok(Self {
            norm1_weight: Tensor::ones([channels])?,
            norm1_bias: Tensor::zeros([channels])?,
            attn: WindowAttentionParams::zeros(channels, heads, window)?,
            norm2_weight: Tensor::ones([channels])?,
            norm2_bias: Tensor::zeros([channels])?,
            mlp: MlpParams::zeros(channels, channels * mlp_ratio)?,
            shift,
        })
    }

    pub fn init(
        channels: usize,
        heads: usize,
        window: usize,
        mlp_ratio: usize,
        shift: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let mut p = Self::zeros(channels, heads, window, mlp_ratio, shift)?;
        p.attn = WindowAttentionParams::init(channels, heads, window, rng)?;
        p.mlp = MlpParams::init(channels, channels * mlp_ratio, rng)?;
        Ok(p)
    }

    pub fn store_into(&self, params: &mut ModelParams<T>, prefix: &str) -> Result<()> {
        params.insert(join(prefix, "norm1.weight"), self.norm1_weight.clone())?;
        params.insert(join(prefix, "norm1.bias"), self.norm1_bias.clone())?;
        self.attn.store_into(params, &join(prefix, "attn"))?;
        params.insert(join(prefix, "norm2.weight"), self.norm2_weight.clone())?;
        params.insert(join(prefix, "norm2.bias"), self.norm2_bias.clone())?;
        self.mlp.store_into(params, &join(prefix, "mlp"))
    }
}

/// One Swin Transformer layer:
/// `X ← MSA(LN(X)) + X`, then `X ← MLP(LN(X)) + X`, with the attention
/// pass run on a cyclically shifted map when `shift > 0`.
#[derive(Clone, Debug)]
pub struct SwinLayer {
    norm1: (Var, Var),
    attn: WindowAttention,
    norm2: (Var, Var),
    mlp: Mlp,
    window: usize,
    shift: usize,
}

impl SwinLayer {
    pub fn bind(pv: &ParamVars, prefix: &str, num_heads: usize, window: usize, shift: usize) -> Result<Self> {
        Ok(Self {
            norm1: (
                pv.get(&join(prefix, "norm1.weight"))?,
                pv.get(&join(prefix, "norm1.bias"))?,
            ),
            attn: WindowAttention::bind(pv, &join(prefix, "attn"), num_heads, window)?,
            norm2: (
                pv.get(&join(prefix, "norm2.weight"))?,
                pv.get(&join(prefix, "norm2.bias"))?,
            ),
            mlp: Mlp::bind(pv, &join(prefix, "mlp"))?,
            window,
            shift,
        })
    }

    pub fn shift(&self) -> usize {
        self.shift
    }

    /// `x` is `[N, H, W, C]` with `H`, `W` multiples of the window. `mask`
    /// is only read when the layer shifts.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var, mask: Option<Var>) -> Result<Var> {
        let (h, w) = match *g.shape(x) {
            [_, h, w, _] => (h, w),
            ref s => return Err(Error::shape(format!("layer input must be [N,H,W,C], got {s:?}"))),
        };
        WindowGrid::new(h, w, self.window, self.shift)?;
        let eps = T::of(LAYER_NORM_EPS);
        let s = self.shift as isize;

        let y = g.layer_norm(x, self.norm1.0, self.norm1.1, eps)?;
        let y = if s > 0 { windowing::ops::roll_hw(g, y, -s)? } else { y };
        let wins = windowing::ops::window_partition(g, y, self.window)?;
        let attn = self.attn.forward(g, wins, if s > 0 { mask } else { None })?;
        let y = windowing::ops::window_reverse(g, attn.output, self.window, h, w)?;
        let y = if s > 0 { windowing::ops::roll_hw(g, y, s)? } else { y };
        let x = g.add(x, y)?;

        let z = g.layer_norm(x, self.norm2.0, self.norm2.1, eps)?;
        let z = self.mlp.forward(g, z)?;
        g.add(x, z)
    }
}

fn stored<T: Scalar>(f: impl FnOnce(&mut ModelParams<T>) -> Result<()>) -> Result<ModelParams<T>> {
    let mut p = ModelParams::new();
    f(&mut p)?;
    Ok(p)
}

/// Attention over a stack of windows `[nW·N, M², C]`.
pub fn window_msa<T: Scalar>(
    x: &Tensor<T>,
    params: &WindowAttentionParams<T>,
    mask: Option<&AttnMask<T>>,
) -> Result<Tensor<T>> {
    Ok(window_msa_with_weights(x, params, mask)?.0)
}

/// Like [`window_msa`], also returning the attention weights
/// `[windows, heads, M², M²]`.
pub fn window_msa_with_weights<T: Scalar>(
    x: &Tensor<T>,
    params: &WindowAttentionParams<T>,
    mask: Option<&AttnMask<T>>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let store = stored(|p| params.store_into(p, ""))?;
    let mut g = Graph::new();
    let pv = store.register(&mut g, false);
    let layer = WindowAttention::bind(&pv, "", params.num_heads, params.window)?;
    let xv = g.constant(x.clone());
    let mv = mask.map(|m| g.constant(m.as_tensor().clone()));
    let out = layer.forward(&mut g, xv, mv)?;
    Ok((g.value(out.output).clone(), g.value(out.weights).clone()))
}

pub fn mlp_forward<T: Scalar>(x: &Tensor<T>, params: &MlpParams<T>) -> Result<Tensor<T>> {
    let store = stored(|p| params.store_into(p, ""))?;
    let mut g = Graph::new();
    let pv = store.register(&mut g, false);
    let mlp = Mlp::bind(&pv, "")?;
    let xv = g.constant(x.clone());
    let out = mlp.forward(&mut g, xv)?;
    Ok(g.value(out).clone())
}

/// One layer on an `[N, H, W, C]` map described by `grid`.
pub fn stl_forward<T: Scalar>(x: &Tensor<T>, params: &StlParams<T>, grid: &WindowGrid) -> Result<Tensor<T>> {
    match *x.shape() {
        [_, h, w, _] if (h, w) == (grid.height, grid.width) => {}
        ref s => return Err(Error::shape(format!("input {s:?} does not match grid {grid:?}"))),
    }
    if grid.shift != params.shift || grid.window != params.attn.window {
        return Err(Error::invalid("grid window/shift disagree with layer parameters"));
    }
    let store = stored(|p| params.store_into(p, ""))?;
    let mut g = Graph::new();
    let pv = store.register(&mut g, false);
    let layer = SwinLayer::bind(&pv, "", params.attn.num_heads, grid.window, grid.shift)?;
    let mask = if grid.shift > 0 {
        let m = windowing::build_attn_mask::<T>(grid.height, grid.width, grid.window, grid.shift)?;
        Some(g.constant(m.into_tensor()))
    } else {
        None
    };
    let xv = g.constant(x.clone());
    let out = layer.forward(&mut g, xv, mask)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_index_examples() {
        assert_eq!(relative_position_index(1), vec![0]);
        let idx = relative_position_index(2);
        // p == q lands on the centre of the 3x3 offset grid
        for p in 0..4 {
            assert_eq!(idx[p * 4 + p], 4);
        }
        // p=(0,0), q=(1,1): offset (-1,-1)
        assert_eq!(idx[3], 0);
    }

    #[test]
    fn relative_index_range_and_antisymmetry() {
        for m in 1..6 {
            let idx = relative_position_index(m);
            let n = m * m;
            let span = 2 * m - 1;
            let center = (m - 1) * span + (m - 1);
            for i in 0..n {
                for j in 0..n {
                    let a = idx[i * n + j];
                    assert!(a < span * span);
                    // negated offsets mirror through the centre entry
                    assert_eq!(a + idx[j * n + i], 2 * center);
                }
            }
        }
    }

    #[test]
    fn heads_must_divide_channels() {
        assert!(WindowAttentionParams::<f32>::zeros(10, 3, 2).is_err());
    }

    #[test]
    fn zero_mlp_gives_zero() {
        let p = MlpParams::<f32>::zeros(4, 8).unwrap();
        let x = Tensor::from_fn([3, 4], |i| i as f32 - 5.0).unwrap();
        assert!(mlp_forward(&x, &p).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_mlp_collapses_to_gelu() {
        let mut p = MlpParams::<f64>::zeros(3, 3).unwrap();
        for i in 0..3 {
            p.fc1_weight.data_mut()[i * 3 + i] = 1.0;
            p.fc2_weight.data_mut()[i * 3 + i] = 1.0;
        }
        let x = Tensor::new([2, 3], vec![-2.0, -0.5, 0.0, 0.3, 1.0, 3.0]).unwrap();
        let y = mlp_forward(&x, &p).unwrap();
        for (&a, &b) in y.data().iter().zip(x.data()) {
            let expect = b * 0.5 * (1.0 + libm::erf(b / 2f64.sqrt()));
            assert!((a - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_projections_make_layer_identity() {
        let mut rng = SeededRng::new(11);
        for shift in [0, 2] {
            let mut p = StlParams::<f32>::init(8, 2, 4, 2, shift, &mut rng).unwrap();
            p.attn.proj_weight = Tensor::zeros([8, 8]).unwrap();
            p.mlp.fc2_weight = Tensor::zeros([16, 8]).unwrap();
            let x = Tensor::from_fn([1, 8, 8, 8], |i| ((i * 37) % 17) as f32 / 17.0).unwrap();
            let grid = WindowGrid::new(8, 8, 4, shift).unwrap();
            assert_eq!(stl_forward(&x, &p, &grid).unwrap(), x);
        }
    }
}
