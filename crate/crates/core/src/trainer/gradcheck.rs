//! Whole-model gradient check against central finite differences.

use std::fmt;

use crate::error::Result;
use crate::graph::Graph;
use crate::losses::{LossConfig, Reduction};
use crate::model::{forward, init_params, SwinIRConfig};
use crate::params::ModelParams;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

const ZERO_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub tolerance: f64,
    pub seed: u64,
    /// LQ input side. Values that are not a multiple of the window also
    /// exercise padding.
    pub input_size: usize,
    /// Finite-difference step.
    pub step: f64,
    /// Probe at most this many scalars per tensor (evenly spaced).
    pub max_probes: Option<usize>,
    /// Deliberately break the backward rule of one op.
    #[doc(hidden)]
    pub fault: Option<&'static str>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            seed: 0,
            input_size: 6,
            step: 1e-4,
            max_probes: None,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupResult {
    pub loss: &'static str,
    pub group: String,
    /// `max |analytic − numeric| / max(|analytic|, |numeric|, 1e-10)` over
    /// the probed scalars of the group. The floor keeps groups whose exact
    /// gradient is zero (the key bias, for one) from dividing noise by noise.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Largest gradient magnitude seen in the group.
    pub scale: f64,
    pub probes: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub groups: Vec<GroupResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn worst(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.groups.iter().map(|g| g.group.len()).max().unwrap_or(5).max(5);
        writeln!(
            f,
            "{:<12} {:<width$} {:>7} {:>12}  result",
            "loss", "group", "probes", "max_rel_err"
        )?;
        for g in &self.groups {
            writeln!(
                f,
                "{:<12} {:<width$} {:>7} {:>12.3e}  {}",
                g.loss,
                g.group,
                g.probes,
                g.max_rel_error,
                if g.passed { "PASS" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "tolerance {:.1e}  worst {:.3e}  {}",
            self.tolerance,
            self.worst(),
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

fn loss_value(
    cfg: &SwinIRConfig,
    params: &ModelParams<f64>,
    loss: &LossConfig,
    x: &Tensor<f64>,
    t: &Tensor<f64>,
) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let pv = params.register(&mut g, false);
    let xv = g.constant(x.clone());
    let y = forward(&mut g, cfg, &pv, xv)?;
    let tv = g.constant(t.clone());
    let l = loss.apply(&mut g, y, tv)?;
    g.value(l).item()
}

fn analytic(
    cfg: &SwinIRConfig,
    params: &ModelParams<f64>,
    loss: &LossConfig,
    x: &Tensor<f64>,
    t: &Tensor<f64>,
    fault: Option<&'static str>,
) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::<f64>::new();
    if let Some(op) = fault {
        g.inject_backward_fault(op);
    }
    let pv = params.register(&mut g, true);
    let xv = g.constant(x.clone());
    let y = forward(&mut g, cfg, &pv, xv)?;
    let tv = g.constant(t.clone());
    let l = loss.apply(&mut g, y, tv)?;
    g.backward(l)?;
    params
        .iter()
        .map(|(name, p)| {
            Ok(g.grad(pv.get(name)?)
                .map(Tensor::into_data)
                .unwrap_or_else(|| vec![0.0; p.numel()]))
        })
        .collect()
}

fn probe_indices(n: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < n => (0..m).map(|i| i * n / m).collect(),
        _ => (0..n).collect(),
    }
}

/// Compares analytic parameter gradients of a freshly initialized 64-bit
/// model with central differences, for the L1 and Charbonnier losses.
pub fn gradcheck(cfg: &SwinIRConfig, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    cfg.validate()?;
    let mut params = init_params::<f64>(cfg, opts.seed)?;
    let mut rng = SeededRng::derived(opts.seed, &[0x6772_6164]);
    let s = opts.input_size;
    let x = Tensor::from_fn([1, cfg.in_channels, s, s], |_| rng.uniform())?;
    let os = s * cfg.scale;
    let t = Tensor::from_fn([1, cfg.out_channels, os, os], |_| rng.uniform())?;
    let losses = [
        ("l1", LossConfig::L1),
        (
            "charbonnier",
            LossConfig::Charbonnier {
                eps: 1e-3,
                reduction: Reduction::PerElement,
            },
        ),
    ];
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut groups = Vec::new();
    for (loss_name, loss) in &losses {
        let grads = analytic(cfg, &params, loss, &x, &t, opts.fault)?;
        for (gi, name) in names.iter().enumerate() {
            let n = params.get(name).unwrap().numel();
            let idx = probe_indices(n, opts.max_probes);
            let mut worst_diff = 0.0f64;
            let mut scale = 0.0f64;
            for &i in &idx {
                let orig = params.get(name).unwrap().data()[i];
                params.get_mut(name).unwrap().data_mut()[i] = orig + opts.step;
                let plus = loss_value(cfg, &params, loss, &x, &t)?;
                params.get_mut(name).unwrap().data_mut()[i] = orig - opts.step;
                let minus = loss_value(cfg, &params, loss, &x, &t)?;
                params.get_mut(name).unwrap().data_mut()[i] = orig;
                let numeric = (plus - minus) / (2.0 * opts.step);
                let a = grads[gi][i];
                worst_diff = worst_diff.max((a - numeric).abs());
                scale = scale.max(a.abs()).max(numeric.abs());
            }
            let rel = worst_diff / scale.max(ZERO_FLOOR);
            groups.push(GroupResult {
                loss: loss_name,
                group: name.clone(),
                max_rel_error: rel,
                max_abs_error: worst_diff,
                scale,
                probes: idx.len(),
                passed: rel < opts.tolerance,
            });
        }
    }
    Ok(GradcheckReport {
        tolerance: opts.tolerance,
        groups,
    })
}
