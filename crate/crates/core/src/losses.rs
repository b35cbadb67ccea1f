//! Pixel losses, recorded on a [`Graph`] so they can be differentiated.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_CHARBONNIER_EPS: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Reduction {
    /// `mean(sqrt(d² + ε²))`
    #[default]
    PerElement,
    /// `sqrt(‖d‖² + ε²)` over the whole tensor.
    GlobalNorm,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossConfig {
    L1,
    Charbonnier { eps: f64, reduction: Reduction },
}

impl LossConfig {
    pub fn charbonnier() -> Self {
        LossConfig::Charbonnier {
            eps: DEFAULT_CHARBONNIER_EPS,
            reduction: Reduction::PerElement,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossConfig::Charbonnier { eps, .. } if !(eps > 0.0 && eps.is_finite()) => {
                Err(Error::invalid(format!("charbonnier eps must be positive, got {eps}")))
            }
            _ => Ok(()),
        }
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
        self.validate()?;
        match *self {
            LossConfig::L1 => l1_loss(g, pred, target),
            LossConfig::Charbonnier { eps, reduction } => charbonnier_loss(g, pred, target, eps, reduction),
        }
    }

    /// Loss value without recording gradients.
    pub fn eval<T: Scalar>(&self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
        let mut g = Graph::new();
        let p = g.constant(pred.clone());
        let t = g.constant(target.clone());
        let l = self.apply(&mut g, p, t)?;
        g.value(l).item()
    }
}

fn check_shapes<T: Scalar>(g: &Graph<T>, pred: Var, target: Var) -> Result<()> {
    if g.shape(pred) != g.shape(target) {
        return Err(Error::shape(format!(
            "prediction {:?} and target {:?} differ",
            g.shape(pred),
            g.shape(target)
        )));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    check_shapes(g, pred, target)?;
    let d = g.sub(pred, target)?;
    let a = g.abs(d)?;
    g.mean(a)
}

pub fn charbonnier_loss<T: Scalar>(
    g: &mut Graph<T>,
    pred: Var,
    target: Var,
    eps: f64,
    reduction: Reduction,
) -> Result<Var> {
    check_shapes(g, pred, target)?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("charbonnier eps must be positive, got {eps}")));
    }
    let eps = T::of(eps);
    let d = g.sub(pred, target)?;
    let sq = g.square(d)?;
    match reduction {
        Reduction::PerElement => {
            let s = g.add_scalar(sq, eps * eps)?;
            let r = g.sqrt(s)?;
            g.mean(r)
        }
        Reduction::GlobalNorm => {
            let total = g.sum(sq)?;
            let s = g.add_scalar(total, eps * eps)?;
            g.sqrt(s)
        }
    }
}
