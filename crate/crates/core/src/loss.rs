//! Training losses over parameter maps.
//!
//! Both losses are sums of per-map mean squared errors, each mean taken over
//! the `N` pixels of one map and averaged over the batch. The positional
//! variant multiplies the angle and width residuals by the ground-truth
//! quality before squaring, so pixels without a grasp contribute nothing to
//! those three terms. The quality and auxiliary terms are shared.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::GroundTruthMaps;
use crate::error::{Error, Result};
use crate::network::{ParameterMaps, TracedMaps};
use crate::tensor::{Float, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Standard,
    Positional,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Standard => "standard",
            LossKind::Positional => "positional",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(LossKind::Standard),
            "positional" => Ok(LossKind::Positional),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub q: f64,
    pub cos: f64,
    pub sin: f64,
    pub width: f64,
    pub aux: Option<f64>,
    /// Sum of the present terms.
    pub total: f64,
}

impl LossBreakdown {
    fn from_terms(q: f64, cos: f64, sin: f64, width: f64, aux: Option<f64>) -> Self {
        Self {
            q,
            cos,
            sin,
            width,
            aux,
            total: q + cos + sin + width + aux.unwrap_or(0.0),
        }
    }
}

/// Loss terms recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TracedLoss {
    pub total: Var,
    pub q: Var,
    pub cos: Var,
    pub sin: Var,
    pub width: Var,
    pub aux: Option<Var>,
}

impl TracedLoss {
    pub fn breakdown<T: Float>(&self, tape: &Tape<T>) -> LossBreakdown {
        let v = |var: Var| tape.value(var).data()[0].as_f64();
        LossBreakdown::from_terms(
            v(self.q),
            v(self.cos),
            v(self.sin),
            v(self.width),
            self.aux.map(v),
        )
    }
}

fn check_pair<T: Float>(name: &str, pred: &Tensor<T>, gt: &Tensor<T>) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::Contract(format!(
            "{name}: prediction shape {:?} differs from ground truth {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    Ok(())
}

fn check_quality_range<T: Float>(q_gt: &Tensor<T>) -> Result<()> {
    if let Some(v) = q_gt
        .data()
        .iter()
        .find(|&&v| !(v >= T::zero() && v <= T::one()))
    {
        return Err(Error::Contract(format!(
            "positional loss needs ground-truth quality in [0, 1], found {v}"
        )));
    }
    Ok(())
}

/// Records `kind` loss between traced predictions and ground truth.
pub fn traced_loss<T: Float>(
    tape: &mut Tape<T>,
    kind: LossKind,
    pred: &TracedMaps,
    gt: &GroundTruthMaps<T>,
) -> Result<TracedLoss> {
    check_pair("q", tape.value(pred.q), &gt.q)?;
    check_pair("cos", tape.value(pred.cos), &gt.cos)?;
    check_pair("sin", tape.value(pred.sin), &gt.sin)?;
    check_pair("width", tape.value(pred.width), &gt.width)?;
    match (pred.aux, &gt.aux) {
        (Some(a), Some(g)) => check_pair("aux", tape.value(a), g)?,
        (None, None) => {}
        (Some(_), None) => {
            return Err(Error::Contract(
                "prediction has an auxiliary map but ground truth does not".into(),
            ))
        }
        (None, Some(_)) => {
            return Err(Error::Contract(
                "ground truth has an auxiliary map but prediction does not".into(),
            ))
        }
    }
    if kind == LossKind::Positional {
        check_quality_range(&gt.q)?;
    }

    let mse = |tape: &mut Tape<T>, p: Var, g: &Tensor<T>, weight: Option<Var>| -> Result<Var> {
        let g = tape.input(g.clone());
        let mut r = tape.sub(p, g)?;
        if let Some(w) = weight {
            r = tape.mul(w, r)?;
        }
        let sq = tape.square(r);
        Ok(tape.mean(sq))
    };

    let q = mse(tape, pred.q, &gt.q, None)?;
    let weight = match kind {
        LossKind::Standard => None,
        LossKind::Positional => Some(tape.input(gt.q.clone())),
    };
    let cos = mse(tape, pred.cos, &gt.cos, weight)?;
    let sin = mse(tape, pred.sin, &gt.sin, weight)?;
    let width = mse(tape, pred.width, &gt.width, weight)?;
    let aux = match (pred.aux, &gt.aux) {
        (Some(a), Some(g)) => Some(mse(tape, a, g, None)?),
        _ => None,
    };

    let mut total = tape.add(q, cos)?;
    total = tape.add(total, sin)?;
    total = tape.add(total, width)?;
    if let Some(a) = aux {
        total = tape.add(total, a)?;
    }
    Ok(TracedLoss {
        total,
        q,
        cos,
        sin,
        width,
        aux,
    })
}

/// Evaluates `kind` loss on concrete maps.
pub fn compute_loss<T: Float>(
    kind: LossKind,
    pred: &ParameterMaps<T>,
    gt: &GroundTruthMaps<T>,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let traced = TracedMaps {
        q: tape.input(pred.q.clone()),
        cos: tape.input(pred.cos.clone()),
        sin: tape.input(pred.sin.clone()),
        width: tape.input(pred.width.clone()),
        aux: pred.aux.as_ref().map(|a| tape.input(a.clone())),
    };
    Ok(traced_loss(&mut tape, kind, &traced, gt)?.breakdown(&tape))
}

/// Summed per-map MSE.
pub fn standard_loss<T: Float>(
    pred: &ParameterMaps<T>,
    gt: &GroundTruthMaps<T>,
) -> Result<LossBreakdown> {
    compute_loss(LossKind::Standard, pred, gt)
}

/// Summed MSE with angle and width residuals scaled by ground-truth quality.
pub fn positional_loss<T: Float>(
    pred: &ParameterMaps<T>,
    gt: &GroundTruthMaps<T>,
) -> Result<LossBreakdown> {
    compute_loss(LossKind::Positional, pred, gt)
}

/// Loss value and its gradient with respect to each predicted map.
pub fn loss_gradients<T: Float>(
    kind: LossKind,
    pred: &ParameterMaps<T>,
    gt: &GroundTruthMaps<T>,
) -> Result<(LossBreakdown, ParameterMaps<T>)> {
    let mut tape = Tape::new();
    let traced = TracedMaps {
        q: tape.input(pred.q.clone()),
        cos: tape.input(pred.cos.clone()),
        sin: tape.input(pred.sin.clone()),
        width: tape.input(pred.width.clone()),
        aux: pred.aux.as_ref().map(|a| tape.input(a.clone())),
    };
    let loss = traced_loss(&mut tape, kind, &traced, gt)?;
    let grads = tape.backward(loss.total, &ParamSet::new())?;
    let grad = |v: Var| {
        grads
            .input(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape().to_vec()))
    };
    let maps = ParameterMaps {
        q: grad(traced.q),
        cos: grad(traced.cos),
        sin: grad(traced.sin),
        width: grad(traced.width),
        aux: traced.aux.map(grad),
    };
    Ok((loss.breakdown(&tape), maps))
}
