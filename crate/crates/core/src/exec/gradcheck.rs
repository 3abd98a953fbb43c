use serde::{Deserialize, Serialize};

use super::interp::{forward, loss_and_gradients, Loss, Mode};
use super::tensor::TensorValue;
use super::weights::{ParamRef, ParamRole, WeightStore};
use crate::error::{Error, Result};
use crate::network::NetworkIR;
use crate::rng::SeededStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Largest accepted relative error.
    pub tol: f64,
    /// Check at most this many scalars, sampled without replacement.
    /// Aggregation weights are always included.
    pub max_params: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            max_params: Some(200),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub param: ParamRef,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub loss: f64,
    pub checks: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

/// Compares reverse-mode gradients against central differences of the
/// eval-mode loss.
pub fn grad_check(
    ir: &NetworkIR,
    w: &WeightStore,
    x: &TensorValue,
    loss: &Loss,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if opts.eps.is_nan() || opts.eps <= 0.0 {
        return Err(Error::Parameter(format!(
            "eps must be positive, got {}",
            opts.eps
        )));
    }
    let (value, grads) = loss_and_gradients(ir, w, x, loss, &[])?;
    let params = select(w, opts);

    let mut probe = w.clone();
    let mut eval = |p: ParamRef, v: f64| -> Result<f64> {
        probe.set(p, v)?;
        loss.value(&forward(ir, &probe, x, Mode::Eval)?)
    };
    let mut checks = Vec::with_capacity(params.len());
    for p in params {
        let base = w.get(p).expect("listed parameter exists");
        let plus = eval(p, base + opts.eps)?;
        let minus = eval(p, base - opts.eps)?;
        eval(p, base)?;
        let numeric = (plus - minus) / (2.0 * opts.eps);
        let analytic = grads.get(p).expect("gradient mirrors weights");
        checks.push(ParamCheck {
            param: p,
            analytic,
            numeric,
            rel_err: relative_error(analytic, numeric),
        });
    }
    let max_rel_err = checks.iter().map(|c| c.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        loss: value,
        checks,
        max_rel_err,
        tol: opts.tol,
    })
}

fn select(w: &WeightStore, opts: &GradCheckOptions) -> Vec<ParamRef> {
    let all = w.params();
    let Some(limit) = opts.max_params else {
        return all;
    };
    let (mut chosen, mut rest): (Vec<_>, Vec<_>) = all
        .into_iter()
        .partition(|p| p.role == ParamRole::Aggregation);
    let mut rng = SeededStream::new(opts.seed);
    rng.shuffle(&mut rest);
    rest.truncate(limit.saturating_sub(chosen.len()));
    chosen.extend(rest);
    chosen.sort();
    chosen
}
