use super::{backward, NoGradGuard, Tensor};
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst element-wise relative error, one entry per checked input.
    pub max_rel_error: Vec<f64>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() <= self.tolerance
    }
}

/// Check `d f / d input` for every element of every input.
///
/// `f` must rebuild the scalar from the current values of `inputs` each time
/// it is called; the inputs are perturbed in place by `±h` and restored.
/// Relative error is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn() -> Result<Tensor>,
{
    for x in inputs {
        if !x.is_leaf() || !x.requires_grad() {
            return Err(Error::Usage(
                "grad_check inputs must be leaves that require gradients".into(),
            ));
        }
        x.zero_grad();
    }
    let loss = f()?;
    finite("loss", loss.item())?;
    backward(&loss)?;
    drop(loss);

    let _no_grad = NoGradGuard::new();
    let mut max_rel_error = Vec::with_capacity(inputs.len());
    for x in inputs {
        let analytic = x.grad().unwrap_or_else(|| vec![0.0; x.numel()]);
        let mut worst: f64 = 0.0;
        for (i, &a) in analytic.iter().enumerate() {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + h;
            let plus = f()?.item();
            x.data_mut()[i] = orig - h;
            let minus = f()?.item();
            x.data_mut()[i] = orig;
            finite("perturbed loss", plus)?;
            finite("perturbed loss", minus)?;
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        max_rel_error.push(worst);
    }
    Ok(GradCheckReport {
        max_rel_error,
        tolerance: tol,
    })
}

fn finite(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} evaluated to {v}")))
    }
}
