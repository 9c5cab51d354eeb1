//! Central finite-difference gradient checking.

use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Relative error above which an entry is flagged.
    pub tol: f64,
    /// Lower bound on the relative-error denominator, so entries whose true
    /// gradient is ~0 are compared absolutely.
    pub denom_floor: f64,
    /// An entry is non-smooth when its forward and backward one-sided
    /// differences disagree by more than `kink_tol * max(1, |central|)`.
    pub kink_tol: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            denom_floor: 1e-6,
            kink_tol: 1e-2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub max_rel_error: f64,
    /// Smooth entries whose relative error exceeds the tolerance.
    pub flagged: Vec<usize>,
    /// Entries sitting within one step of a kink; excluded from the maximum.
    pub nonsmooth: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.flagged.is_empty())
    }

    pub fn nonsmooth_count(&self) -> usize {
        self.params.iter().map(|p| p.nonsmooth.len()).sum()
    }
}

/// Compare the gradient from [`Graph::backward`] with central differences.
///
/// `f` receives a fresh graph and one parameter leaf per tensor in `params`
/// and must return a scalar node. It has to be deterministic.
pub fn grad_check<F>(f: F, params: &[Tensor], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let f0 = g.value(loss).item()?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).expect("param leaf").to_vec())
        .collect();

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.constant(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = Vec::with_capacity(params.len());
    for (pi, grad) in analytic.iter().enumerate() {
        let mut check = ParamCheck {
            max_rel_error: 0.0,
            flagged: Vec::new(),
            nonsmooth: Vec::new(),
        };
        for ei in 0..grad.len() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + opts.step;
            let fp = eval(&work)?;
            work[pi].data_mut()[ei] = orig - opts.step;
            let fm = eval(&work)?;
            work[pi].data_mut()[ei] = orig;

            let central = (fp - fm) / (2.0 * opts.step);
            let forward = (fp - f0) / opts.step;
            let backward = (f0 - fm) / opts.step;
            if (forward - backward).abs() > opts.kink_tol * central.abs().max(1.0) {
                check.nonsmooth.push(ei);
                continue;
            }
            let a = grad[ei];
            let denom = a.abs().max(central.abs()).max(opts.denom_floor);
            let rel = (a - central).abs() / denom;
            check.max_rel_error = check.max_rel_error.max(rel);
            if rel > opts.tol {
                check.flagged.push(ei);
            }
        }
        report.push(check);
    }
    Ok(GradCheckReport { params: report })
}
