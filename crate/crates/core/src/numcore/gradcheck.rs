//! Central finite-difference gradient checking.

use super::{Graph, NumError, ParamStore, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradMismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Largest `|a - n| / (atol + rtol * max(|a|, |n|))`; at most 1 passes.
    pub worst_ratio: f64,
    pub failures: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Entries probed per tensor, evenly spaced; 0 probes every entry.
    pub per_tensor: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-6, rtol: 1e-3, atol: 1e-8, per_tensor: 0 }
    }
}

/// Compares reverse-mode gradients of `loss` with central differences.
pub fn check_gradients(
    store: &ParamStore<f64>,
    config: GradCheckConfig,
    loss: impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> Var,
) -> Result<GradCheckReport, NumError> {
    let mut g = Graph::new();
    let l = loss(&mut g, store);
    let grads = g.backward(l)?;
    let eval = |s: &ParamStore<f64>| {
        let mut g = Graph::new();
        let l = loss(&mut g, s);
        g.value(l).item()
    };
    let mut work = store.clone();
    let mut report = GradCheckReport::default();
    for id in store.ids() {
        let n = store.tensor(id).len();
        let picks: Vec<usize> = if config.per_tensor == 0 || config.per_tensor >= n {
            (0..n).collect()
        } else {
            (0..config.per_tensor).map(|k| k * n / config.per_tensor).collect()
        };
        for i in picks {
            let orig = store.tensor(id).data()[i];
            work.tensor_mut(id).data_mut()[i] = orig + config.step;
            let up = eval(&work);
            work.tensor_mut(id).data_mut()[i] = orig - config.step;
            let down = eval(&work);
            work.tensor_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * config.step);
            let analytic = grads.get(id).map_or(0.0, |t| t.data()[i]);
            let ratio = (analytic - numeric).abs() / (config.atol + config.rtol * analytic.abs().max(numeric.abs()));
            report.checked += 1;
            report.worst_ratio = report.worst_ratio.max(ratio);
            if ratio > 1.0 {
                report.failures.push(GradMismatch { param: store.name(id).to_string(), index: i, analytic, numeric });
            }
        }
    }
    Ok(report)
}
