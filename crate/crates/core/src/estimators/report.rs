//! Collected estimates for one work ledger, as CSV and as a text summary.

use std::fmt::Write as _;
use std::path::Path;

use super::{
    bar_equilibrium, bootstrap_std, bootstrap_std_pair, elbo_eubo, fep_estimate, iwae_backward, iwae_forward,
    min_variance_estimate,
};
use crate::error::{Error, Result};
use crate::numcore::mean;
use crate::transport::WorkLedger;

/// Drop rates above this flag the report.
pub const MAX_DROP_RATE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub estimator: String,
    pub value: f64,
    pub std: f64,
    pub iters: Option<usize>,
    pub flags: Vec<String>,
}

impl ReportRow {
    fn new(estimator: &str, value: f64, std: f64) -> Self {
        ReportRow {
            estimator: estimator.into(),
            value,
            std,
            iters: None,
            flags: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EstimateReport {
    pub rows: Vec<ReportRow>,
    pub n_forward: usize,
    pub n_backward: usize,
    pub drop_rate: f64,
    /// Converged constant of the two-sided fixed point, with its iterations.
    pub c_final: Option<(f64, usize)>,
    pub flags: Vec<String>,
}

impl EstimateReport {
    pub fn get(&self, estimator: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.estimator == estimator)
    }

    pub fn value(&self, estimator: &str) -> Option<f64> {
        self.get(estimator).map(|r| r.value)
    }

    /// Adds `fep` and `bar` rows from `ΔU = U_b − U_a` on endpoint samples.
    pub fn add_equilibrium(&mut self, du_a: &[f64], du_b: &[f64], resamples: usize, seed: u64) -> Result<()> {
        let zeros = vec![0.0; du_a.len()];
        let fep = fep_estimate(&zeros, du_a)?;
        let fep_std = bootstrap_std(du_a, resamples, seed, |w| -crate::numcore::log_mean_exp(&neg(w)));
        self.rows.push(ReportRow::new("fep", fep, fep_std));
        let bar = bar_equilibrium(du_a, du_b)?;
        let bar_std = bootstrap_std_pair(du_a, du_b, resamples, seed ^ 1, super::bar_resample);
        let mut row = ReportRow::new("bar", bar.value, bar_std);
        row.iters = Some(bar.iters);
        if !bar.converged {
            row.flags.push("nonconverged".into());
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("estimator,value,std,iters,flags\n");
        for r in &self.rows {
            let iters = r.iters.map(|i| i.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:.12e},{:.6e},{},{}",
                r.estimator,
                r.value,
                r.std,
                iters,
                r.flags.join(";")
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "paths: {} forward, {} backward (drop rate {:.4}%)",
            self.n_forward,
            self.n_backward,
            100.0 * self.drop_rate
        );
        for r in &self.rows {
            let _ = write!(out, "  {:<14} {:>+12.6} ± {:.6}", r.estimator, r.value, r.std);
            if let Some(i) = r.iters {
                let _ = write!(out, "  ({i} iterations)");
            }
            if !r.flags.is_empty() {
                let _ = write!(out, "  [{}]", r.flags.join(", "));
            }
            out.push('\n');
        }
        if let Some((c, iters)) = self.c_final {
            let _ = writeln!(out, "  converged C = {c:.10} after {iters} iterations");
        }
        if !self.flags.is_empty() {
            let _ = writeln!(out, "flags: {}", self.flags.join(", "));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_csv().as_bytes())
    }
}

fn neg(w: &[f64]) -> Vec<f64> {
    w.iter().map(|v| -v).collect()
}

/// Every estimator that applies to the ledger. Bootstrap resample `r` of
/// each estimator uses stream `r` of a seed derived from `seed`.
pub fn estimate_ledger(ledger: &WorkLedger, resamples: usize, seed: u64) -> Result<EstimateReport> {
    if ledger.is_empty() {
        return Err(Error::Empty("work ledger has no valid paths".into()));
    }
    let (fw, bw) = (&ledger.forward, &ledger.backward);
    let mut report = EstimateReport {
        n_forward: fw.len(),
        n_backward: bw.len(),
        drop_rate: ledger.drop_rate(),
        ..EstimateReport::default()
    };
    if report.drop_rate > MAX_DROP_RATE {
        report.flags.push(format!("drop_rate={:.6}", report.drop_rate));
    }
    let sub = |k: u64| crate::seeds::splitmix64(seed ^ k);
    if let Some(v) = iwae_forward(fw) {
        let s = bootstrap_std(fw, resamples, sub(1), |w| iwae_forward(w).unwrap_or(f64::NAN));
        report.rows.push(ReportRow::new("iwae_forward", v, s));
    }
    if let Some(v) = iwae_backward(bw) {
        let s = bootstrap_std(bw, resamples, sub(2), |w| iwae_backward(w).unwrap_or(f64::NAN));
        report.rows.push(ReportRow::new("iwae_backward", v, s));
    }
    let (elbo, eubo) = elbo_eubo(fw, bw);
    if let Some(v) = elbo {
        report.rows.push(ReportRow::new("elbo", v, bootstrap_std(bw, resamples, sub(3), mean)));
    }
    if let Some(v) = eubo {
        report.rows.push(ReportRow::new("eubo", v, bootstrap_std(fw, resamples, sub(4), mean)));
    }
    if let (Some(lo), Some(hi)) = (elbo, eubo) {
        if lo > hi {
            report.flags.push("bound_inversion".into());
        }
    }
    if fw.len() >= 2 && bw.len() >= 2 {
        let fp = min_variance_estimate(fw, bw)?;
        let s = bootstrap_std_pair(fw, bw, resamples, sub(5), super::min_variance_resample);
        let mut row = ReportRow::new("min_variance", fp.value, s);
        row.iters = Some(fp.iters);
        if !fp.converged {
            row.flags.push("nonconverged".into());
            report.flags.push("nonconverged".into());
        }
        report.c_final = Some((fp.value, fp.iters));
        report.rows.push(row);
    }
    Ok(report)
}
