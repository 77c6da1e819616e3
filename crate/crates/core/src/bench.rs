//! Repeated timing of graph construction and execution, summarised by
//! median, minimum and maximum per phase.

use std::time::Instant;

use crate::executor::{execute, LuOperands};
use crate::hmatrix::{Ctx, HMatrix, TruncationPolicy};
use crate::problems::Problem;
use crate::taskgraph::{compute_dag, par_compute_dag, DagConfig, Mode, TaskGraph};
use crate::{Error, Result};

pub const CSV_HEADER: &str = "n,mode,workers,phase,repeats,median_ms,min_ms,max_ms";

/// Summary of the samples of one phase.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseStats {
    pub phase: &'static str,
    pub repeats: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl PhaseStats {
    /// `None` for an empty sample. The median of an even count is the mean
    /// of the two middle values.
    pub fn from_samples(phase: &'static str, samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut xs = samples.to_vec();
        xs.sort_by(f64::total_cmp);
        let k = xs.len();
        let median_ms = if k % 2 == 1 { xs[k / 2] } else { 0.5 * (xs[k / 2 - 1] + xs[k / 2]) };
        Some(PhaseStats { phase, repeats: k, median_ms, min_ms: xs[0], max_ms: xs[k - 1] })
    }
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub n: usize,
    pub mode: Mode,
    pub workers: usize,
    pub phases: Vec<PhaseStats>,
}

impl BenchReport {
    pub fn csv_rows(&self) -> Vec<String> {
        self.phases
            .iter()
            .map(|p| {
                format!(
                    "{},{},{},{},{},{:.3},{:.3},{:.3}",
                    self.n, self.mode, self.workers, p.phase, p.repeats, p.median_ms, p.min_ms, p.max_ms
                )
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub dag: DagConfig,
    pub workers: usize,
    pub repeats: usize,
    /// Also execute each built graph under this policy.
    pub exec: Option<TruncationPolicy>,
}

/// Builds the graph with [`compute_dag`] for one worker and
/// [`par_compute_dag`] otherwise; returns it with the time in milliseconds.
pub fn timed_build(p: &Problem, cfg: &DagConfig, workers: usize) -> Result<(TaskGraph, f64)> {
    let t = Instant::now();
    let g = if workers == 1 { compute_dag(&p.blocks, cfg)? } else { par_compute_dag(&p.blocks, cfg, workers)? };
    Ok((g, t.elapsed().as_secs_f64() * 1e3))
}

pub fn run(p: &Problem, cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be at least 1".into()));
    }
    if cfg.workers == 0 {
        return Err(Error::InvalidParameter("workers must be at least 1".into()));
    }
    let mut build = Vec::with_capacity(cfg.repeats);
    let mut exec = Vec::new();
    for _ in 0..cfg.repeats {
        let (g, ms) = timed_build(p, &cfg.dag, cfg.workers)?;
        build.push(ms);
        if let Some(pol) = cfg.exec {
            let ops = LuOperands::new(HMatrix::assemble(p.blocks.clone(), p.kernel(), pol));
            exec.push(execute(&g, &ops, cfg.workers, &Ctx::new(pol))?.exec_ms);
        }
    }
    let phases = [("build", build), ("exec", exec)]
        .into_iter()
        .filter_map(|(name, xs)| PhaseStats::from_samples(name, &xs))
        .collect();
    Ok(BenchReport { n: p.n, mode: cfg.dag.mode, workers: cfg.workers, phases })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_count_is_middle_mean() {
        let s = PhaseStats::from_samples("build", &[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.median_ms, s.min_ms, s.max_ms), (2.5, 1.0, 4.0));
        assert!(PhaseStats::from_samples("build", &[]).is_none());
    }
}
