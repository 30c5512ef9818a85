//! Finite-difference verification of tape gradients.

use super::{AutodiffError, Result, Tape, ValueId};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// When the total parameter entry count exceeds this, a random subset of
    /// entries is checked instead of all of them.
    pub sample_threshold: usize,
    /// Number of entries checked in sampling mode.
    pub sample_size: usize,
    /// Seed for choosing the sampled entries.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            sample_threshold: 4096,
            sample_size: 4096,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over all checked entries.
    pub max_rel_error: f64,
    pub checked_entries: usize,
    /// Entries skipped because the function is locally non-smooth there
    /// (e.g. a relu kink inside the difference interval).
    pub excluded_entries: usize,
    /// `(parameter index, flat entry index)` of the worst entry.
    pub worst_entry: Option<(usize, usize)>,
}

/// Compares analytic gradients against central finite differences.
///
/// `build` must construct the same scalar loss every time it is called with
/// the same parameter values; determinism is verified with a second forward
/// pass before any differencing. Entries where the loss is locally kinked —
/// detected by a large second difference `|f⁺ + f⁻ − 2f₀|` — are excluded
/// rather than reported as gradient errors, since a one-sided derivative is
/// expected to disagree with the two-sided estimate there.
pub fn grad_check<F>(params: &[Tensor], build: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[ValueId]) -> Result<ValueId>,
{
    let eval = |theta: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = theta
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect::<Result<_>>()?;
        let loss = build(&mut tape, &ids)?;
        let (r, c) = tape.value(loss).shape();
        if (r, c) != (1, 1) {
            return Err(AutodiffError::LossNotScalar(r, c));
        }
        Ok(tape.value(loss).item())
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = params
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect::<Result<_>>()?;
    let loss = build(&mut tape, &ids)?;
    let (r, c) = tape.value(loss).shape();
    if (r, c) != (1, 1) {
        return Err(AutodiffError::LossNotScalar(r, c));
    }
    let f0 = tape.value(loss).item();
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .map(|&id| tape.grad(id).expect("leaf gradient").clone())
        .collect();

    let f0_again = eval(params)?;
    if f0.to_bits() != f0_again.to_bits() {
        return Err(AutodiffError::NonDeterministicBuilder(f0, f0_again));
    }

    // Entry selection.
    let sizes: Vec<usize> = params.iter().map(Tensor::len).collect();
    let total: usize = sizes.iter().sum();
    let flat_to_entry = |flat: usize| -> (usize, usize) {
        let mut rest = flat;
        for (p, &s) in sizes.iter().enumerate() {
            if rest < s {
                return (p, rest);
            }
            rest -= s;
        }
        unreachable!("flat index within total")
    };
    let chosen: Vec<usize> = if total > cfg.sample_threshold {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut pool: Vec<usize> = (0..total).collect();
        for i in 0..cfg.sample_size.min(total) {
            let j = rng.gen_range(i..total);
            pool.swap(i, j);
        }
        pool.truncate(cfg.sample_size.min(total));
        pool
    } else {
        (0..total).collect()
    };

    // Kinks move the one-sided slopes apart by O(1) while a smooth loss has
    // second difference O(eps^2); eps^1.5 separates the two regimes.
    let kink_threshold = cfg.eps.powf(1.5);
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked_entries: 0,
        excluded_entries: 0,
        worst_entry: None,
    };

    for flat in chosen {
        let (p, e) = flat_to_entry(flat);
        let orig = work[p].as_slice()[e];
        work[p].as_mut_slice()[e] = orig + cfg.eps;
        let f_plus = eval(&work)?;
        work[p].as_mut_slice()[e] = orig - cfg.eps;
        let f_minus = eval(&work)?;
        work[p].as_mut_slice()[e] = orig;

        if (f_plus + f_minus - 2.0 * f0).abs() > kink_threshold {
            report.excluded_entries += 1;
            continue;
        }
        let numeric = (f_plus - f_minus) / (2.0 * cfg.eps);
        let exact = analytic[p].as_slice()[e];
        let denom = exact.abs().max(numeric.abs()).max(1.0);
        let rel = (exact - numeric).abs() / denom;
        report.checked_entries += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_entry = Some((p, e));
        }
    }
    Ok(report)
}
