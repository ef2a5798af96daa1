use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ComputeError, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates sampled per parameter tensor.
    pub max_coords: usize,
    /// Coordinates whose analytic and numeric gradients are both below this
    /// magnitude are skipped.
    pub skip_below: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords: 200,
            skip_below: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub coords_skipped: usize,
    /// Parameter name, flat index, analytic, numeric at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares tape gradients of `f` against central differences on a seeded
/// sample of coordinates of every parameter. `store` is restored afterwards.
pub fn grad_check<F>(
    store: &mut ParamStore,
    f: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport, ComputeError>
where
    F: Fn(&mut Tape<'_>) -> Result<Var, ComputeError>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        tape.backward(loss)?
    };
    let eval = |store: &ParamStore| -> Result<f64, ComputeError> {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        Ok(tape.value(loss).item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        coords_skipped: 0,
        worst: None,
    };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let n = store.get(id).len();
        let mut coords: Vec<usize> = sample(&mut rng, n, n.min(opts.max_coords)).into_vec();
        coords.sort_unstable();
        for c in coords {
            let orig = store.get(id).data()[c];
            store.get_mut(id).data_mut()[c] = orig + opts.eps;
            let plus = eval(store);
            store.get_mut(id).data_mut()[c] = orig - opts.eps;
            let minus = eval(store);
            store.get_mut(id).data_mut()[c] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.eps);
            let a = analytic.get(id).data()[c];
            if a.abs() < opts.skip_below && numeric.abs() < opts.skip_below {
                report.coords_skipped += 1;
                continue;
            }
            report.coords_checked += 1;
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((store.name(id).to_string(), c, a, numeric));
            }
        }
    }
    Ok(report)
}
