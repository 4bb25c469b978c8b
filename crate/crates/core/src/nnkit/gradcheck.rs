//! Central finite-difference gradient checking against the tape.

use rand::seq::index::sample;

use super::init::seeded;
use super::store::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor so that near-zero gradients compare absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares tape gradients of the scalar built by `f` with central
/// differences on up to `coords` seeded coordinates of every trainable entry.
pub fn check_gradients<F>(store: &ParamStore, coords: usize, seed: u64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward(loss)?;
    let grads = tape.param_grads();

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = f(&mut t, s)?;
        Ok(t.value(l).data[0])
    };

    let mut rng = seeded(seed);
    let mut report = GradCheckReport::default();
    let mut probe = store.clone();
    let names: Vec<String> = store
        .names()
        .filter(|n| store.entry(n).is_some_and(|e| e.trainable))
        .map(str::to_string)
        .collect();
    for name in names {
        let n = store.get(&name).map_or(0, |t| t.len());
        if n == 0 {
            continue;
        }
        let picks = sample(&mut rng, n, coords.min(n)).into_vec();
        for i in picks {
            let orig = store.get(&name).expect("listed").data[i];
            probe.get_mut(&name).expect("listed").data[i] = orig + FD_STEP;
            let up = eval(&probe)?;
            probe.get_mut(&name).expect("listed").data[i] = orig - FD_STEP;
            let down = eval(&probe)?;
            probe.get_mut(&name).expect("listed").data[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = grads.get(&name).map_or(0.0, |g| g.data[i]);
            let e = rel_err(analytic, numeric);
            report.checked += 1;
            if e >= report.max_rel_err {
                report.max_rel_err = e;
                report.worst = Some((name.clone(), i, analytic, numeric));
            }
        }
    }
    Ok(report)
}
