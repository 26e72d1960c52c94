//! Central finite-difference validation of reverse-mode gradients.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Default step for central differences on float64 graphs.
pub const FD_STEP: f64 = 1e-5;

/// Relative error with an absolute floor so near-zero pairs do not blow up.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-4)
}

/// One checked parameter coordinate.
#[derive(Debug, Clone)]
pub struct CoordReport {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Worst-case summary over a batch of coordinate checks.
#[derive(Debug, Clone)]
pub struct CheckSummary {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<CoordReport>,
}

pub fn summarize(reports: &[CoordReport]) -> CheckSummary {
    let mut worst: Option<CoordReport> = None;
    for r in reports {
        if worst.as_ref().map_or(true, |w| r.rel_err > w.rel_err) {
            worst = Some(r.clone());
        }
    }
    CheckSummary {
        checked: reports.len(),
        max_rel_err: worst.as_ref().map_or(0.0, |w| w.rel_err),
        worst,
    }
}

/// Uniformly samples `per_param` coordinates from each named parameter.
pub fn sample_coords(
    store: &ParamStore,
    names: &[&str],
    per_param: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    for name in names {
        let len = store
            .get(name)
            .unwrap_or_else(|_| panic!("unknown parameter '{name}'"))
            .data()
            .len();
        for _ in 0..per_param {
            out.push((String::from(*name), rng.random_range(0..len)));
        }
    }
    out
}

/// Central finite difference of `eval` along one parameter coordinate.
pub fn fd_grad<F>(store: &ParamStore, name: &str, index: usize, h: f64, eval: &mut F) -> f64
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut probe = store.clone();
    probe.get_mut(name).unwrap().data_mut()[index] += h;
    let plus = eval(&probe);
    probe.get_mut(name).unwrap().data_mut()[index] -= 2.0 * h;
    let minus = eval(&probe);
    (plus - minus) / (2.0 * h)
}

/// Compares analytic gradients against central differences at the given
/// coordinates. `analytic` maps parameter names to gradient tensors;
/// `eval` rebuilds the scalar objective from a parameter store.
pub fn check_coords<F>(
    store: &ParamStore,
    coords: &[(String, usize)],
    analytic: &BTreeMap<String, Tensor>,
    h: f64,
    mut eval: F,
) -> Vec<CoordReport>
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut out = Vec::with_capacity(coords.len());
    for (name, index) in coords {
        let an = analytic
            .get(name)
            .unwrap_or_else(|| panic!("no analytic gradient for '{name}'"))
            .data()[*index];
        let num = fd_grad(store, name, *index, h, &mut eval);
        out.push(CoordReport {
            name: name.clone(),
            index: *index,
            analytic: an,
            numeric: num,
            rel_err: rel_err(an, num),
        });
    }
    out
}
