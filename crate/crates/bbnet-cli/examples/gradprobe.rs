//! Scratch: full-network finite-difference gradient check.

use std::collections::BTreeMap;

use bbnet_core::config::ModelConfig;
use bbnet_core::gradcheck::{check_coords, fd_grad, rel_err, FD_STEP};
use bbnet_core::losses::total_loss;
use bbnet_core::network::{forward, Ablation};
use bbnet_core::params::ParamStore;
use bbnet_core::tape::Tape;
use bbnet_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut cfg = ModelConfig::tiny();
    cfg.input_size = 48;
    cfg.channels = 4;
    cfg.validate().unwrap();
    let store = ParamStore::init(&cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let b = 2usize;
    let s = cfg.input_size;
    let img = Tensor::new(
        vec![b, 3, s, s],
        (0..b * 3 * s * s).map(|_| rng.random_range(0.0..1.0)).collect(),
    );
    // Soft mask so wBCE/wIoU see nontrivial targets.
    let mask = Tensor::new(
        vec![b, 1, s, s],
        (0..b * s * s)
            .map(|i| if (i / 7) % 3 == 0 { 1.0 } else { 0.0 })
            .collect(),
    );
    let ab = Ablation::default();

    let eval = |st: &ParamStore| -> f64 {
        let mut tape = Tape::new();
        let (out, _) = forward(&mut tape, st, &cfg, ab, img.clone(), false).unwrap();
        let lg = total_loss(&mut tape, &out, &mask, false);
        tape.value(lg.l_total).item()
    };

    let mut tape = Tape::new();
    let (out, bound) = forward(&mut tape, &store, &cfg, ab, img.clone(), false).unwrap();
    let lg = total_loss(&mut tape, &out, &mask, false);
    let grads = tape.backward(lg.l_total);
    let analytic: BTreeMap<String, Tensor> = bound.collect_grads(&store, &grads);

    let names: Vec<String> = store.names().cloned().collect();
    let mut worst: Vec<(f64, String, usize, f64, f64)> = Vec::new();
    let mut eval_fn = eval;
    for name in &names {
        let len = store.get(name).unwrap().data().len();
        let picks = 3.min(len);
        let mut coords = Vec::new();
        for _ in 0..picks {
            coords.push((name.clone(), rng.random_range(0..len)));
        }
        let reports = check_coords(&store, &coords, &analytic, FD_STEP, &mut eval_fn);
        for r in reports {
            worst.push((r.rel_err, r.name, r.index, r.analytic, r.numeric));
        }
    }
    worst.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    println!("checked {} coords over {} params", worst.len(), names.len());
    for (e, n, i, a, num) in worst.iter().take(15) {
        println!("rel {e:.3e}  {n}[{i}]  analytic {a:+.6e}  numeric {num:+.6e}");
    }
    let _ = (fd_grad::<fn(&ParamStore) -> f64>, rel_err);
}
