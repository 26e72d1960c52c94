//! Scratch: inspect a trained checkpoint's gamma and aux-head behavior.

use std::path::Path;


use bbnet_cli::dataset::scan_dataset;
use bbnet_core::network::{forward, Ablation};
use bbnet_core::tape::Tape;

fn stats(name: &str, d: &[f64]) {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let mn = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let mx = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("{name}: mean {mean:+.4} min {mn:+.4} max {mx:+.4}");
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let ckpt = bbnet_cli::checkpoint::load(Path::new(&args[0])).unwrap();
    println!("step {} seed {}", ckpt.step, ckpt.seed);
    for name in ["ofs.gamma"] {
        println!("{name} = {:?}", ckpt.store.get(name).unwrap().data());
    }
    let records = scan_dataset(Path::new(&args[1])).unwrap().records;
    let group = bbnet_cli::dataset::load_group(
        &records[0],
        &[0, 1, 2, 3],
        ckpt.config.input_size,
    )
    .unwrap();
    let batch = group.images;
    let mut tape = Tape::new();
    let (out, _) = forward(
        &mut tape,
        &ckpt.store,
        &ckpt.config,
        Ablation::default(),
        batch,
        false,
    )
    .unwrap();
    stats("p", tape.value(out.p).data());
    stats("p_ofs", tape.value(out.p_ofs).data());
}
