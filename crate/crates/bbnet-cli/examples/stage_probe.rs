//! One-off: stats of every stage of the base path at init.
use bbnet_cli::dataset::{sample_group, scan_dataset};
use bbnet_core::config::ModelConfig;
use bbnet_core::params::{BoundParams, ParamStore};
use bbnet_core::tape::Tape;
use bbnet_core::{backbone, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn stats(tape: &Tape, name: &str, v: bbnet_core::tape::Var) {
    let t = tape.value(v);
    let d = t.data();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("{name:>10}: shape {:?} mean {mean:+8.3} std {:8.3} min {lo:+9.3} max {hi:+9.3}", t.shape(), var.sqrt());
}

fn main() {
    let mut model = ModelConfig::tiny();
    model.input_size = 96;
    model.channels = 16;
    let records = scan_dataset(std::path::Path::new("/tmp/cal/data/train")).unwrap().records;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let store = ParamStore::init(&model, 11);
    let group = sample_group(&records, 8, 96, &mut rng).unwrap();
    let mut tape = Tape::new();
    let p = BoundParams::bind(&mut tape, &store);
    let input = tape.leaf(group.images);
    let pyr = backbone::extract(&mut tape, &p, input, model.backbone);
    for i in 0..5 {
        stats(&tape, &format!("pyr.f[{i}]"), pyr.f[i]);
    }
    let (f3p, f4p, f5p) = backbone::project(&mut tape, &p, &pyr);
    stats(&tape, "f3p", f3p);
    stats(&tape, "f4p", f4p);
    stats(&tape, "f5p", f5p);

    // Decoder path with a zero gate stand-in to see the skip scale alone.
    let (pw, pb) = p.conv("dec4.proj");
    let projected = tape.conv2d(pyr.f[3], pw, Some(pb), 1, 0, 0);
    stats(&tape, "dec4.proj", projected);
    let (pw3, pb3) = p.conv("dec3.proj");
    let projected3 = tape.conv2d(pyr.f[2], pw3, Some(pb3), 1, 0, 0);
    stats(&tape, "dec3.proj", projected3);
    let _ = Tensor::zeros(&[1]);
}
