//! Scratch probe: train the tiny profile with selected branches ablated and
//! report train-split quality, to isolate learning bottlenecks.

use bbnet_cli::dataset::scan_dataset;
use bbnet_cli::train::{evaluate_model, train_model};
use bbnet_core::config::{ModelConfig, TrainConfig};
use bbnet_core::network::Ablation;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut ab = Ablation::default();
    let mut lr = 0.01;
    let mut steps = 150;
    let mut channels = 16;
    let mut iters = 2;
    let mut consensus = true;
    let mut seed = 11u64;
    let mut data = String::from("/tmp/cal/data/train");
    for a in &args {
        match a.as_str() {
            "no_cfe" => ab.no_cfe = true,
            "no_ofs" => ab.no_ofs = true,
            "no_lgr" => ab.no_lgr = true,
            "no_gamma" => ab.no_gamma = true,
            "consensus_off" => consensus = false,
            "norms" => {}
            _ if a.starts_with("lr=") => lr = a[3..].parse().unwrap(),
            _ if a.starts_with("steps=") => steps = a[6..].parse().unwrap(),
            _ if a.starts_with("ch=") => channels = a[3..].parse().unwrap(),
            _ if a.starts_with("iters=") => iters = a[6..].parse().unwrap(),
            _ if a.starts_with("data=") => data = a[5..].to_string(),
            _ if a.starts_with("seed=") => seed = a[5..].parse().unwrap(),
            other => panic!("unknown arg {other}"),
        }
    }

    let mut model = ModelConfig::tiny();
    model.input_size = 96;
    model.channels = channels;
    model.multiview_iters = iters;
    model.group_consensus = consensus;
    let mut train = TrainConfig::default();
    train.learning_rate = lr;
    train.batch_size = 8;
    train.max_steps = steps;
    train.seed = seed;

    let records = scan_dataset(std::path::Path::new(&data)).unwrap().records;

    if args.iter().any(|a| a == "norms") {
        norm_probe(&model, &train, ab);
        return;
    }

    let out = tempfile::tempdir().unwrap();
    let t0 = std::time::Instant::now();
    let run = train_model(&model, &train, &records, ab, out.path()).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    let n = run.losses.len();
    let head: f64 = run.losses[..20.min(n)].iter().map(|l| l.l_total).sum::<f64>() / 20.min(n) as f64;
    let tail: f64 = run.losses[n.saturating_sub(20)..].iter().map(|l| l.l_total).sum::<f64>()
        / 20.min(n) as f64;
    let report = evaluate_model(&run.store, &model, &records, ab).unwrap();
    println!(
        "ablation {ab:?} lr {lr} steps {steps}: s_alpha {:.4} mae {:.4} f_max {:.4} e_max {:.4} loss {head:.3}->{tail:.3} ({dt:.0}s)",
        report.mean.s_alpha, report.mean.mae, report.mean.f_max, report.mean.e_max
    );
}

/// Per-group gradient norms along a short training run.
fn norm_probe(model: &ModelConfig, train: &TrainConfig, ab: Ablation) {
    use bbnet_cli::dataset::sample_group;
    use bbnet_core::losses::total_loss;
    use bbnet_core::network::forward;
    use bbnet_core::optim::Sgd;
    use bbnet_core::params::ParamStore;
    use bbnet_core::tape::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let records = scan_dataset(std::path::Path::new("/tmp/cal/data/train"))
        .unwrap()
        .records;
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut store = ParamStore::init(model, train.seed);
    let mut sgd = Sgd::from_train_config(train);
    let groups = ["backbone", "proj", "cfe", "ofs", "lgr", "dec", "head"];
    for step in 0..train.max_steps {
        let group = sample_group(&records, train.batch_size, model.input_size, &mut rng).unwrap();
        let mut tape = Tape::new();
        let (out, bound) = forward(&mut tape, &store, model, ab, group.images, false).unwrap();
        let graph = total_loss(&mut tape, &out, &group.masks, train.bce_only);
        let terms = graph.terms(&tape);
        let grads = tape.backward(graph.l_total);
        let gmap = bound.collect_grads(&store, &grads);
        if step % 5 == 0 {
            let mut line = format!("step {step:3} loss {:7.3} |", terms.l_total);
            let mut total = 0.0;
            for prefix in groups {
                let sq: f64 = gmap
                    .iter()
                    .filter(|(k, _)| k.starts_with(prefix))
                    .map(|(_, g)| g.data().iter().map(|v| v * v).sum::<f64>())
                    .sum();
                total += sq;
                line.push_str(&format!(" {prefix} {:9.3}", sq.sqrt()));
            }
            line.push_str(&format!(" | total {:9.3}", total.sqrt()));
            println!("{line}");
        }
        sgd.step(&mut store, &gmap);
    }
}
