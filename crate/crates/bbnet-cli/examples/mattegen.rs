//! Scratch: generate a matte-style control dataset.

use std::path::Path;

use bbnet_cli::synth::{synth_generate_styled, Style};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.first().map(String::as_str).unwrap_or("/tmp/cal/matte");
    let groups: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let s = synth_generate_styled(Path::new(out), groups, 8, 96, 7, Style::Matte).unwrap();
    println!("wrote {} files under {}", s.image_files, s.root.display());
}
