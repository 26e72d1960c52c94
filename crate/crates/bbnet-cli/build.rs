//! Stamps the build with a content hash of the workspace sources so run
//! manifests can pin the exact code version.

use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

fn collect_rs(dir: &Path, out: &mut Vec<PathBuf>) {
    let Ok(entries) = fs::read_dir(dir) else {
        return;
    };
    let mut entries: Vec<_> = entries.filter_map(Result::ok).map(|e| e.path()).collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_rs(&path, out);
        } else if path.extension().is_some_and(|e| e == "rs" || e == "toml") {
            out.push(path);
        }
    }
}

fn main() {
    let manifest = PathBuf::from(std::env::var("CARGO_MANIFEST_DIR").unwrap());
    let roots = [
        manifest.join("src"),
        manifest.join("Cargo.toml"),
        manifest.join("../bbnet-core/src"),
        manifest.join("../bbnet-core/Cargo.toml"),
    ];
    let mut files = Vec::new();
    for root in &roots {
        if root.is_dir() {
            collect_rs(root, &mut files);
        } else if root.is_file() {
            files.push(root.clone());
        }
    }
    let mut hasher = Sha256::new();
    for f in &files {
        if let Ok(bytes) = fs::read(f) {
            hasher.update(f.file_name().unwrap().to_string_lossy().as_bytes());
            hasher.update(bytes);
        }
        println!("cargo:rerun-if-changed={}", f.display());
    }
    let digest = hasher.finalize();
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    println!("cargo:rustc-env=BBNET_CODE_HASH={hex}");
}
