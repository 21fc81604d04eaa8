use std::path::{Path, PathBuf};

use lra_core::experiment::ExperimentConfig;

fn json_files(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            json_files(&p, out);
        } else if p.extension().is_some_and(|e| e == "json") {
            out.push(p);
        }
    }
}

#[test]
fn shipped_configs_parse_and_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut files = Vec::new();
    json_files(&root, &mut files);
    assert!(files.len() > 50, "only {} configs found", files.len());
    for f in &files {
        let cfg = ExperimentConfig::from_file(f).unwrap_or_else(|e| panic!("{}: {e}", f.display()));
        cfg.validate()
            .unwrap_or_else(|e| panic!("{}: {e}", f.display()));
    }
}
