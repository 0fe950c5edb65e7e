#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

// Four identities with two images each; pairs (1,2) (3,4) (5,6) (7,8).
// A agrees on every pair, B differs on two, Blurry on one.
pub const LABELS: &str = "\
8
A B Blurry
000001.jpg 1 1 1
000002.jpg 1 -1 -1
000003.jpg -1 1 1
000004.jpg -1 -1 1
000005.jpg 1 1 -1
000006.jpg 1 1 -1
000007.jpg -1 -1 -1
000008.jpg -1 -1 -1
";

pub const EMBEDDINGS: &str = "\
dim=4
000001.jpg p0 1 0 0 0
000002.jpg p0 0.99 0.01 0 0
000003.jpg p1 0 1 0 0
000004.jpg p1 0.01 0.99 0 0
000005.jpg p2 0 0 1 0
000006.jpg p2 0 0 0.99 0.01
000007.jpg p3 0 0 0 1
000008.jpg p3 0 0.01 0 0.99
";

pub struct Fixture {
    pub dir: tempfile::TempDir,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("attrs.txt"), LABELS).unwrap();
        fs::write(dir.path().join("emb.txt"), EMBEDDINGS).unwrap();
        Fixture { dir }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn root(&self) -> PathBuf {
        self.path("root")
    }
}

pub fn run(root: &Path, args: &[&str]) -> (i32, String, String) {
    let mut argv = vec!["labelforge".to_string(), "--data-root".into(), root.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = labelforge_cli::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

pub fn ok(root: &Path, args: &[&str]) -> String {
    let (code, out, err) = run(root, args);
    assert_eq!(code, 0, "{args:?} failed: {err}");
    out
}

/// Project `demo` with embeddings, detected pairs all confirmed as duplicates.
pub fn confirmed_project(f: &Fixture) {
    let root = f.root();
    let labels = f.path("attrs.txt");
    let emb = f.path("emb.txt");
    ok(&root, &["ingest", "labels", "--project", "demo", "--labels", labels.to_str().unwrap()]);
    ok(&root, &["ingest", "embeddings", "--project", "demo", "--file", emb.to_str().unwrap()]);
    ok(&root, &["dupes", "detect", "--project", "demo", "--threshold", "0.9"]);
    for pair in 0..4 {
        ok(&root, &["dupes", "verdict", "--project", "demo", "--pair", &pair.to_string(), "--verdict", "DUPLICATE", "--reviewer", "r1"]);
    }
}
