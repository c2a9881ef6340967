#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn camtrap<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_camtrap"))
        .args(args)
        .env_remove("CAMTRAP_JOBS")
        .output()
        .expect("spawn camtrap")
}

pub fn ok<I, S>(args: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let out = camtrap(args);
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

/// Runs every subcommand over the fixture dataset into `root` and returns
/// the produced output directories.
pub fn pipeline(root: &Path, jobs: usize) -> Vec<PathBuf> {
    let fx = fixtures();
    let data = s(&fx.join("data"));
    let preds = s(&fx.join("data/predictions.txt"));
    let range = s(&fx.join("range_map.csv"));
    let d = |n: &str| s(&root.join(n));
    let j = jobs.to_string();
    let runs: Vec<Vec<String>> = vec![
        vec!["ingest", "--dataset", &data, "--out", &d("ingest")],
        vec!["validate", "--dataset", &data, "--out", &d("validate")],
        vec![
            "stats",
            "--dataset",
            &data,
            "--out",
            &d("stats"),
            "--top-n",
            "3",
        ],
        vec![
            "split",
            "--dataset",
            &data,
            "--out",
            &d("split"),
            "--train-fraction",
            "0.7",
        ],
        vec![
            "eval",
            "--dataset",
            &data,
            "--predictions",
            &preds,
            "--split",
            &d("split"),
            "--out",
            &d("eval"),
        ],
        vec![
            "eval",
            "--dataset",
            &data,
            "--predictions",
            &preds,
            "--range-map",
            &range,
            "--level",
            "genus",
            "--k",
            "1",
            "--k",
            "2",
            "--out",
            &d("eval_genus"),
        ],
        vec![
            "geofilter",
            "--dataset",
            &data,
            "--predictions",
            &preds,
            "--range-map",
            &range,
            "--out",
            &d("geofilter"),
        ],
        vec![
            "weights",
            "--dataset",
            &data,
            "--split",
            &d("split"),
            "--out",
            &d("weights"),
        ],
        vec![
            "sequences",
            "--dataset",
            &data,
            "--predictions",
            &preds,
            "--out",
            &d("sequences"),
        ],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    let mut dirs = Vec::new();
    for mut args in runs {
        args.extend(["--jobs".to_string(), j.clone()]);
        ok(&args);
        dirs.push(root.join(&args[args.iter().position(|a| a == "--out").unwrap() + 1]));
    }
    dirs
}

/// All files under `dir`, relative path and content, in path order.
pub fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}
