//! Collect metrics and run records under a directory into one markdown
//! summary.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args as ClapArgs;
use serde_json::Value;

use abdoshape::io::atomic_write;

#[derive(Debug, ClapArgs)]
pub struct Args {
    /// Directory scanned recursively for metrics, embedding summaries, and
    /// run records.
    #[arg(long)]
    pub dir: PathBuf,
    /// Output file (defaults to <dir>/report.md).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn collect(dir: &Path, suffix: &str, found: &mut Vec<PathBuf>) {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return;
    };
    let mut entries: Vec<_> = entries.flatten().map(|e| e.path()).collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect(&path, suffix, found);
        } else if path.file_name().is_some_and(|n| n.to_string_lossy().ends_with(suffix)) {
            found.push(path);
        }
    }
}

fn get_str(v: &Value, key: &str) -> String {
    match &v[key] {
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

fn get_f64(v: &Value, key: &str) -> String {
    v[key]
        .as_f64()
        .map(|x| format!("{x:.4}"))
        .unwrap_or_else(|| "-".into())
}

pub fn run(args: Args) -> Result<()> {
    let mut out = String::from("# Run report\n");

    let mut metrics = Vec::new();
    collect(&args.dir, "metrics.json", &mut metrics);
    if !metrics.is_empty() {
        out.push_str("\n## Classification metrics\n\n");
        out.push_str("| path | method | structures | train AUC | test AUC |\n");
        out.push_str("|------|--------|------------|-----------|----------|\n");
        for path in &metrics {
            let v: Value = serde_json::from_str(
                &std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?,
            )?;
            let rel = path.strip_prefix(&args.dir).unwrap_or(path);
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} |\n",
                rel.display(),
                get_str(&v, "method"),
                get_str(&v, "structures"),
                get_f64(&v, "train_auc"),
                v["test_auc"]
                    .as_f64()
                    .or(v["auc"].as_f64())
                    .map(|x| format!("{x:.4}"))
                    .unwrap_or_else(|| "-".into()),
            ));
        }
    }

    let mut embeddings = Vec::new();
    collect(&args.dir, "embedding.json", &mut embeddings);
    if !embeddings.is_empty() {
        out.push_str("\n## Embeddings\n\n");
        out.push_str("| path | subjects | dim | silhouette (true) | KL |\n");
        out.push_str("|------|----------|-----|-------------------|----|\n");
        for path in &embeddings {
            let v: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            let rel = path.strip_prefix(&args.dir).unwrap_or(path);
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} |\n",
                rel.display(),
                get_str(&v, "subject_count"),
                get_str(&v, "feature_dim"),
                get_f64(&v, "silhouette_true"),
                get_f64(&v, "kl_final"),
            ));
        }
    }

    let mut records = Vec::new();
    collect(&args.dir, ".runrecord.json", &mut records);
    if !records.is_empty() {
        out.push_str("\n## Run records\n\n");
        out.push_str("| path | command | wall time (s) |\n");
        out.push_str("|------|---------|---------------|\n");
        for path in &records {
            let v: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            let rel = path.strip_prefix(&args.dir).unwrap_or(path);
            let command = v["command"]
                .as_array()
                .map(|a| {
                    a.iter()
                        .filter_map(Value::as_str)
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "| {} | `{}` | {} |\n",
                rel.display(),
                command,
                get_f64(&v, "wall_time_s"),
            ));
        }
    }

    let out_path = args
        .out
        .clone()
        .unwrap_or_else(|| args.dir.join("report.md"));
    atomic_write(&out_path, out.as_bytes())?;
    println!(
        "report: {} metrics, {} embeddings, {} run records -> {}",
        metrics.len(),
        embeddings.len(),
        records.len(),
        out_path.display()
    );
    Ok(())
}
