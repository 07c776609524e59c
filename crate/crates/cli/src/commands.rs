use std::fs;
use std::path::{Path, PathBuf};

use sbp_core::data::Split;
use sbp_core::pipeline::{
    build_network, compact, load_checkpoint, network_inputs, save_checkpoint, test_error, train_with, SparsityReport,
    TrainConfig, TrainError,
};
use sbp_core::Network;
use serde_json::json;

use crate::failure::{write_failure, Failure};
use crate::{ConfigArgs, EvalArgs, PruneArgs, ReportArgs, TrainArgs};

/// Reads the config and applies flag overrides. Every failure here, including
/// an unreadable file, is a configuration error.
fn load_config(args: &ConfigArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = TrainConfig::from_file(&args.config).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    if let Some(mode) = args.kl_mode {
        cfg.kl_mode = mode;
    }
    if let Some(t) = args.snr_threshold {
        cfg.snr_threshold = t;
    }
    cfg.shuffle_labels |= args.shuffle_labels;
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(cfg: &TrainConfig) -> Result<Split, Failure> {
    let data = cfg.dataset.load()?;
    cfg.validate_for_dataset(data.train.len())?;
    Ok(data)
}

fn set_threshold(net: &mut Network<f32>, threshold: Option<f64>) -> Result<(), Failure> {
    if let Some(t) = threshold {
        for (_, s) in net.sbp_layers_mut() {
            s.set_threshold(t)?;
        }
    }
    Ok(())
}

/// Output directory; every artifact a command writes goes through here.
struct OutDir(PathBuf);

impl OutDir {
    fn create(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| write_failure(dir, e))?;
        Ok(Self(dir.to_path_buf()))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, Failure> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| write_failure(&p, e))?;
        Ok(p)
    }

    fn checkpoint(&self, name: &str, net: &Network<f32>) -> Result<PathBuf, Failure> {
        let p = self.path(name);
        save_checkpoint(net, &p).map_err(|e| Failure::Internal(e.to_string()))?;
        Ok(p)
    }
}

fn to_json(v: impl Into<serde_json::Value>) -> String {
    let mut s = serde_json::to_string_pretty(&v.into()).expect("JSON values always serialize");
    s.push('\n');
    s
}

fn report_value(r: &SparsityReport) -> serde_json::Value {
    serde_json::to_value(r).expect("reports always serialize")
}

pub fn train(args: TrainArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.config)?;
    let data = load_data(&cfg)?;
    let out = OutDir::create(&args.out_dir)?;
    out.write("config.json", cfg.to_json())?;

    let progress = |r: &sbp_core::pipeline::MetricsRow| {
        let kept: Vec<String> = r.sparsity.iter().map(|s| format!("{}/{}", s.kept, s.total)).collect();
        eprintln!(
            "epoch {:>4}  nll {:.4}  kl {:.1}  test error {:.2}%  kept {}",
            r.epoch,
            r.train_nll,
            r.kl_total,
            100.0 * r.test_error,
            kept.join(" ")
        );
    };
    match train_with(&cfg, &data, progress) {
        Ok(outcome) => {
            let checkpoint = out.checkpoint("checkpoint.sbp", &outcome.network)?;
            let metrics = out.write("metrics.csv", outcome.metrics.to_csv())?;
            let report = out.write("report.json", to_json(report_value(&outcome.report)))?;
            let r = &outcome.report;
            let summary = json!({
                "seed": cfg.seed,
                "epochs": cfg.epochs,
                "kl_mode": cfg.kl_mode,
                "shuffle_labels": cfg.shuffle_labels,
                "test_error": r.test_error,
                "kept_fraction": r.kept_fraction(),
                "flops_before": r.flops_before,
                "flops_after": r.flops_after,
                "speedup": r.speedup,
                "final_metrics": outcome.metrics.last(),
                "artifacts": {
                    "checkpoint": checkpoint,
                    "metrics": metrics,
                    "report": report,
                },
            });
            out.write("summary.json", to_json(summary))?;
            print!("{}", r.to_table());
            Ok(())
        }
        Err(TrainError::Diverged { epoch, step, reason, last_good, metrics }) => {
            let saved = out.checkpoint("last_good.sbp", &last_good)?;
            out.write("metrics.csv", metrics.to_csv())?;
            Err(Failure::Diverged(format!(
                "training diverged at epoch {epoch} (step {step}): {reason}; last good network saved to {}",
                saved.display()
            )))
        }
        Err(TrainError::Failed(e)) => Err(e.into()),
    }
}

pub fn eval(args: EvalArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.config)?;
    let data = cfg.dataset.load()?;
    let mut net = load_checkpoint(&args.checkpoint)?;
    set_threshold(&mut net, args.config.snr_threshold)?;
    let inputs = network_inputs(&net, &data.test)?;
    let err = test_error(&net, &inputs, &data.test.labels)?;
    if args.json {
        let v = json!({
            "test_error": err,
            "accuracy": 1.0 - err,
            "examples": data.test.len(),
            "majority_rate": data.test.majority_rate(),
        });
        print!("{}", to_json(v));
    } else {
        println!("test error: {:.2}% on {} examples (accuracy {:.2}%)", 100.0 * err, data.test.len(), 100.0 * (1.0 - err));
    }
    Ok(())
}

pub fn prune(args: PruneArgs) -> Result<(), Failure> {
    let mut net = load_checkpoint(&args.checkpoint)?;
    set_threshold(&mut net, args.snr_threshold)?;
    let err = match &args.config {
        Some(path) => {
            let cfg = TrainConfig::from_file(path).map_err(|e| Failure::Config(e.to_string()))?;
            let data = cfg.dataset.load()?;
            let inputs = network_inputs(&net, &data.test)?;
            Some(test_error(&net, &inputs, &data.test.labels)?)
        }
        None => None,
    };
    let report = SparsityReport::for_network(&net, err)?;
    let compacted = compact(&net)?;
    let out = OutDir::create(&args.out_dir)?;
    out.checkpoint("compacted.sbp", &compacted)?;
    out.write("sparsity_report.json", to_json(report_value(&report)))?;
    print!("{}", report.to_table());
    Ok(())
}

pub fn report(args: ReportArgs) -> Result<(), Failure> {
    let mut net = match (&args.checkpoint, &args.config) {
        (Some(path), _) => load_checkpoint(path)?,
        (None, Some(path)) => {
            let cfg = TrainConfig::from_file(path).map_err(|e| Failure::Config(e.to_string()))?;
            let (shape, classes) = cfg.dataset.item_shape_and_classes();
            build_network::<f32>(&cfg, &shape, classes)?
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    set_threshold(&mut net, args.snr_threshold)?;
    let report = SparsityReport::for_network(&net, None)?;
    let json = to_json(report_value(&report));
    if let Some(dir) = &args.out_dir {
        OutDir::create(dir)?.write("flops_report.json", &json)?;
    }
    if args.json {
        print!("{json}");
    } else {
        print!("{}\n{json}", report.to_table());
    }
    Ok(())
}
