use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig, ExperimentScheme};
use super::report::{fmt_f64, write_exchanges, write_metrics, write_residuals};
use crate::data::{self, LabeledDataset, ShardPlan};
use crate::fd::{self, LocalSchedule, TrainingConfig};
use crate::frd;
use crate::mix2fld::{self, Mix2FldConfig, ServerSchedule};
use crate::nn::{Mlp, Objective};
use crate::ntk::{self, KernelRegimeSystem};
use crate::{seed, Error, Result};

/// Environment variable that overrides every config's output directory.
pub const OUT_DIR_ENV: &str = "FEDISTILL_OUT_DIR";

pub fn version() -> String {
    option_env!("FEDISTILL_GIT_DESCRIBE")
        .map(str::to_string)
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

/// `$FEDISTILL_OUT_DIR`, else the config's `output`, else `out/<scheme>`.
pub fn resolve_output_dir(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => cfg
            .output
            .clone()
            .unwrap_or_else(|| Path::new("out").join(cfg.scheme_name())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub version: String,
    pub wall_time_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_hash: Option<String>,
    pub outputs: Vec<String>,
    /// Scheme-specific facts such as the Mixup seed upload size.
    #[serde(default)]
    pub details: serde_json::Map<String, serde_json::Value>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
}

pub fn load_dataset(source: &DataSource, master_seed: u64) -> Result<LabeledDataset> {
    match source {
        DataSource::Synthetic { classes, per_class, dim, seed } => {
            data::synth_classification(*classes, *per_class, *dim, seed.unwrap_or(master_seed))
        }
        DataSource::Idx { images, labels, limit } => {
            let ds = data::load_idx(images, labels)?;
            Ok(match limit {
                Some(n) if *n < ds.len() => ds.select(&(0..*n).collect::<Vec<_>>()),
                _ => ds,
            })
        }
    }
}

/// Runs `cfg` and writes its CSV and `manifest.json` into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let start = Instant::now();
    let mut details = serde_json::Map::new();
    let mut dataset_hash = None;
    let output = if cfg.scheme.is_supervised() {
        let (hash, file) = run_supervised(cfg, out_dir, &mut details)?;
        dataset_hash = Some(hash);
        file
    } else if let Some(scheme) = cfg.scheme.drl() {
        let drl = cfg.drl.clone().unwrap_or_default().to_config(scheme, cfg.seed);
        let run = frd::run_drl(&drl)?;
        details.insert("episodes_played".into(), run.scores[0].len().into());
        details.insert("completed_at".into(), serde_json::to_value(run.completed_at)?);
        write_exchanges(create(out_dir, "exchanges.csv")?, &run.reports)?;
        "exchanges.csv"
    } else {
        run_analytic(cfg, out_dir, &mut details)?
    };
    let manifest = Manifest {
        config: cfg.clone(),
        version: version(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        dataset_hash,
        outputs: vec![output.to_string()],
        details,
    };
    let file = create(out_dir, "manifest.json")?;
    serde_json::to_writer_pretty(file, &manifest)?;
    log::info!("{} run written to {}", cfg.scheme_name(), out_dir.display());
    Ok(RunSummary { out_dir: out_dir.to_path_buf(), manifest })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn run_supervised(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    details: &mut serde_json::Map<String, serde_json::Value>,
) -> Result<(String, &'static str)> {
    let (Some(spec), Some(model), Some(t)) = (&cfg.dataset, &cfg.model, &cfg.training) else {
        unreachable!("validated above");
    };
    let full = load_dataset(&spec.source, cfg.seed)?;
    let hash = full.content_hash();
    let (train, test) = full.split_holdout(spec.test_fraction, cfg.seed);
    let plan = cfg.shards.clone().unwrap_or(ShardPlan::Iid { seed: cfg.seed });
    let shards = data::shard(&train, cfg.workers, &plan)?;
    let mut dims = vec![full.dim()];
    dims.extend_from_slice(&model.hidden);
    dims.push(full.label_count());
    let models = (0..cfg.workers)
        .map(|c| Mlp::uniform(dims.clone(), model.activation, seed::derive(cfg.seed, "model-init", c as u64, 0)))
        .collect::<Result<Vec<_>>>()?;
    let training = TrainingConfig {
        rounds: t.rounds,
        schedule: LocalSchedule { steps: t.steps, batch: t.batch, eta: t.eta, order: t.order },
        objective: Objective {
            supervised: t.loss,
            distill: t.distill_loss,
            lambda: t.lambda,
            source: t.logit_source,
        },
        float_width: t.float_width,
        seed: cfg.seed,
        channel: cfg.channel.map(|c| c.resolve()).transpose()?,
    };
    let reports = match cfg.scheme {
        ExperimentScheme::Fd => fd::run_fd(models, &shards, &test, &training)?.reports,
        ExperimentScheme::Fl => fd::run_fl(models, &shards, &test, &training)?.reports,
        _ => {
            let m = cfg.mix.as_ref().expect("validated above");
            let mix = Mix2FldConfig {
                gamma: m.gamma,
                n_mix: m.n_mix,
                n_inv: m.n_inv,
                server: ServerSchedule { steps: m.server_steps, eta: m.server_eta },
                mode: cfg.seed_mode(),
            };
            let run = mix2fld::run_mix2fld(models, &shards, &test, &training, &mix)?;
            details.insert("seed_count".into(), run.seed_count.into());
            details.insert("seed_upload_bytes".into(), run.seed_upload_bytes.into());
            details.insert("seed_upload_rounds".into(), serde_json::to_value(run.seed_upload_rounds)?);
            run.run.reports
        }
    };
    write_metrics(create(out_dir, "metrics.csv")?, &reports)?;
    Ok((hash, "metrics.csv"))
}

fn run_analytic(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    details: &mut serde_json::Map<String, serde_json::Value>,
) -> Result<&'static str> {
    let a = cfg.analytic.as_ref().expect("validated above");
    if cfg.scheme == ExperimentScheme::CdAnalytic {
        let sys = KernelRegimeSystem::random_cd(a.a, a.lambda, a.workers, a.n, cfg.seed)?;
        let rows = ntk::cd_residuals(&sys, a.rounds)?;
        write_residuals(create(out_dir, "residuals.csv")?, &rows)?;
        return Ok("residuals.csv");
    }
    let y: Vec<f64> = (0..a.n).map(|i| (i % 10) as f64).collect();
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = seed::stream(cfg.seed, "kd-teacher", 0, 0);
    let teacher: Vec<f64> = y.iter().map(|v| v + normal.sample(&mut rng)).collect();
    let sys = KernelRegimeSystem::kd(a.a, a.lambda, y.clone(), teacher.clone())?;
    let fixed = ntk::kd_fixed_point(&sys)?;
    details.insert("kd_error".into(), fmt_f64(ntk::kd_error(&sys)?).into());
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(create(out_dir, "kd.csv")?);
    w.write_record(["sample", "label", "teacher", "fixed_point"])?;
    for (i, ((yi, ti), fi)) in y.iter().zip(&teacher).zip(&fixed).enumerate() {
        w.write_record([i.to_string(), fmt_f64(*yi), fmt_f64(*ti), fmt_f64(*fi)])?;
    }
    w.flush()?;
    Ok("kd.csv")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(scheme: &str) -> ExperimentConfig {
        let text = format!(
            r#"{{
                "scheme": "{scheme}",
                "seed": 5,
                "dataset": {{"source": {{"kind": "synthetic", "classes": 3, "per_class": 30, "dim": 5}}}},
                "model": {{"hidden": [8]}},
                "training": {{"rounds": 3, "steps": 4, "batch": 5, "eta": 0.1, "lambda": 0.5}},
                "mix": {{"gamma": 0.2, "n_mix": 6, "n_inv": 6, "server_steps": 5, "server_eta": 0.05}},
                "analytic": {{"a": 1.0, "lambda": 2.0, "workers": 3, "n": 12, "rounds": 6}},
                "drl": {{"agents": 2, "episodes": 10, "exchange_interval": 5, "subspaces": 6,
                         "actor_hidden": [8], "critic_hidden": [8]}}
            }}"#
        );
        ExperimentConfig::from_json(&text).unwrap()
    }

    fn run_bytes(scheme: &str, file: &str) -> (Vec<u8>, Manifest) {
        let dir = tempfile::tempdir().unwrap();
        let summary = run_experiment(&config(scheme), dir.path()).unwrap();
        assert_eq!(summary.manifest.outputs, vec![file.to_string()]);
        (fs::read(dir.path().join(file)).unwrap(), Manifest::load(dir.path().join("manifest.json")).unwrap())
    }

    #[test]
    fn every_scheme_runs_and_is_reproducible() {
        for (scheme, file) in [
            ("fd", "metrics.csv"),
            ("fl", "metrics.csv"),
            ("mixfld", "metrics.csv"),
            ("mix2fld", "metrics.csv"),
            ("cd_analytic", "residuals.csv"),
            ("kd_analytic", "kd.csv"),
            ("pd", "exchanges.csv"),
            ("frd", "exchanges.csv"),
            ("frl", "exchanges.csv"),
        ] {
            let (a, _) = run_bytes(scheme, file);
            let (b, _) = run_bytes(scheme, file);
            assert!(!a.is_empty());
            assert_eq!(a, b, "{scheme} output differs between runs");
        }
    }

    #[test]
    fn paired_fd_and_fl_share_the_dataset_hash() {
        let (_, fd) = run_bytes("fd", "metrics.csv");
        let (_, fl) = run_bytes("fl", "metrics.csv");
        assert!(fd.dataset_hash.is_some());
        assert_eq!(fd.dataset_hash, fl.dataset_hash);
    }

    #[test]
    fn manifest_echoes_the_config() {
        let (_, m) = run_bytes("mix2fld", "metrics.csv");
        assert_eq!(m.config, config("mix2fld"));
        assert!(m.details.contains_key("seed_upload_bytes"));
    }

    #[test]
    fn invalid_config_fails_before_writing() {
        let mut cfg = config("fd");
        cfg.workers = 1;
        let dir = tempfile::tempdir().unwrap();
        let err = run_experiment(&cfg, &dir.path().join("nested")).unwrap_err();
        assert!(err.is_validation());
        assert!(!dir.path().join("nested").exists());
    }
}
