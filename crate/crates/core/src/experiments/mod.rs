//! Runnable experiment pipelines, selected by name from a config.

mod config;
mod context;
mod kinds;

use std::path::PathBuf;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::geometry::{collect_representations, representation_kinds, tdnv_curve};
use crate::io::{dump_representations, ingest_external_reps, Manifest, RunLock, MANIFEST_FILE};
use crate::registry::Registry;
use crate::taskgen::write_dump;

pub use config::{ExperimentConfig, IngestPaths, ModelSize};
pub use context::RunContext;
pub use kinds::{curve_table, training_log_table};

pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(&self, ctx: &mut RunContext) -> Result<()>;
}

/// Writes the sampled prompts in the tab-separated dump format.
pub struct GenData;

impl Experiment for GenData {
    fn name(&self) -> &'static str {
        "gen_data"
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        let max_len = ctx.config.model.max_len;
        let insts = ctx.dataset(ctx.config.k, "gen-data", max_len)?;
        let mut bytes = Vec::new();
        write_dump(&mut bytes, &insts).map_err(|e| Error::io(&ctx.dir.join("dataset.tsv"), e))?;
        ctx.write_bytes("dataset.tsv", &bytes)?;
        ctx.stage("generate");
        Ok(())
    }
}

/// Dumps per-layer representations to a tensor container plus layout CSV.
pub struct Trace;

impl Experiment for Trace {
    fn name(&self) -> &'static str {
        "trace"
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        let model = ctx.model()?;
        let insts = ctx.dataset(ctx.config.k, "trace", model.config().max_len)?;
        let kind = representation_kinds().get(&ctx.config.representation)?;
        let set = collect_representations(&model, &insts, &ctx.task_labels()?, kind, "model")?;
        dump_representations(
            &set,
            &ctx.dir.join("reps.iclt"),
            &ctx.dir.join("reps_layout.csv"),
            ctx.config.dump_dtype,
        )?;
        let dir = ctx.dir.clone();
        ctx.manifest.add(&dir, "reps.iclt")?;
        ctx.manifest.add(&dir, "reps_layout.csv")?;
        ctx.stage("trace");
        Ok(())
    }
}

/// TDNV of representations produced elsewhere.
pub struct Ingest;

impl Experiment for Ingest {
    fn name(&self) -> &'static str {
        "ingest"
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        let paths = ctx.config.ingest.clone().ok_or_else(|| {
            Error::Config("ingest needs `ingest.container` and `ingest.layout`".into())
        })?;
        let set = ingest_external_reps(paths.container.as_ref(), paths.layout.as_ref())?;
        let curve = tdnv_curve(&set, ctx.config.aggregation)?;
        let table = curve_table(&curve)?;
        ctx.write_table("tdnv_curve.csv", &table)?;
        ctx.plot("tdnv_curve.csv", &table, None)?;
        ctx.stage("measure");
        Ok(())
    }
}

pub fn experiments() -> &'static Registry<dyn Experiment> {
    static REG: OnceLock<Registry<dyn Experiment>> = OnceLock::new();
    REG.get_or_init(|| {
        let all: Vec<Box<dyn Experiment>> = vec![
            Box::new(GenData),
            Box::new(kinds::TrainExperiment),
            Box::new(Trace),
            Box::new(kinds::TdnvExperiment),
            Box::new(kinds::GridTdnvExperiment),
            Box::new(kinds::ProbesExperiment),
            Box::new(kinds::BiasVarianceExperiment),
            Box::new(kinds::NoiseSweep),
            Box::new(kinds::PositionSweep),
            Box::new(kinds::KSweep),
            Box::new(kinds::SizeSweep),
            Box::new(kinds::RepeatDistinct),
            Box::new(kinds::TheoremExperiment),
            Box::new(kinds::ContrastiveCompare),
            Box::new(Ingest),
        ];
        let mut reg = Registry::new("experiment kind");
        for e in all {
            reg.register(e.name(), e);
        }
        reg
    })
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

/// Runs the configured experiment under a lock; on failure the manifest
/// records the completed stages and the error, and the error is returned.
pub fn run_experiment(config: ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let exp = experiments().get(&config.kind)?;
    let dir = config.output_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let _lock = RunLock::acquire(&dir)?;
    let mut ctx = RunContext::new(config, dir.clone());
    let text = ctx.config.to_toml()?;
    ctx.write_bytes("config.toml", text.as_bytes())?;
    let outcome = exp.run(&mut ctx);
    let mut manifest = ctx.manifest;
    match outcome {
        Ok(()) => {
            manifest.complete = true;
            manifest.write(&dir)?;
            log::info!("wrote {}", dir.join(MANIFEST_FILE).display());
            Ok(RunReport { dir, manifest })
        }
        Err(e) => {
            manifest.error = Some(e.to_string());
            manifest.write(&dir)?;
            Err(e)
        }
    }
}
