use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{collect_representations, representation_kinds, tdnv_curve, TdnvCurve};
use crate::io::{load_checkpoint, plot_tables, save_checkpoint, Manifest, PlotStyle, Table};
use crate::model::TransformerModel;
use crate::rng;
use crate::taskgen::{inject_noise, sample_dataset, IclInstance, NoiseSpec, TaskSpec};
use crate::training::{train, TrainOutcome};

use super::config::ExperimentConfig;

/// Output directory, manifest and shared helpers for one run.
pub struct RunContext {
    pub config: ExperimentConfig,
    pub dir: PathBuf,
    pub manifest: Manifest,
    model: Option<TransformerModel>,
}

impl RunContext {
    pub fn new(config: ExperimentConfig, dir: PathBuf) -> Self {
        let manifest = Manifest::new(&config.kind);
        Self {
            config,
            dir,
            manifest,
            model: None,
        }
    }

    pub fn stage(&mut self, name: &str) {
        log::info!("stage done: {name}");
        self.manifest.stage(name);
    }

    pub fn write_table(&mut self, name: &str, table: &Table) -> Result<()> {
        table.write(self.dir.join(name))?;
        self.manifest.add(&self.dir, name)
    }

    /// Writes `<stem>.svg` rendering `table` with the style declared for `name`.
    pub fn plot(&mut self, name: &str, table: &Table, style: Option<PlotStyle>) -> Result<()> {
        let style = match style.or_else(|| PlotStyle::for_file(name)) {
            Some(s) => s,
            None => return Ok(()),
        };
        let stem = name.trim_end_matches(".csv");
        let svg = plot_tables(&[(stem.to_string(), table.clone())], &style)?;
        self.write_bytes(&format!("{stem}.svg"), svg.as_bytes())
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.manifest.add(&self.dir, name)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text =
            serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(e.to_string()))?;
        self.write_bytes(name, (text + "\n").as_bytes())
    }

    pub fn save_model(&mut self, name: &str, model: &TransformerModel) -> Result<()> {
        save_checkpoint(model, self.dir.join(name))?;
        self.manifest.add(&self.dir, name)?;
        let side = Path::new(name).with_extension("toml");
        self.manifest
            .add(&self.dir, side.to_str().expect("utf-8 name"))
    }

    pub fn tasks(&self) -> Result<Vec<TaskSpec>> {
        TaskSpec::list(&self.config.tasks)
    }

    /// Task `(id, name)` pairs in config order.
    pub fn task_labels(&self) -> Result<Vec<(usize, String)>> {
        Ok(self
            .tasks()?
            .iter()
            .map(|t| (t.id, t.name().to_string()))
            .collect())
    }

    /// Trains a model from the config (used when no checkpoint is given).
    pub fn train_fresh(&self, tasks: &[TaskSpec]) -> Result<(TransformerModel, TrainOutcome)> {
        let mut model = TransformerModel::init(self.config.model.clone())?;
        let outcome = train(&mut model, tasks, &self.config.train)?;
        Ok((model, outcome))
    }

    /// The checkpoint named in the config, or a freshly trained model.
    pub fn model(&mut self) -> Result<TransformerModel> {
        if let Some(m) = &self.model {
            return Ok(m.clone());
        }
        let m = match self.config.checkpoint.clone() {
            Some(p) => load_checkpoint(&p)?,
            None => {
                let tasks = self.tasks()?;
                let (m, outcome) = self.train_fresh(&tasks)?;
                let log = super::kinds::training_log_table(&outcome)?;
                self.write_table("training_log.csv", &log)?;
                self.save_model("model.iclt", &m)?;
                self.stage("train");
                m
            }
        };
        self.model = Some(m.clone());
        Ok(m)
    }

    /// `n` prompts per task with `k` demonstrations, drawn under `salt`.
    pub fn dataset(&self, k: usize, salt: &str, max_len: usize) -> Result<Vec<IclInstance>> {
        sample_dataset(
            &self.tasks()?,
            self.config.n,
            k,
            self.config.seed,
            salt,
            max_len,
        )
    }

    /// Applies `spec` to every prompt with a per-prompt stream.
    pub fn with_noise(
        &self,
        insts: &[IclInstance],
        spec: &NoiseSpec,
        salt: &str,
    ) -> Result<Vec<IclInstance>> {
        let tasks = self.tasks()?;
        insts
            .iter()
            .enumerate()
            .map(|(i, inst)| {
                let task = tasks
                    .iter()
                    .find(|t| t.id == inst.task)
                    .ok_or_else(|| Error::Invalid(format!("unknown task id {}", inst.task)))?;
                let mut r =
                    rng::stream(self.config.seed, rng::stream_id(&["noise", salt], i as u64));
                inject_noise(inst, spec, task, &mut r)
            })
            .collect()
    }

    /// TDNV curve of the configured representation kind.
    pub fn curve(&self, model: &TransformerModel, insts: &[IclInstance]) -> Result<TdnvCurve> {
        let kind = representation_kinds().get(&self.config.representation)?;
        let set = collect_representations(model, insts, &self.task_labels()?, kind, "model")?;
        tdnv_curve(&set, self.config.aggregation)
    }
}
