use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::model::{Keep, TraceRequest, TransformerModel};
use crate::registry::Registry;
use crate::taskgen::IclInstance;

use super::curve::{GridTdnv, TdnvCurve};
use super::metrics::{tdnv_grouped, PairAggregation};

/// Which token states summarize an ICL prompt.
pub trait RepresentationKind: Send + Sync {
    fn name(&self) -> &'static str;
    /// Positions whose hidden states are averaged.
    fn positions(&self, inst: &IclInstance) -> Vec<usize>;
}

/// The final separator, where the task vector lives.
pub struct LastSeparator;

/// Mean over demonstration tokens, leaving out the query and final separator.
pub struct MeanAllTokens;

/// Mean over every separator, the final one included.
pub struct MeanSeparators;

impl RepresentationKind for LastSeparator {
    fn name(&self) -> &'static str {
        "last_sep"
    }

    fn positions(&self, inst: &IclInstance) -> Vec<usize> {
        vec![inst.final_sep()]
    }
}

impl RepresentationKind for MeanAllTokens {
    fn name(&self) -> &'static str {
        "mean_all_tokens"
    }

    fn positions(&self, inst: &IclInstance) -> Vec<usize> {
        inst.demo_positions().collect()
    }
}

impl RepresentationKind for MeanSeparators {
    fn name(&self) -> &'static str {
        "mean_sep_tokens"
    }

    fn positions(&self, inst: &IclInstance) -> Vec<usize> {
        inst.sep_positions.clone()
    }
}

pub fn representation_kinds() -> &'static Registry<dyn RepresentationKind> {
    static REG: OnceLock<Registry<dyn RepresentationKind>> = OnceLock::new();
    REG.get_or_init(|| {
        Registry::<dyn RepresentationKind>::new("representation kind")
            .with("last_sep", Box::new(LastSeparator))
            .with("mean_all_tokens", Box::new(MeanAllTokens))
            .with("mean_sep_tokens", Box::new(MeanSeparators))
    })
}

/// `reps[t][i][ℓ]`: one vector per task, instance and layer `0..=L`.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationSet {
    pub kind: String,
    pub k: usize,
    pub model_tag: String,
    pub task_names: Vec<String>,
    reps: Vec<Vec<Vec<Vec<f64>>>>,
}

impl RepresentationSet {
    /// Checks that every task has the same number of instances, layers and dimensions.
    pub fn new(
        kind: impl Into<String>,
        k: usize,
        model_tag: impl Into<String>,
        task_names: Vec<String>,
        reps: Vec<Vec<Vec<Vec<f64>>>>,
    ) -> Result<Self> {
        if reps.len() != task_names.len() {
            return Err(Error::shape(
                "representation tasks",
                &[task_names.len()],
                &[reps.len()],
            ));
        }
        let n = reps.first().map_or(0, Vec::len);
        let l = reps.first().and_then(|t| t.first()).map_or(0, Vec::len);
        let d = reps
            .first()
            .and_then(|t| t.first())
            .and_then(|i| i.first())
            .map_or(0, Vec::len);
        if n == 0 || l == 0 || d == 0 {
            return Err(Error::Invalid("representation set is empty".into()));
        }
        for task in &reps {
            if task.len() != n {
                return Err(Error::shape(
                    "representation instances",
                    &[n],
                    &[task.len()],
                ));
            }
            for inst in task {
                if inst.len() != l {
                    return Err(Error::shape("representation layers", &[l], &[inst.len()]));
                }
                if let Some(v) = inst.iter().find(|v| v.len() != d) {
                    return Err(Error::shape("representation dim", &[d], &[v.len()]));
                }
            }
        }
        Ok(Self {
            kind: kind.into(),
            k,
            model_tag: model_tag.into(),
            task_names,
            reps,
        })
    }

    pub fn tasks(&self) -> usize {
        self.reps.len()
    }

    pub fn instances(&self) -> usize {
        self.reps[0].len()
    }

    /// Number of layers stored, embeddings included.
    pub fn layers(&self) -> usize {
        self.reps[0][0].len()
    }

    pub fn dim(&self) -> usize {
        self.reps[0][0][0].len()
    }

    pub fn get(&self, task: usize, instance: usize, layer: usize) -> &[f64] {
        &self.reps[task][instance][layer]
    }

    /// Per-task groups of vectors at one layer.
    pub fn at_layer(&self, layer: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        if layer >= self.layers() {
            return Err(Error::Index {
                what: "representation layer",
                index: layer,
                limit: self.layers(),
            });
        }
        Ok(self
            .reps
            .iter()
            .map(|task| task.iter().map(|inst| inst[layer].clone()).collect())
            .collect())
    }
}

/// Per-layer TDNV. Leading layers where task means coincide (embedding-level
/// states that ignore the demonstrations) are dropped; a degenerate layer
/// after the first valid one is an error.
pub fn tdnv_curve(set: &RepresentationSet, agg: PairAggregation) -> Result<TdnvCurve> {
    let mut first = None;
    let mut values = Vec::new();
    for layer in 0..set.layers() {
        match tdnv_grouped(&set.at_layer(layer)?, agg) {
            Ok(v) => {
                first.get_or_insert(layer);
                values.push(v);
            }
            Err(Error::Degenerate(msg)) if first.is_none() => {
                log::debug!("layer {layer} skipped: {msg}");
            }
            Err(e) => return Err(e),
        }
    }
    let first = first.ok_or_else(|| Error::Degenerate("every layer is degenerate".into()))?;
    Ok(TdnvCurve::new(first, values))
}

fn group_by_task(instances: &[IclInstance], task_ids: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut groups = vec![Vec::new(); task_ids.len()];
    for (n, inst) in instances.iter().enumerate() {
        let slot = task_ids
            .iter()
            .position(|&t| t == inst.task)
            .ok_or_else(|| {
                Error::Invalid(format!("instance {n} has unlisted task id {}", inst.task))
            })?;
        groups[slot].push(n);
    }
    Ok(groups)
}

fn mean_rows(t: &crate::autodiff::Tensor) -> Vec<f64> {
    let (r, c) = t.dims2().expect("hidden states are matrices");
    let mut out = vec![0.0; c];
    for i in 0..r {
        out.iter_mut().zip(t.row(i)).for_each(|(o, x)| *o += x);
    }
    out.iter_mut().for_each(|o| *o /= r as f64);
    out
}

/// Runs the model over `instances` and gathers a representation set.
/// `tasks` lists `(task id, name)` in output order.
pub fn collect_representations(
    model: &TransformerModel,
    instances: &[IclInstance],
    tasks: &[(usize, String)],
    kind: &dyn RepresentationKind,
    model_tag: &str,
) -> Result<RepresentationSet> {
    let ids: Vec<usize> = tasks.iter().map(|t| t.0).collect();
    let groups = group_by_task(instances, &ids)?;
    let reqs: Vec<TraceRequest> = instances
        .iter()
        .map(|i| TraceRequest::new(&i.tokens, Keep::Positions(kind.positions(i))))
        .collect();
    let traces = model.trace_batch(&reqs, false)?;
    let reps = groups
        .iter()
        .map(|g| {
            g.iter()
                .map(|&n| traces[n].hidden.iter().map(mean_rows).collect())
                .collect()
        })
        .collect();
    let k = instances.first().map_or(0, IclInstance::k);
    RepresentationSet::new(
        kind.name(),
        k,
        model_tag,
        tasks.iter().map(|t| t.1.clone()).collect(),
        reps,
    )
}

/// TDNV per (layer, separator). All instances must share `K`. Layers are
/// kept from the first one where every separator column is non-degenerate.
pub fn grid_tdnv(
    model: &TransformerModel,
    instances: &[IclInstance],
    task_ids: &[usize],
    agg: PairAggregation,
) -> Result<GridTdnv> {
    let k = instances
        .first()
        .ok_or_else(|| Error::Invalid("grid TDNV needs instances".into()))?
        .k();
    if let Some(bad) = instances.iter().find(|i| i.k() != k) {
        return Err(Error::Invalid(format!("ragged K: {} vs {k}", bad.k())));
    }
    let groups = group_by_task(instances, task_ids)?;
    let reqs: Vec<TraceRequest> = instances
        .iter()
        .map(|i| TraceRequest::new(&i.tokens, Keep::Positions(i.sep_positions.clone())))
        .collect();
    let traces = model.trace_batch(&reqs, false)?;
    let layers = model.config().layers + 1;
    let mut first = None;
    let mut values = Vec::new();
    for layer in 0..layers {
        let mut row = Vec::with_capacity(k + 1);
        let mut degenerate = false;
        for s in 0..=k {
            // kept positions are sorted, so row `s` is separator `s + 1`
            let cells: Vec<Vec<Vec<f64>>> = groups
                .iter()
                .map(|g| {
                    g.iter()
                        .map(|&n| traces[n].hidden[layer].row(s).to_vec())
                        .collect()
                })
                .collect();
            match tdnv_grouped(&cells, agg) {
                Ok(v) => row.push(v),
                Err(Error::Degenerate(_)) if first.is_none() => {
                    degenerate = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if !degenerate {
            first.get_or_insert(layer);
            values.push(row);
        }
    }
    let first_layer = first.ok_or_else(|| Error::Degenerate("every layer is degenerate".into()))?;
    Ok(GridTdnv {
        first_layer,
        values,
    })
}
