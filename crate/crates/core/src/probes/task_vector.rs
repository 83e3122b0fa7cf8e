use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, Injection, Keep, TraceRequest, TransformerModel};
use crate::rng;
use crate::taskgen::{sample_dataset, IclInstance, TaskSpec};

/// Final-separator state of a demonstration prompt closed by a dummy query.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector {
    pub vector: Vec<f64>,
    pub layer: usize,
    pub k: usize,
    pub task: usize,
    pub dummy_query: Vec<usize>,
}

fn check_layer(model: &TransformerModel, layer: usize) -> Result<()> {
    let l = model.config().layers;
    if layer == 0 || layer > l {
        return Err(Error::Index {
            what: "probe layer (1..=L)",
            index: layer,
            limit: l + 1,
        });
    }
    Ok(())
}

/// Task vectors at every layer `1..=L` for each prompt; `out[n][ℓ − 1]`.
pub fn extract_task_vectors(
    model: &TransformerModel,
    prompts: &[IclInstance],
    dummy_query: &[usize],
) -> Result<Vec<Vec<TaskVector>>> {
    let patched: Vec<IclInstance> = prompts
        .iter()
        .map(|p| p.with_query(dummy_query.to_vec(), p.gold))
        .collect();
    let reqs: Vec<TraceRequest> = patched
        .iter()
        .map(|p| TraceRequest::new(&p.tokens, Keep::Positions(vec![p.final_sep()])))
        .collect();
    let traces = model.trace_batch(&reqs, false)?;
    Ok(patched
        .iter()
        .zip(&traces)
        .map(|(p, tr)| {
            (1..tr.hidden.len())
                .map(|layer| TaskVector {
                    vector: tr.hidden[layer].row(0).to_vec(),
                    layer,
                    k: p.k(),
                    task: p.task,
                    dummy_query: dummy_query.to_vec(),
                })
                .collect()
        })
        .collect())
}

/// The state at `(layer, final separator)` of `[demos, dummy →]`.
pub fn extract_task_vector(
    model: &TransformerModel,
    prompt: &IclInstance,
    dummy_query: &[usize],
    layer: usize,
) -> Result<TaskVector> {
    check_layer(model, layer)?;
    let mut all = extract_task_vectors(model, std::slice::from_ref(prompt), dummy_query)?;
    Ok(all.pop().expect("one prompt").swap_remove(layer - 1))
}

/// Arithmetic mean of task vectors from one task and layer.
pub fn mean_task_vector(vectors: &[TaskVector]) -> Result<TaskVector> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Invalid("mean of no task vectors".into()))?;
    if let Some(v) = vectors
        .iter()
        .find(|v| v.layer != first.layer || v.task != first.task)
    {
        return Err(Error::Invalid(format!(
            "mixed task vectors: (task {}, layer {}) vs (task {}, layer {})",
            first.task, first.layer, v.task, v.layer
        )));
    }
    let rows: Vec<Vec<f64>> = vectors.iter().map(|v| v.vector.clone()).collect();
    Ok(TaskVector {
        vector: crate::geometry::mean_vector(&rows)?,
        ..first.clone()
    })
}

/// Which vector gets patched into each zero-shot query.
#[derive(Debug, Clone, Copy)]
pub enum VectorSource<'a> {
    Shared(&'a TaskVector),
    PerQuery(&'a [TaskVector]),
}

/// Zero-shot accuracy on `queries` after replacing the state at
/// `(layer, final separator)` with a task vector.
pub fn task_vector_accuracy(
    model: &TransformerModel,
    queries: &[IclInstance],
    layer: usize,
    vectors: VectorSource,
) -> Result<f64> {
    let hits = task_vector_hits(model, queries, layer, vectors)?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

/// Per-query correctness behind [`task_vector_accuracy`].
pub fn task_vector_hits(
    model: &TransformerModel,
    queries: &[IclInstance],
    layer: usize,
    vectors: VectorSource,
) -> Result<Vec<bool>> {
    check_layer(model, layer)?;
    if queries.is_empty() {
        return Err(Error::Invalid("no queries".into()));
    }
    let pick = |n: usize| -> Result<&TaskVector> {
        match vectors {
            VectorSource::Shared(v) => Ok(v),
            VectorSource::PerQuery(vs) => vs.get(n).ok_or(Error::Index {
                what: "per-query task vector",
                index: n,
                limit: vs.len(),
            }),
        }
    };
    let shots: Vec<IclInstance> = queries.iter().map(IclInstance::zero_shot).collect();
    let injections = shots
        .iter()
        .enumerate()
        .map(|(n, s)| {
            let v = pick(n)?;
            if v.layer != layer {
                return Err(Error::Invalid(format!(
                    "task vector from layer {} used at layer {layer}",
                    v.layer
                )));
            }
            Ok(Injection {
                layer,
                position: s.final_sep(),
                vector: v.vector.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let reqs: Vec<TraceRequest> = shots
        .iter()
        .zip(&injections)
        .map(|(s, inj)| TraceRequest {
            tokens: &s.tokens,
            injection: Some(inj),
            keep: Keep::Last,
        })
        .collect();
    let traces = model.trace_batch(&reqs, false)?;
    Ok(traces
        .iter()
        .zip(queries)
        .map(|(t, q)| argmax(t.last_logits()) == q.gold)
        .collect())
}

/// Accuracy of the plain query-only prompt.
pub fn zero_shot_accuracy(model: &TransformerModel, queries: &[IclInstance]) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::Invalid("no queries".into()));
    }
    let shots: Vec<IclInstance> = queries.iter().map(IclInstance::zero_shot).collect();
    let reqs: Vec<TraceRequest> = shots
        .iter()
        .map(|s| TraceRequest::new(&s.tokens, Keep::Last))
        .collect();
    let traces = model.trace_batch(&reqs, false)?;
    let hits = traces
        .iter()
        .zip(queries)
        .filter(|(t, q)| argmax(t.last_logits()) == q.gold)
        .count();
    Ok(hits as f64 / queries.len() as f64)
}

/// Early-exit accuracy at every layer `0..=L` from one pass over the instances.
pub fn early_exit_curve(model: &TransformerModel, instances: &[IclInstance]) -> Result<Vec<f64>> {
    if instances.is_empty() {
        return Err(Error::Invalid("no instances".into()));
    }
    let reqs: Vec<TraceRequest> = instances
        .iter()
        .map(|i| TraceRequest::new(&i.tokens, Keep::Positions(vec![i.final_sep()])))
        .collect();
    let traces = model.trace_batch(&reqs, false)?;
    let layers = model.config().layers + 1;
    let mut hits = vec![0usize; layers];
    for (inst, tr) in instances.iter().zip(&traces) {
        for (layer, h) in tr.hidden.iter().enumerate() {
            if argmax(&model.apply_classifier(h.row(0))?) == inst.gold {
                hits[layer] += 1;
            }
        }
    }
    Ok(hits
        .iter()
        .map(|&h| h as f64 / instances.len() as f64)
        .collect())
}

/// Accuracy of the final classifier applied to the final-separator state at `layer`.
pub fn early_exit_accuracy(
    model: &TransformerModel,
    instances: &[IclInstance],
    layer: usize,
) -> Result<f64> {
    let curve = early_exit_curve(model, instances)?;
    curve.get(layer).copied().ok_or(Error::Index {
        what: "early-exit layer",
        index: layer,
        limit: curve.len(),
    })
}

/// A fixed dummy query per task, drawn from its own stream.
pub fn choose_dummy_query(task: &TaskSpec, seed: u64) -> Vec<usize> {
    let mut r = rng::stream(seed, rng::stream_id(&["dummy-query", task.name()], 0));
    task.sample_input(&mut r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            n: 100,
            k: 15,
            seed: 0,
        }
    }
}

/// Per-layer probe accuracies averaged over tasks; layer `ℓ` sits at index `ℓ − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub layers: Vec<usize>,
    /// Per-query task vectors, each from the query's own demonstrations.
    pub tv_acc: Vec<f64>,
    /// One mean task vector per task.
    pub mean_tv_acc: Vec<f64>,
    pub early_exit_acc: Vec<f64>,
    pub baseline: f64,
    /// `per_task_tv_acc[t][ℓ − 1]`.
    pub per_task_tv_acc: Vec<Vec<f64>>,
}

/// Builds `n` instances per task whose queries differ from that task's dummy.
pub fn probe_instances(
    tasks: &[TaskSpec],
    cfg: &ProbeConfig,
    max_len: usize,
) -> Result<Vec<(Vec<usize>, Vec<IclInstance>)>> {
    tasks
        .iter()
        .map(|task| {
            let dummy = choose_dummy_query(task, cfg.seed);
            let raw = sample_dataset(
                std::slice::from_ref(task),
                cfg.n,
                cfg.k,
                cfg.seed,
                "probe",
                max_len,
            )?;
            let mut r = rng::stream(cfg.seed, rng::stream_id(&["probe-requery", task.name()], 0));
            let insts = raw
                .into_iter()
                .map(|inst| {
                    if inst.query != dummy {
                        return Ok(inst);
                    }
                    for _ in 0..1000 {
                        let q = task.sample_input(&mut r);
                        if q != dummy {
                            let gold = task.label(&q)?;
                            return Ok(inst.with_query(q, gold));
                        }
                    }
                    Err(Error::Invalid(format!(
                        "task {} has no input besides the dummy",
                        task.name()
                    )))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((dummy, insts))
        })
        .collect()
}

/// Task-vector, mean-task-vector and early-exit accuracy at every layer, plus the zero-shot baseline.
pub fn run_probes(
    model: &TransformerModel,
    tasks: &[TaskSpec],
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    let l = model.config().layers;
    let per_task = probe_instances(tasks, cfg, model.config().max_len)?;
    let mut tv = vec![vec![0.0; l]; tasks.len()];
    let mut mean_tv = vec![0.0; l];
    let mut all = Vec::new();
    for (t, (dummy, insts)) in per_task.iter().enumerate() {
        let vectors = extract_task_vectors(model, insts, dummy)?;
        for layer in 1..=l {
            let at: Vec<TaskVector> = vectors.iter().map(|v| v[layer - 1].clone()).collect();
            tv[t][layer - 1] =
                task_vector_accuracy(model, insts, layer, VectorSource::PerQuery(&at))?;
            let mean = mean_task_vector(&at)?;
            mean_tv[layer - 1] +=
                task_vector_accuracy(model, insts, layer, VectorSource::Shared(&mean))?;
        }
        all.extend(insts.iter().cloned());
    }
    let tasks_f = tasks.len() as f64;
    let tv_acc = (0..l)
        .map(|i| tv.iter().map(|r| r[i]).sum::<f64>() / tasks_f)
        .collect();
    let exit = early_exit_curve(model, &all)?;
    Ok(ProbeReport {
        layers: (1..=l).collect(),
        tv_acc,
        mean_tv_acc: mean_tv.iter().map(|v| v / tasks_f).collect(),
        early_exit_acc: exit[1..].to_vec(),
        baseline: zero_shot_accuracy(model, &all)?,
        per_task_tv_acc: tv,
    })
}
