use std::path::PathBuf;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::geometry::{tdnv_grouped, PairAggregation};
use crate::model::{argmax, Keep, TraceRequest, TransformerModel};
use crate::rng;
use crate::taskgen::{make_instance, sample_dataset, IclInstance, TaskSpec, PAD};

use super::adam::{adam_step, clip_global_norm, AdamState};
use super::config::{LossMode, TrainConfig};
use super::loss::record_contrastive;

/// One row of `training_log.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub step: usize,
    pub ce: f64,
    pub contrastive: Option<f64>,
    pub total: f64,
    pub eval_acc: Option<f64>,
    pub tdnv_at_contrast_layer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_task_accuracy: Vec<f64>,
    /// `None` when the representations are degenerate at that layer.
    pub tdnv: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<TrainLogRow>,
    pub final_eval: EvalReport,
}

/// ICL accuracy on `n` fresh instances per task, plus last-separator TDNV at `layer`.
pub fn evaluate(
    model: &TransformerModel,
    tasks: &[TaskSpec],
    k: usize,
    n: usize,
    seed: u64,
    layer: usize,
) -> Result<EvalReport> {
    let insts = sample_dataset(tasks, n, k, seed, "train-eval", model.config().max_len)?;
    evaluate_instances(model, tasks, &insts, layer)
}

pub(crate) fn evaluate_instances(
    model: &TransformerModel,
    tasks: &[TaskSpec],
    insts: &[IclInstance],
    layer: usize,
) -> Result<EvalReport> {
    if layer > model.config().layers {
        return Err(Error::Index {
            what: "evaluation layer",
            index: layer,
            limit: model.config().layers + 1,
        });
    }
    let reqs: Vec<TraceRequest> = insts
        .iter()
        .map(|i| TraceRequest::new(&i.tokens, Keep::Positions(vec![i.final_sep()])))
        .collect();
    let traces = model.trace_batch(&reqs, false)?;
    let mut hits = vec![0usize; tasks.len()];
    let mut totals = vec![0usize; tasks.len()];
    let mut groups: Vec<Vec<Vec<f64>>> = vec![Vec::new(); tasks.len()];
    for (inst, tr) in insts.iter().zip(&traces) {
        let slot = tasks
            .iter()
            .position(|t| t.id == inst.task)
            .ok_or_else(|| Error::Invalid(format!("instance of unknown task id {}", inst.task)))?;
        let last = tr.hidden.last().expect("layers").row(0);
        let pred = argmax(&model.apply_classifier(last)?);
        totals[slot] += 1;
        hits[slot] += usize::from(pred == inst.gold);
        groups[slot].push(tr.hidden[layer].row(0).to_vec());
    }
    let per_task_accuracy: Vec<f64> = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
        .collect();
    let accuracy = hits.iter().sum::<usize>() as f64 / totals.iter().sum::<usize>().max(1) as f64;
    groups.retain(|g| !g.is_empty());
    let tdnv = match tdnv_grouped(&groups, PairAggregation::Mean) {
        Ok(v) => Some(v),
        Err(Error::Degenerate(_) | Error::Invalid(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        accuracy,
        per_task_accuracy,
        tdnv,
    })
}

/// Batch for 1-based `step`: sequence `j` belongs to task `j mod T`.
fn sample_batch(
    tasks: &[TaskSpec],
    cfg: &TrainConfig,
    step: usize,
    max_len: usize,
) -> Result<Vec<IclInstance>> {
    let mut r = rng::stream(cfg.seed, rng::stream_id(&["train-batch"], step as u64));
    (0..cfg.batch_size)
        .map(|j| make_instance(&tasks[j % tasks.len()], cfg.k_train, &mut r, max_len))
        .collect()
}

struct StepResult {
    ce: f64,
    contrastive: Option<f64>,
    total: f64,
    grads: Vec<Vec<f64>>,
}

fn forward_backward(
    model: &TransformerModel,
    batch: &[IclInstance],
    cfg: &TrainConfig,
    contrast_layer: usize,
) -> Result<StepResult> {
    // right padding leaves every real position untouched under causal attention
    let p = batch
        .iter()
        .map(IclInstance::len)
        .max()
        .expect("nonempty batch");
    let padded: Vec<Vec<usize>> = batch
        .iter()
        .map(|i| {
            let mut t = i.tokens.clone();
            t.resize(p, PAD);
            t
        })
        .collect();
    let seqs: Vec<&[usize]> = padded.iter().map(Vec::as_slice).collect();
    let mut tape = Tape::new();
    let rec = model.record(&mut tape, &seqs, &[], true)?;

    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (b, inst) in batch.iter().enumerate() {
        rows.extend(inst.sep_positions.iter().map(|s| b * p + s));
        targets.extend(inst.separator_targets());
    }
    let logits = model.record_logits(&mut tape, &rec, &rows)?;
    let ce = tape.cross_entropy(logits, &targets)?;

    let wants_contrastive = cfg.loss_mode == LossMode::CePlusContrastive;
    let task_ids: Vec<usize> = batch.iter().map(|i| i.task).collect();
    let finals: Vec<usize> = batch
        .iter()
        .enumerate()
        .map(|(b, i)| b * p + i.final_sep())
        .collect();
    let h = tape.select_rows(rec.hidden[contrast_layer], &finals)?;
    let con = match record_contrastive(&mut tape, h, &task_ids, cfg.tau) {
        Ok(id) => Some(id),
        Err(e) if wants_contrastive => return Err(e),
        Err(_) => None,
    };

    let loss = match con {
        Some(c) if wants_contrastive && cfg.beta > 0.0 => {
            let weighted = tape.scale(c, cfg.beta)?;
            tape.add(ce, weighted)?
        }
        _ => ce,
    };
    tape.backward(loss)?;
    let grads = rec
        .params
        .iter()
        .map(|&id| tape.grad(id).expect("parameter gradient").to_vec())
        .collect();
    Ok(StepResult {
        ce: tape.scalar_value(ce),
        contrastive: con.map(|c| tape.scalar_value(c)),
        total: tape.scalar_value(loss),
        grads,
    })
}

/// Training loss on `batch` and its gradient for every parameter tensor, in
/// [`TransformerModel::params`] order. Includes the contrastive term when `cfg` asks for it.
pub fn loss_and_gradients(
    model: &TransformerModel,
    batch: &[IclInstance],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let layers = model.config().layers;
    cfg.validate(layers)?;
    let r = forward_backward(model, batch, cfg, cfg.contrast_layer_for(layers))?;
    Ok((r.total, r.grads))
}

fn diagnostic_checkpoint(
    model: &TransformerModel,
    cfg: &TrainConfig,
    step: usize,
) -> Option<PathBuf> {
    let dir = cfg.diagnostic_dir.as_ref()?;
    let path = PathBuf::from(dir).join(format!("nonfinite_step{step}.iclt"));
    match crate::io::save_checkpoint(model, &path) {
        Ok(()) => Some(path),
        Err(e) => {
            log::error!("could not write diagnostic checkpoint: {e}");
            None
        }
    }
}

/// Trains `model` in place with Adam on separator cross-entropy, optionally
/// plus `beta` times the contrastive term at the contrast layer.
pub fn train(
    model: &mut TransformerModel,
    tasks: &[TaskSpec],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let layers = model.config().layers;
    cfg.validate(layers)?;
    if tasks.is_empty() {
        return Err(Error::Invalid("training needs at least one task".into()));
    }
    if cfg.batch_size % tasks.len() != 0 {
        log::warn!(
            "batch size {} is not a multiple of {} tasks; earlier tasks get one extra sample",
            cfg.batch_size,
            tasks.len()
        );
    }
    if cfg.loss_mode == LossMode::CePlusContrastive
        && cfg.beta != 0.0
        && cfg.batch_size < 2 * tasks.len()
    {
        return Err(Error::Config(format!(
            "contrastive training needs at least two samples per task: batch {} < 2 x {} tasks",
            cfg.batch_size,
            tasks.len()
        )));
    }
    let contrast_layer = cfg.contrast_layer_for(layers);
    let max_len = model.config().max_len;
    let eval_set = sample_dataset(
        tasks,
        cfg.eval_instances,
        cfg.eval_k,
        cfg.seed,
        "train-eval",
        max_len,
    )?;
    let hyper = cfg.adam();
    let mut state = AdamState::new(model.params());
    let mut log_rows = Vec::with_capacity(cfg.steps);
    let mut last_eval = None;

    for step in 1..=cfg.steps {
        let batch = sample_batch(tasks, cfg, step, max_len)?;
        let mut r = forward_backward(model, &batch, cfg, contrast_layer)?;
        let finite = r.total.is_finite() && r.grads.iter().flatten().all(|g| g.is_finite());
        if !finite {
            let saved = diagnostic_checkpoint(model, cfg, step);
            return Err(Error::NonFinite(format!(
                "loss {} at step {step}; diagnostic checkpoint: {}",
                r.total,
                saved.map_or_else(|| "not written".to_string(), |p| p.display().to_string())
            )));
        }
        clip_global_norm(&mut r.grads, cfg.clip_norm);
        adam_step(
            model.params_mut(),
            &r.grads,
            &mut state,
            &hyper,
            cfg.lr_at(step),
        )?;

        let due = step == cfg.steps || (cfg.eval_every > 0 && step % cfg.eval_every == 0);
        let eval = if due {
            let e = evaluate_instances(model, tasks, &eval_set, contrast_layer)?;
            log::info!(
                "step {step}: ce {:.4} total {:.4} eval acc {:.3} tdnv@{contrast_layer} {:?}",
                r.ce,
                r.total,
                e.accuracy,
                e.tdnv
            );
            Some(e)
        } else {
            None
        };
        log_rows.push(TrainLogRow {
            step,
            ce: r.ce,
            contrastive: r.contrastive,
            total: r.total,
            eval_acc: eval.as_ref().map(|e| e.accuracy),
            tdnv_at_contrast_layer: eval.as_ref().and_then(|e| e.tdnv),
        });
        if eval.is_some() {
            last_eval = eval;
        }
    }
    let final_eval = match last_eval {
        Some(e) => e,
        None => evaluate_instances(model, tasks, &eval_set, contrast_layer)?,
    };
    Ok(TrainOutcome {
        log: log_rows,
        final_eval,
    })
}
