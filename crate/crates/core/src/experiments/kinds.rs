use serde_json::json;

use crate::error::{Error, Result};
use crate::geometry::{
    bias_variance_decompose, collect_representations, compression_expression_ratios, grid_tdnv,
    pca_2d, representation_kinds, stats::bootstrap_mean_ci, TdnvCurve,
};
use crate::io::{fmt_f64, fmt_opt, save_tensors, DType, Table};
use crate::model::{ModelConfig, TransformerModel};
use crate::probes::{
    early_exit_curve, extract_task_vectors, probe_instances, run_probes, saliency_map,
    task_vector_hits, ProbeConfig, TaskVector, VectorSource,
};
use crate::rng;
use crate::taskgen::{extend_instance, ExtendMode, IclInstance, NoiseSpec};
use crate::theorem::run_theorem;
use crate::training::{train, LossMode, TrainConfig, TrainOutcome};

use super::context::RunContext;
use super::Experiment;

pub fn curve_table(curve: &TdnvCurve) -> Result<Table> {
    let mut t = Table::new(&["layer", "value"]);
    for (layer, v) in curve.layers().zip(&curve.values) {
        t.push(vec![layer.to_string(), fmt_f64(*v)])?;
    }
    Ok(t)
}

pub fn training_log_table(outcome: &TrainOutcome) -> Result<Table> {
    let mut t = Table::new(&[
        "step",
        "ce",
        "contrastive",
        "total",
        "eval_acc",
        "tdnv_at_contrast_layer",
    ]);
    for r in &outcome.log {
        t.push(vec![
            r.step.to_string(),
            fmt_f64(r.ce),
            fmt_opt(r.contrastive),
            fmt_f64(r.total),
            fmt_opt(r.eval_acc),
            fmt_opt(r.tdnv_at_contrast_layer),
        ])?;
    }
    Ok(t)
}

fn sweep_table() -> Table {
    Table::new(&["setting", "value", "opt_layer", "tdnv_at_opt", "accuracy"])
}

/// Final-layer ICL accuracy.
fn icl_accuracy(model: &TransformerModel, insts: &[IclInstance]) -> Result<f64> {
    Ok(*early_exit_curve(model, insts)?.last().expect("layers"))
}

/// `ℓ̂` from the override or from the clean curve at the configured `K`.
fn reference_layer(ctx: &mut RunContext, model: &TransformerModel) -> Result<(usize, TdnvCurve)> {
    let insts = ctx.dataset(ctx.config.k, "reference", model.config().max_len)?;
    let curve = ctx.curve(model, &insts)?;
    let layer = ctx.config.layer.unwrap_or_else(|| curve.argmin());
    Ok((layer, curve))
}

fn at(curve: &TdnvCurve, layer: usize) -> Result<f64> {
    curve.at(layer).ok_or(Error::Index {
        what: "curve layer",
        index: layer,
        limit: curve.first_layer + curve.values.len(),
    })
}

pub struct TrainExperiment;

impl Experiment for TrainExperiment {
    fn name(&self) -> &'static str {
        "train"
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        let tasks = ctx.tasks()?;
        let (model, outcome) = ctx.train_fresh(&tasks)?;
        let log = training_log_table(&outcome)?;
        ctx.write_table("training_log.csv", &log)?;
        ctx.plot("training_log.csv", &log, None)?;
        ctx.save_model("model.iclt", &model)?;
        ctx.write_json(
            "summary.json",
            &json!({
                "final_accuracy": outcome.final_eval.accuracy,
                "per_task_accuracy": outcome.final_eval.per_task_accuracy,
                "tdnv_at_contrast_layer": outcome.final_eval.tdnv,
                "parameters": model.parameter_count(),
            }),
        )?;
        ctx.stage("train");
        Ok(())
    }
}

pub struct TdnvExperiment;

impl Experiment for TdnvExperiment {
    fn name(&self) -> &'static str {
        "tdnv"
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        let model = ctx.model()?;
        let mut insts = ctx.dataset(ctx.config.k, "tdnv", model.config().max_len)?;
        if let Some(spec) = ctx.config.noise.clone() {
            insts = ctx.with_noise(&insts, &spec, "tdnv")?;
        }
        ctx.stage("generate");
        let labels = ctx.task_labels()?;
        let mut summary = serde_json::Map::new();
        let mut main = None;
        for name in representation_kinds().names() {
            let kind = representation_kinds().get(name)?;
            let set = collect_representations(&model, &insts, &labels, kind, "model")?;
            let curve = crate::geometry::tdnv_curve(&set, ctx.config.aggregation)?;
            ctx.write_table(&format!("tdnv_curve_{name}.csv"), &curve_table(&curve)?)?;
            let (dc, de) = compression_expression_ratios(&curve)?;
            summary.insert(
                name.to_string(),
                json!({"first_layer": curve.first_layer, "opt_layer": curve.argmin(), "delta_compression": dc, "delta_expression": de}),
            );
            if name == ctx.config.representation {
                main = Some((curve, set));
            }
        }
        let (curve, set) = main.ok_or_else(|| Error::UnknownName {
            kind: "representation kind",
            name: ctx.config.representation.clone(),
        })?;
        let table = curve_table(&curve)?;
        ctx.write_table("tdnv_curve.csv", &table)?;
        ctx.plot("tdnv_curve.csv", &table, None)?;
        ctx.stage("measure");

        let layer = ctx.config.layer.unwrap_or_else(|| curve.argmin());
        let groups = set.at_layer(layer)?;
        let points: Vec<Vec<f64>> = groups.iter().flatten().cloned().collect();
        let pca = pca_2d(&points)?;
        let mut pt = Table::new(&["task", "instance", "x", "y"]);
        let mut idx = 0;
        for (t, g) in groups.iter().enumerate() {
            for i in 0..g.len() {
                let [x, y] = pca.coords[idx];
                pt.push(vec![
                    set.task_names[t].clone(),
                    i.to_string(),
                    fmt_f64(x),
                    fmt_f64(y),
                ])?;
                idx += 1;
            }
        }
        ctx.write_table("pca.csv", &pt)?;
        ctx.plot("pca.csv", &pt, None)?;
        summary.insert("pca_layer".into(), json!(layer));
        summary.insert("pca_explained".into(), json!(pca.explained));
        ctx.write_json("summary.json", &summary)?;
        ctx.stage("pca");
        Ok(())
    }
}

pub struct GridTdnvExperiment;

impl Experiment for GridTdnvExperiment {
    fn name(&self) -> &'static str {
        "grid_tdnv"
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        let model = ctx.model()?;
        let insts = ctx.dataset(ctx.config.k, "grid", model.config().max_len)?;
        let ids: Vec<usize> = ctx.task_labels()?.iter().map(|t| t.0).collect();
        let grid = grid_tdnv(&model, &insts, &ids, ctx.config.aggregation)?;
        let mut t = Table::new(&["layer", "sep", "value"]);
        for (i, row) in grid.values.iter().enumerate() {
            for (s, v) in row.iter().enumerate() {
                t.push(vec![
                    (grid.first_layer + i).to_string(),
                    (s + 1).to_string(),
                    fmt_f64(*v),
                ])?;
            }
        }
        ctx.write_table("grid_tdnv.csv", &t)?;
        ctx.plot("grid_tdnv.csv", &t, None)?;
        ctx.stage("measure");
        Ok(())
    }
}

pub struct ProbesExperiment;

impl Experiment for ProbesExperiment {
    fn name(&self) -> &'static str {
        "probes"
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        let model = ctx.model()?;
        let tasks = ctx.tasks()?;
        let cfg = ProbeConfig {
            n: ctx.config.n,
            k: ctx.config.k,
            seed: ctx.config.seed,
        };
        let report = run_probes(&model, &tasks, &cfg)?;
        let mut t = Table::new(&[
            "layer",
            "tv_acc",
            "mean_tv_acc",
            "early_exit_acc",
            "baseline",
        ]);
        for (i, layer) in report.layers.iter().enumerate() {
            t.push(vec![
                layer.to_string(),
                fmt_f64(report.tv_acc[i]),
                fmt_f64(report.mean_tv_acc[i]),
                fmt_f64(report.early_exit_acc[i]),
                fmt_f64(report.baseline),
            ])?;
        }
        ctx.write_table("probe_report.csv", &t)?;
        ctx.plot("probe_report.csv", &t, None)?;
        ctx.stage("probe");

        let insts = probe_instances(&tasks, &cfg, model.config().max_len)?;
        let mut maps = Vec::new();
        for (task, (_, list)) in tasks.iter().zip(&insts) {
            match saliency_map(&model, &list[0]) {
                Ok(per_layer) => {
                    for (l, m) in per_layer.into_iter().enumerate() {
                        maps.push((format!("{}.layer{}", task.name(), l + 1), m));
                    }
                }
                Err(Error::Unsupported(msg)) => {
                    log::warn!("saliency skipped: {msg}");
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if !maps.is_empty() {
            save_tensors(ctx.dir.join("saliency.iclt"), &maps, DType::F32)?;
            ctx.manifest.add(&ctx.dir.clone(), "saliency.iclt")?;
        }
        ctx.stage("saliency");
        Ok(())
    }
}

pub struct BiasVarianceExperiment;

impl Experiment for BiasVarianceExperiment {
    fn name(&self) -> &'static str {
        "bias_variance"
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        let model = ctx.model()?;
        let (layer, _) = reference_layer(ctx, &model)?;
        let grid = ctx.config.k_grid.clone();
        let k_inf = ctx
            .config
            .k_inf
            .unwrap_or_else(|| grid.iter().copied().max().unwrap_or(0));
        let kind = representation_kinds().get(&ctx.config.representation)?;
        let labels = ctx.task_labels()?;
        let mut reps = Vec::with_capacity(grid.len());
        for &k in &grid {
            let insts = ctx.dataset(k, &format!("bias-variance-k{k}"), model.config().max_len)?;
            let set = collect_representations(&model, &insts, &labels, kind, "model")?;
            reps.push(set.at_layer(layer)?);
        }
        let report = bias_variance_decompose(&reps, &grid, k_inf)?;
        let mut t = Table::new(&["K", "bias_ratio", "variance"]);
        for (i, k) in grid.iter().enumerate() {
            t.push(vec![
                k.to_string(),
                fmt_f64(report.bias_mean[i]),
                fmt_f64(report.variance_mean[i]),
            ])?;
        }
        ctx.write_table("bias_variance.csv", &t)?;
        let mut style =
            crate::io::PlotStyle::for_file("bias_variance.csv").expect("declared style");
        style.title = format!("bias and variance at layer {layer} (K∞ = {k_inf} stands in for ∞)");
        ctx.plot("bias_variance.csv", &t, Some(style))?;
        ctx.write_json(
            "summary.json",
            &json!({
                "layer": layer,
                "k_inf": k_inf,
                "note": format!("mu(inf) approximated by mu(K={k_inf})"),
                "bias_slope": report.bias_slope,
                "variance_slope": report.variance_slope,
            }),
        )?;
        ctx.stage("measure");
        Ok(())
    }
}

pub struct NoiseSweep;

impl Experiment for NoiseSweep {
    fn name(&self) -> &'static str {
        "noise_sweep"
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        let model = ctx.model()?;
        let (layer, _) = reference_layer(ctx, &model)?;
        let clean = ctx.dataset(ctx.config.k, "noise-sweep", model.config().max_len)?;
        let mut t = sweep_table();
        let mut depth = Vec::new();
        for (i, &ratio) in ctx.config.noise_ratios.clone().iter().enumerate() {
            let insts =
                ctx.with_noise(&clean, &NoiseSpec::Ratio { ratio }, &format!("ratio{i}"))?;
            let curve = ctx.curve(&model, &insts)?;
            ctx.write_table(&format!("tdnv_curve_noise{i}.csv"), &curve_table(&curve)?)?;
            t.push(vec![
                "noise_ratio".into(),
                fmt_f64(ratio),
                layer.to_string(),
                fmt_f64(at(&curve, layer)?),
                fmt_f64(icl_accuracy(&model, &insts)?),
            ])?;
            depth.push(json!({"ratio": ratio, "min_over_endpoints": curve.min() / curve.first().min(curve.last())}));
        }
        ctx.write_table("sweep.csv", &t)?;
        ctx.plot("sweep.csv", &t, None)?;
        ctx.write_json("summary.json", &json!({"layer": layer, "u_depth": depth}))?;
        ctx.stage("sweep");
        Ok(())
    }
}

pub struct PositionSweep;

impl Experiment for PositionSweep {
    fn name(&self) -> &'static str {
        "position_sweep"
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        let model = ctx.model()?;
        let (layer, _) = reference_layer(ctx, &model)?;
        let k = ctx.config.k;
        let m = ctx.config.perturbed;
        if m > k {
            return Err(Error::Config(format!(
                "cannot perturb {m} of {k} demonstrations"
            )));
        }
        let clean = ctx.dataset(k, "position-sweep", model.config().max_len)?;
        let mut t = sweep_table();
        let settings = [
            ("clean", None),
            ("first", Some((0..m).collect::<Vec<_>>())),
            ("last", Some((k - m..k).collect())),
        ];
        for (name, positions) in settings {
            let insts = match positions {
                Some(positions) => {
                    ctx.with_noise(&clean, &NoiseSpec::Positions { positions }, name)?
                }
                None => clean.clone(),
            };
            let curve = ctx.curve(&model, &insts)?;
            ctx.write_table(&format!("tdnv_curve_{name}.csv"), &curve_table(&curve)?)?;
            t.push(vec![
                name.into(),
                m.to_string(),
                layer.to_string(),
                fmt_f64(at(&curve, layer)?),
                fmt_f64(icl_accuracy(&model, &insts)?),
            ])?;
        }
        ctx.write_table("sweep.csv", &t)?;
        ctx.stage("sweep");
        Ok(())
    }
}

pub struct KSweep;

impl Experiment for KSweep {
    fn name(&self) -> &'static str {
        "k_sweep"
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        let model = ctx.model()?;
        let (layer, _) = reference_layer(ctx, &model)?;
        let mut t = sweep_table();
        for &k in &ctx.config.k_grid.clone() {
            let insts = ctx.dataset(k, &format!("k-sweep-k{k}"), model.config().max_len)?;
            let curve = ctx.curve(&model, &insts)?;
            ctx.write_table(&format!("tdnv_curve_k{k}.csv"), &curve_table(&curve)?)?;
            t.push(vec![
                "k".into(),
                k.to_string(),
                layer.to_string(),
                fmt_opt(curve.at(layer)),
                fmt_f64(icl_accuracy(&model, &insts)?),
            ])?;
        }
        ctx.write_table("sweep.csv", &t)?;
        ctx.plot("sweep.csv", &t, None)?;
        ctx.stage("sweep");
        Ok(())
    }
}

pub struct SizeSweep;

impl Experiment for SizeSweep {
    fn name(&self) -> &'static str {
        "size_sweep"
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        let tasks = ctx.tasks()?;
        let mut t = sweep_table();
        for size in ctx.config.sizes.clone() {
            let cfg = ModelConfig {
                layers: size.layers,
                d_model: size.d_model,
                n_heads: size.n_heads,
                d_ff: size.d_ff,
                ..ctx.config.model.clone()
            };
            let tag = format!("L{}_d{}", size.layers, size.d_model);
            let mut model = TransformerModel::init(cfg)?;
            let train_cfg = TrainConfig {
                contrast_layer: None,
                ..ctx.config.train.clone()
            };
            let outcome = train(&mut model, &tasks, &train_cfg)?;
            ctx.write_table(
                &format!("training_log_{tag}.csv"),
                &training_log_table(&outcome)?,
            )?;
            let insts = ctx.dataset(ctx.config.k, "size-sweep", model.config().max_len)?;
            let curve = ctx.curve(&model, &insts)?;
            ctx.write_table(&format!("tdnv_curve_{tag}.csv"), &curve_table(&curve)?)?;
            t.push(vec![
                tag,
                model.parameter_count().to_string(),
                curve.argmin().to_string(),
                fmt_f64(curve.min()),
                fmt_f64(icl_accuracy(&model, &insts)?),
            ])?;
        }
        ctx.write_table("sweep.csv", &t)?;
        ctx.stage("sweep");
        Ok(())
    }
}

pub struct RepeatDistinct;

impl Experiment for RepeatDistinct {
    fn name(&self) -> &'static str {
        "repeat_distinct"
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        let model = ctx.model()?;
        let (layer, _) = reference_layer(ctx, &model)?;
        let tasks = ctx.tasks()?;
        let (from, to) = (ctx.config.extend_from, ctx.config.extend_to);
        let base = ctx.dataset(from, "repeat-distinct", model.config().max_len)?;
        let mut t = sweep_table();
        let settings = [
            ("base", None),
            ("repeat", Some(ExtendMode::Repeat)),
            ("distinct", Some(ExtendMode::Distinct)),
        ];
        for (name, mode) in settings {
            let insts = match mode {
                None => base.clone(),
                Some(mode) => base
                    .iter()
                    .enumerate()
                    .map(|(i, inst)| {
                        let task = tasks
                            .iter()
                            .find(|t| t.id == inst.task)
                            .expect("listed task");
                        let mut r = rng::stream(
                            ctx.config.seed,
                            rng::stream_id(&["extend", name], i as u64),
                        );
                        extend_instance(inst, mode, to, task, &mut r)
                    })
                    .collect::<Result<Vec<_>>>()?,
            };
            let curve = ctx.curve(&model, &insts)?;
            ctx.write_table(&format!("tdnv_curve_{name}.csv"), &curve_table(&curve)?)?;
            t.push(vec![
                name.into(),
                insts[0].k().to_string(),
                layer.to_string(),
                fmt_f64(at(&curve, layer)?),
                fmt_f64(icl_accuracy(&model, &insts)?),
            ])?;
        }
        ctx.write_table("sweep.csv", &t)?;
        ctx.stage("sweep");
        Ok(())
    }
}

pub struct TheoremExperiment;

impl Experiment for TheoremExperiment {
    fn name(&self) -> &'static str {
        "theorem"
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        let report = run_theorem(&ctx.config.theorem)?;
        let mut t = Table::new(&[
            "K",
            "var_est",
            "var_stderr",
            "lambda_est",
            "lambda_pred",
            "residual",
        ]);
        for r in &report.rows {
            t.push(vec![
                r.k.to_string(),
                fmt_f64(r.var_est),
                fmt_f64(r.var_stderr),
                fmt_f64(r.lambda_est),
                fmt_f64(r.lambda_pred),
                fmt_f64(r.residual),
            ])?;
        }
        ctx.write_table("theorem_report.csv", &t)?;
        ctx.plot("theorem_report.csv", &t, None)?;
        ctx.write_json(
            "summary.json",
            &json!({
                "variance_slope": report.variance_slope,
                "scaled_variance_ratio": report.scaled_variance_ratio,
                "infinite_mean_mc": report.infinite_mean,
                "infinite_mean_stderr": report.infinite_mean_stderr,
                "infinite_mean_closed_form": report.closed_form_infinite_mean,
                "collinear": report.rows.iter().all(|r| r.collinear),
            }),
        )?;
        ctx.stage("theorem");
        Ok(())
    }
}

/// Per-query task-vector hits at each model's own optimal layer.
fn tv_hits_at(
    model: &TransformerModel,
    per_task: &[(Vec<usize>, Vec<IclInstance>)],
    layer: usize,
) -> Result<Vec<bool>> {
    let mut hits = Vec::new();
    for (dummy, insts) in per_task {
        let vectors = extract_task_vectors(model, insts, dummy)?;
        let at: Vec<TaskVector> = vectors
            .into_iter()
            .map(|mut v| v.swap_remove(layer - 1))
            .collect();
        hits.extend(task_vector_hits(
            model,
            insts,
            layer,
            VectorSource::PerQuery(&at),
        )?);
    }
    Ok(hits)
}

pub struct ContrastiveCompare;

impl Experiment for ContrastiveCompare {
    fn name(&self) -> &'static str {
        "contrastive_compare"
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        let base = ctx.model()?;
        let tasks = ctx.tasks()?;
        let layers = base.config().layers;
        let contrast_layer = ctx.config.train.contrast_layer_for(layers);
        let arms = [
            ("ce", LossMode::CeOnly),
            ("contrastive", LossMode::CePlusContrastive),
        ];
        let eval = ctx.dataset(ctx.config.k, "contrastive-eval", base.config().max_len)?;
        let probe_cfg = ProbeConfig {
            n: ctx.config.n,
            k: ctx.config.k,
            seed: ctx.config.seed,
        };
        let per_task = probe_instances(&tasks, &probe_cfg, base.config().max_len)?;
        let mut t = Table::new(&[
            "variant",
            "tdnv_at_contrast_layer",
            "opt_layer",
            "tv_acc",
            "icl_acc",
        ]);
        let mut all_hits = Vec::new();
        for (name, mode) in arms {
            let cfg = TrainConfig {
                steps: ctx.config.finetune_steps,
                loss_mode: mode,
                ..ctx.config.train.clone()
            };
            let mut model = base.clone();
            let outcome = train(&mut model, &tasks, &cfg)?;
            ctx.write_table(
                &format!("training_log_{name}.csv"),
                &training_log_table(&outcome)?,
            )?;
            let curve = ctx.curve(&model, &eval)?;
            let layer = curve.argmin();
            let hits = tv_hits_at(&model, &per_task, layer)?;
            let acc = hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64;
            t.push(vec![
                name.into(),
                fmt_opt(curve.at(contrast_layer)),
                layer.to_string(),
                fmt_f64(acc),
                fmt_f64(icl_accuracy(&model, &eval)?),
            ])?;
            all_hits.push(hits);
        }
        let diffs: Vec<f64> = all_hits[1]
            .iter()
            .zip(&all_hits[0])
            .map(|(&c, &e)| f64::from(u8::from(c)) - f64::from(u8::from(e)))
            .collect();
        let (lo, hi) = bootstrap_mean_ci(
            &diffs,
            ctx.config.bootstrap_resamples.max(1),
            0.95,
            ctx.config.seed,
        )?;
        ctx.write_table("contrastive_compare.csv", &t)?;
        ctx.write_json(
            "summary.json",
            &json!({
                "contrast_layer": contrast_layer,
                "tv_acc_gain": crate::geometry::stats::mean(&diffs),
                "tv_acc_gain_ci95": [lo, hi],
            }),
        )?;
        ctx.stage("compare");
        Ok(())
    }
}
