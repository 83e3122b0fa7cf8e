//! End-to-end acceptance suite. Each test prints one `criterion N: PASS|FAIL` line.
//!
//! The toy model is trained once per process and cached under the cargo
//! target tmpdir keyed by its full configuration; delete the cache (or set
//! `ICL_LENS_RETRAIN=1`) to retrain from scratch.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use icl_lens::autodiff::Tensor;
use icl_lens::experiments::{run_experiment, ExperimentConfig, IngestPaths, ModelSize};
use icl_lens::geometry::stats::bootstrap_mean_ci;
use icl_lens::geometry::{
    between_task_distance, bias_variance_decompose, collect_representations, grid_tdnv, pca_2d,
    tdnv_curve, tdnv_grouped, within_task_variance, LastSeparator, PairAggregation, TdnvCurve,
};
use icl_lens::io::{
    decode_tensors, encode_tensors, load_checkpoint, save_checkpoint, DType, Manifest,
};
use icl_lens::model::{argmax, Injection, ModelConfig, TransformerModel};
use icl_lens::probes::{
    early_exit_curve, extract_task_vectors, probe_instances, run_probes, task_vector_hits,
    ProbeConfig, TaskVector, VectorSource,
};
use icl_lens::rng;
use icl_lens::taskgen::{
    extend_instance, inject_noise, letter_tasks, make_instance, sample_dataset, ExtendMode,
    IclInstance, NoiseSpec, TaskSpec,
};
use icl_lens::theorem::{run_theorem, QuerySpec, TheoremConfig};
use icl_lens::training::{loss_and_gradients, train, LossMode, TrainConfig};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

mod common;

const SEED: u64 = 7;
const N: usize = 100;
const K: usize = 10;

fn report(n: u32, pass: bool, detail: &str) {
    // bypasses the harness capture so the verdict lands in the plain test log
    let line = format!(
        "criterion {n}: {} | {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

fn model_config() -> ModelConfig {
    ModelConfig {
        seed: SEED,
        ..ModelConfig::default()
    }
}

fn train_config() -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        warmup_steps: 50,
        steps: 2000,
        batch_size: 20,
        k_train: 32,
        eval_every: 200,
        eval_instances: 20,
        eval_k: K,
        seed: SEED,
        ..TrainConfig::default()
    }
}

struct Trained {
    model: TransformerModel,
    train_secs: f64,
}

fn cache_dir() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = cache_dir();
        let key = format!(
            "{}\n[train]\n{}",
            model_config().to_toml().unwrap(),
            toml::to_string(&train_config()).unwrap()
        );
        let (ckpt, key_file, secs_file) = (
            dir.join("model.iclt"),
            dir.join("key.toml"),
            dir.join("train_secs"),
        );
        let fresh = std::env::var_os("ICL_LENS_RETRAIN").is_some();
        if !fresh && std::fs::read_to_string(&key_file).ok().as_deref() == Some(key.as_str()) {
            if let (Ok(model), Ok(secs)) =
                (load_checkpoint(&ckpt), std::fs::read_to_string(&secs_file))
            {
                return Trained {
                    model,
                    train_secs: secs.trim().parse().unwrap(),
                };
            }
        }
        let mut model = TransformerModel::init(model_config()).unwrap();
        let t0 = Instant::now();
        train(&mut model, &letter_tasks(), &train_config()).unwrap();
        let train_secs = t0.elapsed().as_secs_f64();
        std::fs::create_dir_all(&dir).unwrap();
        save_checkpoint(&model, &ckpt).unwrap();
        std::fs::write(&secs_file, train_secs.to_string()).unwrap();
        std::fs::write(&key_file, key).unwrap();
        Trained { model, train_secs }
    })
}

fn tasks() -> Vec<TaskSpec> {
    letter_tasks()
}

fn task_labels() -> Vec<(usize, String)> {
    tasks()
        .iter()
        .map(|t| (t.id, t.name().to_string()))
        .collect()
}

fn dataset(model: &TransformerModel, k: usize, salt: &str) -> Vec<IclInstance> {
    sample_dataset(&tasks(), N, k, SEED, salt, model.config().max_len).unwrap()
}

fn curve(model: &TransformerModel, insts: &[IclInstance]) -> TdnvCurve {
    let set = collect_representations(model, insts, &task_labels(), &LastSeparator, "toy").unwrap();
    tdnv_curve(&set, PairAggregation::Mean).unwrap()
}

fn accuracy(model: &TransformerModel, insts: &[IclInstance]) -> f64 {
    *early_exit_curve(model, insts).unwrap().last().unwrap()
}

/// Clean K=10 reference curve and its optimal layer.
fn reference() -> &'static (TdnvCurve, usize) {
    static CELL: OnceLock<(TdnvCurve, usize)> = OnceLock::new();
    CELL.get_or_init(|| {
        let m = &trained().model;
        let c = curve(m, &dataset(m, K, "acceptance-reference"));
        let l = c.argmin();
        (c, l)
    })
}

fn noisy(insts: &[IclInstance], spec: &NoiseSpec, salt: &str) -> Vec<IclInstance> {
    let tasks = tasks();
    insts
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let task = tasks.iter().find(|t| t.id == inst.task).unwrap();
            let mut r = rng::stream(SEED, rng::stream_id(&["acceptance-noise", salt], i as u64));
            inject_noise(inst, spec, task, &mut r).unwrap()
        })
        .collect()
}

#[test]
fn criterion_01_gradient_integrity() {
    let t0 = Instant::now();
    let primitives = common::primitive_errors();
    let (worst_name, worst_prim) =
        primitives
            .iter()
            .copied()
            .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });

    let mut model = TransformerModel::init(ModelConfig {
        layers: 2,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        max_len: 40,
        seed: 3,
        ..ModelConfig::default()
    })
    .unwrap();
    let tasks = tasks();
    let mut r = rng::seeded(4);
    let batch: Vec<IclInstance> = (0..4)
        .map(|j| make_instance(&tasks[j % 2], 3, &mut r, 40).unwrap())
        .collect();
    let cfg = TrainConfig {
        loss_mode: LossMode::CePlusContrastive,
        beta: 0.5,
        tau: 0.5,
        contrast_layer: Some(1),
        ..TrainConfig::default()
    };
    let (_, grads) = loss_and_gradients(&model, &batch, &cfg).unwrap();
    // normwise per tensor: single entries near 1e-9 sit at the f64 differencing noise floor
    let eps = 1e-4;
    let mut worst_model: f64 = 0.0;
    for p in 0..grads.len() {
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for i in 0..grads[p].len() {
            let orig = model.params()[p].data()[i];
            model.params_mut()[p].data_mut()[i] = orig + eps;
            let up = loss_and_gradients(&model, &batch, &cfg).unwrap().0;
            model.params_mut()[p].data_mut()[i] = orig - eps;
            let down = loss_and_gradients(&model, &batch, &cfg).unwrap().0;
            model.params_mut()[p].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = grads[p][i];
            diff += (a - numeric) * (a - numeric);
            na += a * a;
            nn += numeric * numeric;
        }
        worst_model = worst_model.max(diff.sqrt() / (na.sqrt() + nn.sqrt() + 1e-12));
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst_prim < 1e-4 && worst_model < 1e-4 && secs < 60.0;
    report(
        1,
        pass,
        &format!(
            "{} primitives, worst {worst_name} {worst_prim:.2e}; 2-layer d=16 transformer ({} params, {} tensors, normwise) {worst_model:.2e}; {secs:.1}s",
            primitives.len(),
            model.parameter_count(),
            grads.len()
        ),
    );
}

#[test]
fn criterion_02_metric_oracles() {
    let groups = vec![
        vec![vec![0.0, 0.0], vec![2.0, 0.0]],
        vec![vec![5.0, 0.0], vec![5.0, 2.0]],
    ];
    let var = within_task_variance(&groups[0]).unwrap();
    let dist = between_task_distance(&[1.0, 0.0], &[5.0, 1.0]).unwrap();
    let v = tdnv_grouped(&groups, PairAggregation::Mean).unwrap();
    let exact =
        (var - 1.0).abs() < 1e-12 && (dist - 17.0).abs() < 1e-12 && (v - 1.0 / 17.0).abs() < 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let d = 8;
    let points: Vec<Vec<f64>> = (0..500)
        .map(|_| {
            (0..d)
                .map(|j| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    x * (d - j) as f64
                })
                .collect()
        })
        .collect();
    let pca = pca_2d(&points).unwrap();
    let n = points.len();
    let mean: Vec<f64> = (0..d)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64)
        .collect();
    let x = DMatrix::from_fn(n, d, |i, j| points[i][j] - mean[j]);
    let eig = SymmetricEigen::new(x.transpose() * &x / (n - 1) as f64);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut worst: f64 = 0.0;
    for c in 0..2 {
        let want = eig.eigenvectors.column(order[c]);
        let dotp: f64 = (0..d).map(|j| want[j] * pca.components[c][j]).sum();
        let sign = dotp.signum();
        for j in 0..d {
            worst = worst.max((pca.components[c][j] - sign * want[j]).abs());
        }
        worst = worst
            .max((pca.explained[c] - eig.eigenvalues[order[c]]).abs() / eig.eigenvalues[order[c]]);
    }
    report(
        2,
        exact && worst < 1e-6,
        &format!("variance {var}, distance {dist}, tdnv {v:.15}; PCA vs dense eigen max deviation {worst:.2e}"),
    );
}

fn theorem_config(query: QuerySpec) -> TheoremConfig {
    TheoremConfig {
        query,
        m: 100_000,
        seed: SEED,
        ..TheoremConfig::default()
    }
}

#[test]
fn criterion_03_theorem_variance_rate() {
    let t0 = Instant::now();
    let mut e1 = vec![0.0; 8];
    e1[0] = 1.0;
    let rep = run_theorem(&TheoremConfig {
        m_inf: Some(1_000_000),
        ..theorem_config(QuerySpec::Fixed { value: Some(e1) })
    });
    let secs = t0.elapsed().as_secs_f64();
    let (slope, ratio) = match &rep {
        Ok(r) => (r.variance_slope, r.scaled_variance_ratio),
        Err(_) => (None, None),
    };
    let pass = matches!(slope, Some(s) if (-1.3..=-0.7).contains(&s))
        && matches!(ratio, Some(q) if q < 1.5)
        && secs < 300.0;
    report(
        3,
        pass,
        &format!("slope {slope:?}, (K+1)·Var max/min {ratio:?}, {secs:.1}s"),
    );
}

#[test]
fn criterion_04_theorem_mean_shift() {
    let cfg = TheoremConfig {
        m_inf: Some(4_000_000),
        ..theorem_config(QuerySpec::Fixed { value: None })
    };
    let rep = run_theorem(&cfg).unwrap();
    let mut worst_z: f64 = 0.0;
    for r in rep.rows.iter().filter(|r| r.k > 0) {
        worst_z = worst_z.max((r.lambda_est - r.lambda_pred).abs() / r.lambda_stderr);
    }
    let zero = rep.rows.iter().find(|r| r.k == 0).unwrap();
    let closed = rep.closed_form_infinite_mean.clone().unwrap();
    let mut worst_cf: f64 = 0.0;
    for ((c, m), se) in closed
        .iter()
        .zip(&rep.infinite_mean)
        .zip(&rep.infinite_mean_stderr)
    {
        worst_cf = worst_cf.max((c - m).abs() / se);
    }
    report(
        4,
        worst_z <= 3.0 && zero.lambda_est == 1.0 && worst_cf <= 3.0,
        &format!(
            "max |λ̂−1/(K+1)|/se {worst_z:.2}, λ̂_0 = {}, closed-form vs MC max |Δ|/se {worst_cf:.2}",
            zero.lambda_est
        ),
    );
}

#[test]
fn criterion_05_u_shape() {
    let t = trained();
    let m = &t.model;
    let l = m.config().layers;
    let (c, lhat) = reference().clone();
    let insts = dataset(m, K, "acceptance-reference");
    let exit = early_exit_curve(m, &insts).unwrap();
    let probe = run_probes(
        m,
        &tasks(),
        &ProbeConfig {
            n: 40,
            k: K,
            seed: SEED,
        },
    )
    .unwrap();
    let tv_best = probe.layers
        [icl_lens::geometry::optimal_layer(&probe.tv_acc.iter().map(|a| -a).collect::<Vec<_>>())];
    let depth = c.at(lhat).unwrap() / c.first().min(c.last());
    let a = c.has_interior_minimum() && depth < 0.5;
    let b = exit[l] >= 0.95 && exit[l] - exit[lhat] >= 0.20;
    let cc = tv_best.abs_diff(lhat) <= 2;
    report(
        5,
        a && b && cc && t.train_secs <= 3600.0,
        &format!(
            "train {:.0}s; ℓ̂ = {lhat} (curve from layer {}), TDNV(ℓ̂)/min(ends) {depth:.3}; early exit {:.3} at ℓ̂ vs {:.3} at L; task-vector argmax layer {tv_best}; curve {:.3?}; early exit {:.3?}; tv acc {:.3?}",
            t.train_secs,
            c.first_layer,
            exit[lhat],
            exit[l],
            c.values,
            exit,
            probe.tv_acc
        ),
    );
}

#[test]
fn criterion_06_k_monotonicity() {
    let m = &trained().model;
    let lhat = reference().1;
    let ks = [2, 5, 10, 20];
    let vals: Vec<f64> = ks
        .iter()
        .map(|&k| {
            curve(m, &dataset(m, k, &format!("acceptance-k{k}")))
                .at(lhat)
                .unwrap()
        })
        .collect();
    let decreasing = vals.windows(2).all(|w| w[1] < w[0]);

    let grid = [0, 1, 2, 4, 8, 16, 32];
    let reps: Vec<_> = grid
        .iter()
        .map(|&k| {
            let insts = dataset(m, k, &format!("acceptance-bv-k{k}"));
            collect_representations(m, &insts, &task_labels(), &LastSeparator, "toy")
                .unwrap()
                .at_layer(lhat)
                .unwrap()
        })
        .collect();
    let bv = bias_variance_decompose(&reps, &grid, 32).unwrap();
    report(
        6,
        decreasing && bv.bias_slope <= -0.5 && bv.variance_slope <= -0.5,
        &format!(
            "TDNV(ℓ̂={lhat}) at K {ks:?} = {vals:.4?}; bias slope {:.3}, variance slope {:.3}",
            bv.bias_slope, bv.variance_slope
        ),
    );
}

#[test]
fn criterion_07_noise() {
    let m = &trained().model;
    let lhat = reference().1;
    let clean = dataset(m, K, "acceptance-noise");
    let ratios = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    let curves: Vec<TdnvCurve> = ratios
        .iter()
        .enumerate()
        .map(|(i, &ratio)| {
            curve(
                m,
                &noisy(&clean, &NoiseSpec::Ratio { ratio }, &format!("ratio{i}")),
            )
        })
        .collect();
    let at: Vec<f64> = curves.iter().map(|c| c.at(lhat).unwrap()).collect();
    let monotone = at.windows(2).all(|w| w[1] >= w[0]);
    let full = curves.last().unwrap();
    let ends = full.first().min(full.last());
    let depth = full.min() / ends;
    let depth_at_lhat = full.at(lhat).unwrap() / ends;

    let first = curve(
        m,
        &noisy(
            &clean,
            &NoiseSpec::Positions {
                positions: vec![0, 1, 2],
            },
            "first",
        ),
    )
    .at(lhat)
    .unwrap();
    let last = curve(
        m,
        &noisy(
            &clean,
            &NoiseSpec::Positions {
                positions: vec![7, 8, 9],
            },
            "last",
        ),
    )
    .at(lhat)
    .unwrap();
    report(
        7,
        monotone && depth > 0.8 && depth_at_lhat > 0.8 && last >= first,
        &format!(
            "TDNV(ℓ̂={lhat}) over ratios {at:.4?}; at ratio 1 min/min(ends) {depth:.3}, TDNV(ℓ̂)/min(ends) {depth_at_lhat:.3}; last-3 {last:.4} vs first-3 {first:.4}"
        ),
    );
}

#[test]
fn criterion_08_repeat_vs_distinct() {
    let m = &trained().model;
    let lhat = reference().1;
    let tasks = tasks();
    let base = dataset(m, 5, "acceptance-extend");
    let extend = |mode: ExtendMode, name: &str| -> Vec<IclInstance> {
        base.iter()
            .enumerate()
            .map(|(i, inst)| {
                let task = tasks.iter().find(|t| t.id == inst.task).unwrap();
                let mut r =
                    rng::stream(SEED, rng::stream_id(&["acceptance-extend", name], i as u64));
                extend_instance(inst, mode, 20, task, &mut r).unwrap()
            })
            .collect()
    };
    let repeat = extend(ExtendMode::Repeat, "repeat");
    let distinct = extend(ExtendMode::Distinct, "distinct");
    let (tr, td) = (
        curve(m, &repeat).at(lhat).unwrap(),
        curve(m, &distinct).at(lhat).unwrap(),
    );
    let (ar, ad) = (accuracy(m, &repeat), accuracy(m, &distinct));
    report(
        8,
        td < tr && ad >= ar,
        &format!("TDNV(ℓ̂={lhat}) distinct {td:.4} vs repeat {tr:.4}; accuracy distinct {ad:.3} vs repeat {ar:.3}"),
    );
}

fn tv_hits(
    model: &TransformerModel,
    per_task: &[(Vec<usize>, Vec<IclInstance>)],
    layer: usize,
) -> Vec<bool> {
    let mut hits = Vec::new();
    for (dummy, insts) in per_task {
        let vectors = extract_task_vectors(model, insts, dummy).unwrap();
        let at: Vec<TaskVector> = vectors
            .into_iter()
            .map(|mut v| v.swap_remove(layer - 1))
            .collect();
        hits.extend(task_vector_hits(model, insts, layer, VectorSource::PerQuery(&at)).unwrap());
    }
    hits
}

#[test]
fn criterion_09_contrastive_finetuning() {
    let base = &trained().model;
    let tasks = tasks();
    let eval = dataset(base, K, "acceptance-contrastive");
    let per_task = probe_instances(
        &tasks,
        &ProbeConfig {
            n: N,
            k: K,
            seed: SEED,
        },
        base.config().max_len,
    )
    .unwrap();
    let finetune = |mode: LossMode| {
        let cfg = TrainConfig {
            steps: 200,
            loss_mode: mode,
            beta: 0.1,
            tau: 0.07,
            warmup_steps: 0,
            eval_every: 0,
            seed: SEED + 1,
            ..train_config()
        };
        let mut m = base.clone();
        train(&mut m, &tasks, &cfg).unwrap();
        let lc = cfg.contrast_layer_for(m.config().layers);
        let c = curve(&m, &eval);
        let lhat = c.argmin();
        (c.at(lc).unwrap(), lhat, tv_hits(&m, &per_task, lhat), lc)
    };
    let (ce_tdnv, ce_l, ce_hits, lc) = finetune(LossMode::CeOnly);
    let (con_tdnv, con_l, con_hits, _) = finetune(LossMode::CePlusContrastive);
    let diffs: Vec<f64> = con_hits
        .iter()
        .zip(&ce_hits)
        .map(|(&c, &e)| f64::from(u8::from(c)) - f64::from(u8::from(e)))
        .collect();
    let gain = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let (lo, hi) = bootstrap_mean_ci(&diffs, 2000, 0.95, SEED).unwrap();
    report(
        9,
        con_tdnv < ce_tdnv && gain > 0.0 && lo > 0.0,
        &format!(
            "TDNV at contrast layer {lc}: contrastive {con_tdnv:.4} vs CE {ce_tdnv:.4}; task-vector accuracy gain {gain:.3} (ℓ̂ {con_l} vs {ce_l}), 95% CI [{lo:.3}, {hi:.3}]"
        ),
    );
}

#[test]
fn criterion_10_probe_exactness() {
    let m = &trained().model;
    let insts = dataset(m, K, "acceptance-probe");
    let mut noop = true;
    for inst in insts.iter().step_by(25) {
        let clean = m.forward(&inst.tokens, true, None).unwrap();
        for layer in 1..=m.config().layers {
            for pos in [inst.sep_positions[0], inst.final_sep()] {
                let inj = Injection {
                    layer,
                    position: pos,
                    vector: clean.hidden[layer].row(pos).to_vec(),
                };
                let patched = m.forward(&inst.tokens, true, Some(&inj)).unwrap();
                let same = clean
                    .logits
                    .data()
                    .iter()
                    .zip(patched.logits.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
                noop &= same;
            }
        }
    }

    let exit = early_exit_curve(m, &insts).unwrap();
    let hits = insts
        .iter()
        .filter(|i| argmax(m.forward(&i.tokens, false, None).unwrap().last_logits()) == i.gold)
        .count();
    let exit_exact = *exit.last().unwrap() == hits as f64 / insts.len() as f64;

    let ids: Vec<usize> = tasks().iter().map(|t| t.id).collect();
    let grid = grid_tdnv(m, &insts, &ids, PairAggregation::Mean).unwrap();
    let col = grid.column(K + 1).unwrap();
    let c = curve(m, &insts);
    let grid_exact = col.layers().all(|layer| col.at(layer) == c.at(layer))
        && col.layers().end == c.layers().end;
    report(
        10,
        noop && exit_exact && grid_exact,
        &format!("no-op injection bitwise {noop}; early exit at L exact {exit_exact}; grid column K+1 exact {grid_exact}"),
    );
}

fn tiny(kind: &str, dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        kind: kind.into(),
        out_dir: Some(dir.display().to_string()),
        tasks: vec![
            "copy_letter".into(),
            "next_letter".into(),
            "to_upper".into(),
        ],
        n: 6,
        k: 4,
        k_grid: vec![0, 1, 2, 3, 4, 5, 6],
        perturbed: 1,
        extend_from: 2,
        extend_to: 4,
        sizes: vec![
            ModelSize {
                layers: 1,
                d_model: 8,
                n_heads: 2,
                d_ff: 16,
            },
            ModelSize {
                layers: 2,
                d_model: 16,
                n_heads: 2,
                d_ff: 32,
            },
        ],
        finetune_steps: 2,
        bootstrap_resamples: 50,
        dump_dtype: DType::F64,
        model: ModelConfig {
            layers: 2,
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            max_len: 40,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            steps: 3,
            batch_size: 6,
            k_train: 4,
            eval_every: 0,
            eval_instances: 2,
            eval_k: 4,
            ..TrainConfig::default()
        },
        theorem: TheoremConfig {
            k_grid: vec![0, 1, 2, 4, 8],
            m: 500,
            m_inf: Some(2000),
            ..TheoremConfig::default()
        },
        ..ExperimentConfig::default()
    };
    cfg.override_seed(SEED);
    cfg
}

#[test]
fn criterion_11_determinism_and_formats() {
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-determinism");
    let _ = std::fs::remove_dir_all(&root);
    let kinds = [
        "gen_data",
        "train",
        "tdnv",
        "grid_tdnv",
        "probes",
        "bias_variance",
        "noise_sweep",
        "position_sweep",
        "k_sweep",
        "size_sweep",
        "repeat_distinct",
        "theorem",
        "contrastive_compare",
        "trace",
        "ingest",
    ];
    let mut mismatched = Vec::new();
    let mut files = 0;
    for kind in kinds {
        let mut manifests: Vec<Manifest> = Vec::new();
        for run in ["a", "b"] {
            let dir = root.join(run).join(kind);
            let mut cfg = tiny(kind, &dir);
            if kind == "ingest" {
                let trace = root.join(run).join("trace");
                cfg.ingest = Some(IngestPaths {
                    container: trace.join("reps.iclt").display().to_string(),
                    layout: trace.join("reps_layout.csv").display().to_string(),
                });
            }
            manifests.push(
                run_experiment(cfg)
                    .unwrap_or_else(|e| panic!("{kind}: {e}"))
                    .manifest,
            );
        }
        for art in manifests[0]
            .artifacts
            .iter()
            .filter(|a| a.path.ends_with(".csv"))
        {
            files += 1;
            let a = std::fs::read(root.join("a").join(kind).join(&art.path)).unwrap();
            let b = std::fs::read(root.join("b").join(kind).join(&art.path)).unwrap();
            if a != b {
                mismatched.push(format!("{kind}/{}", art.path));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut specials = vec![
        0.0,
        -0.0,
        f64::MIN_POSITIVE,
        f64::MAX,
        f64::INFINITY,
        f64::NAN,
        1e-310,
    ];
    specials.extend((0..29).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
    let entries = vec![
        ("a".to_string(), Tensor::new(vec![6, 6], specials).unwrap()),
        ("b.c".to_string(), Tensor::vector(vec![1.5; 3])),
    ];
    let back = decode_tensors(&encode_tensors(&entries, DType::F64).unwrap()).unwrap();
    let bitwise = back.len() == entries.len()
        && back.iter().zip(&entries).all(|((n1, t1), (n2, t2))| {
            n1 == n2
                && t1.shape() == t2.shape()
                && t1
                    .data()
                    .iter()
                    .zip(t2.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        });
    report(
        11,
        mismatched.is_empty() && files > 0 && bitwise,
        &format!(
            "{} experiment kinds, {files} CSVs compared, mismatches {mismatched:?}; f64 container round trip bitwise {bitwise}",
            kinds.len()
        ),
    );
}
