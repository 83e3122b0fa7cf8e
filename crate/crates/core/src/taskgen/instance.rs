use std::ops::Range;

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

use super::tasks::TaskSpec;
use super::tokenizer::{ARROW, COMMA};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Demo {
    pub input: Vec<usize>,
    pub label: usize,
}

/// `x₁ → y₁ , x₂ → y₂ , … , x_q →` with its bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IclInstance {
    pub task: usize,
    pub demos: Vec<Demo>,
    pub query: Vec<usize>,
    pub gold: usize,
    pub tokens: Vec<usize>,
    /// Index of every `→`; the last one precedes the answer.
    pub sep_positions: Vec<usize>,
}

impl IclInstance {
    pub fn new(task: usize, demos: Vec<Demo>, query: Vec<usize>, gold: usize) -> Self {
        let mut tokens = Vec::new();
        let mut seps = Vec::with_capacity(demos.len() + 1);
        for d in &demos {
            tokens.extend_from_slice(&d.input);
            seps.push(tokens.len());
            tokens.push(ARROW);
            tokens.push(d.label);
            tokens.push(COMMA);
        }
        tokens.extend_from_slice(&query);
        seps.push(tokens.len());
        tokens.push(ARROW);
        Self {
            task,
            demos,
            query,
            gold,
            tokens,
            sep_positions: seps,
        }
    }

    pub fn k(&self) -> usize {
        self.demos.len()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn final_sep(&self) -> usize {
        *self
            .sep_positions
            .last()
            .expect("at least the query separator")
    }

    /// Positions of the demonstration tokens (query and final separator excluded).
    pub fn demo_positions(&self) -> Range<usize> {
        0..self.final_sep() - self.query.len()
    }

    /// The token each separator should predict; the last is the gold label.
    pub fn separator_targets(&self) -> Vec<usize> {
        self.demos
            .iter()
            .map(|d| d.label)
            .chain(std::iter::once(self.gold))
            .collect()
    }

    /// The same query with no demonstrations.
    pub fn zero_shot(&self) -> Self {
        Self::new(self.task, Vec::new(), self.query.clone(), self.gold)
    }

    /// Same demonstrations, different query.
    pub fn with_query(&self, query: Vec<usize>, gold: usize) -> Self {
        Self::new(self.task, self.demos.clone(), query, gold)
    }
}

fn check_capacity(inst: &IclInstance, max_len: usize) -> Result<()> {
    if inst.len() > max_len {
        return Err(Error::Invalid(format!(
            "instance with K={} needs {} tokens, context holds {max_len}",
            inst.k(),
            inst.len()
        )));
    }
    Ok(())
}

fn draw_demo(task: &TaskSpec, rng: &mut Rng) -> Result<Demo> {
    let input = task.sample_input(rng);
    let label = task.label(&input)?;
    Ok(Demo { input, label })
}

/// `k` i.i.d. demonstrations and a query from the same input distribution.
pub fn make_instance(
    task: &TaskSpec,
    k: usize,
    rng: &mut Rng,
    max_len: usize,
) -> Result<IclInstance> {
    let demos = (0..k)
        .map(|_| draw_demo(task, rng))
        .collect::<Result<Vec<_>>>()?;
    let query = task.sample_input(rng);
    let gold = task.label(&query)?;
    let inst = IclInstance::new(task.id, demos, query, gold);
    check_capacity(&inst, max_len)?;
    Ok(inst)
}

/// Like [`make_instance`] but with pairwise-distinct demonstration inputs.
pub fn make_distinct_instance(
    task: &TaskSpec,
    k: usize,
    rng: &mut Rng,
    max_len: usize,
) -> Result<IclInstance> {
    let query = task.sample_input(rng);
    let gold = task.label(&query)?;
    let empty = IclInstance::new(task.id, Vec::new(), query, gold);
    let inst = extend_instance(&empty, ExtendMode::Distinct, k, task, rng)?;
    check_capacity(&inst, max_len)?;
    Ok(inst)
}

/// `n` instances per task; instance `i` of a task draws from its own counter stream.
pub fn sample_dataset(
    tasks: &[TaskSpec],
    n: usize,
    k: usize,
    seed: u64,
    salt: &str,
    max_len: usize,
) -> Result<Vec<IclInstance>> {
    if n == 0 {
        return Err(Error::Invalid(
            "dataset needs at least one instance per task".into(),
        ));
    }
    let mut out = Vec::with_capacity(n * tasks.len());
    for task in tasks {
        for i in 0..n {
            let mut r = rng::stream(seed, rng::stream_id(&[salt, task.name()], i as u64));
            out.push(make_instance(task, k, &mut r, max_len)?);
        }
    }
    Ok(out)
}

/// Which demonstrations get a wrong label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// `⌊ratio·K⌋` demonstrations chosen uniformly.
    Ratio { ratio: f64 },
    /// Exactly these demonstration indices.
    Positions { positions: Vec<usize> },
}

fn wrong_label(task: &TaskSpec, correct: usize, rng: &mut Rng) -> Result<usize> {
    let pool: Vec<usize> = task
        .label_domain()
        .into_iter()
        .filter(|&l| l != correct)
        .collect();
    if pool.is_empty() {
        return Err(Error::Invalid(format!(
            "{}: no wrong label available",
            task.name()
        )));
    }
    Ok(pool[rng.gen_range(0..pool.len())])
}

/// Replaces selected demonstration labels with uniformly drawn wrong ones.
pub fn inject_noise(
    inst: &IclInstance,
    spec: &NoiseSpec,
    task: &TaskSpec,
    rng: &mut Rng,
) -> Result<IclInstance> {
    let k = inst.k();
    let picked: Vec<usize> = match spec {
        NoiseSpec::Ratio { ratio } => {
            if !(0.0..=1.0).contains(ratio) {
                return Err(Error::Invalid(format!(
                    "noise ratio {ratio} outside [0, 1]"
                )));
            }
            // small slack so products like 0.29·100 are not floored one short
            let count = ((ratio * k as f64) + 1e-9).floor() as usize;
            let mut idx = sample_indices(rng, k, count.min(k)).into_vec();
            idx.sort_unstable();
            idx
        }
        NoiseSpec::Positions { positions } => {
            if let Some(&bad) = positions.iter().find(|&&p| p >= k) {
                return Err(Error::Index {
                    what: "noise position",
                    index: bad,
                    limit: k,
                });
            }
            positions.clone()
        }
    };
    let mut demos = inst.demos.clone();
    for &i in &picked {
        let correct = task.label(&demos[i].input)?;
        demos[i].label = wrong_label(task, correct, rng)?;
    }
    Ok(IclInstance::new(
        inst.task,
        demos,
        inst.query.clone(),
        inst.gold,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtendMode {
    /// Append cyclic copies of the existing demonstrations.
    Repeat,
    /// Append fresh demonstrations whose inputs differ from all present ones.
    Distinct,
}

pub fn extend_instance(
    inst: &IclInstance,
    mode: ExtendMode,
    k_new: usize,
    task: &TaskSpec,
    rng: &mut Rng,
) -> Result<IclInstance> {
    let k = inst.k();
    if k_new < k {
        return Err(Error::Invalid(format!(
            "cannot extend K={k} down to {k_new}"
        )));
    }
    let mut demos = inst.demos.clone();
    match mode {
        ExtendMode::Repeat => {
            if k == 0 && k_new > 0 {
                return Err(Error::Invalid(
                    "repeat mode needs at least one demonstration".into(),
                ));
            }
            for i in k..k_new {
                demos.push(inst.demos[i % k].clone());
            }
        }
        ExtendMode::Distinct => {
            if task.input_domain_size() < k_new as u64 {
                return Err(Error::Invalid(format!(
                    "{}: input domain of {} cannot hold {k_new} distinct demonstrations",
                    task.name(),
                    task.input_domain_size()
                )));
            }
            let mut tries = 0usize;
            while demos.len() < k_new {
                let d = draw_demo(task, rng)?;
                if demos.iter().all(|e| e.input != d.input) {
                    demos.push(d);
                }
                tries += 1;
                if tries > 1000 * k_new.max(1) {
                    return Err(Error::Invalid(format!(
                        "{}: could not draw distinct inputs",
                        task.name()
                    )));
                }
            }
        }
    }
    Ok(IclInstance::new(
        inst.task,
        demos,
        inst.query.clone(),
        inst.gold,
    ))
}
