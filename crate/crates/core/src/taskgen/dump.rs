//! Tab-separated dataset dump: `task  k  tokens  seps  gold`, ids space-separated.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

use super::instance::{Demo, IclInstance};
use super::tasks::TaskSpec;

pub const DUMP_HEADER: &str = "task\tk\ttokens\tseps\tgold";

fn join(ids: &[usize]) -> String {
    ids.iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_dump<W: Write>(mut w: W, instances: &[IclInstance]) -> std::io::Result<()> {
    writeln!(w, "{DUMP_HEADER}")?;
    for inst in instances {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            inst.task,
            inst.k(),
            join(&inst.tokens),
            join(&inst.sep_positions),
            inst.gold
        )?;
    }
    Ok(())
}

fn parse_ids(field: &str, line: usize) -> Result<Vec<usize>> {
    field
        .split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Invalid(format!("dump line {line}: bad id `{t}`")))
        })
        .collect()
}

/// Rebuilds instances from a dump; the token stream must be consistent with the separators.
pub fn read_dump<R: BufRead>(r: R) -> Result<Vec<IclInstance>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<dump>", e))?;
        if n == 0 {
            if line != DUMP_HEADER {
                return Err(Error::Invalid(format!("dump header mismatch: `{line}`")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(Error::Invalid(format!(
                "dump line {}: expected 5 fields",
                n + 1
            )));
        }
        let bad = |what: &str| Error::Invalid(format!("dump line {}: bad {what}", n + 1));
        let task: usize = f[0].parse().map_err(|_| bad("task"))?;
        let k: usize = f[1].parse().map_err(|_| bad("k"))?;
        let tokens = parse_ids(f[2], n + 1)?;
        let seps = parse_ids(f[3], n + 1)?;
        let gold: usize = f[4].parse().map_err(|_| bad("gold"))?;
        if seps.len() != k + 1 {
            return Err(bad("separator count"));
        }
        let mut demos = Vec::with_capacity(k);
        let mut start = 0;
        for &s in &seps[..k] {
            if s + 2 >= tokens.len() || s < start {
                return Err(bad("separator position"));
            }
            demos.push(Demo {
                input: tokens[start..s].to_vec(),
                label: tokens[s + 1],
            });
            start = s + 3;
        }
        let last = seps[k];
        if last < start || last + 1 != tokens.len() {
            return Err(bad("final separator"));
        }
        let inst = IclInstance::new(task, demos, tokens[start..last].to_vec(), gold);
        if inst.tokens != tokens {
            return Err(bad("token stream"));
        }
        out.push(inst);
    }
    Ok(out)
}

/// Checks every dumped label against the named tasks (noise-free dumps only).
pub fn verify_labels(instances: &[IclInstance], tasks: &[TaskSpec]) -> Result<()> {
    for inst in instances {
        let task = tasks
            .iter()
            .find(|t| t.id == inst.task)
            .ok_or_else(|| Error::Invalid(format!("unknown task id {}", inst.task)))?;
        if task.label(&inst.query)? != inst.gold {
            return Err(Error::Invalid(format!(
                "gold label mismatch for task {}",
                task.name()
            )));
        }
        for (i, d) in inst.demos.iter().enumerate() {
            if task.label(&d.input)? != d.label {
                return Err(Error::Invalid(format!(
                    "demonstration {i} mislabeled for task {}",
                    task.name()
                )));
            }
        }
    }
    Ok(())
}
