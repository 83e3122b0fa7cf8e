use std::collections::BTreeMap;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::RepresentationSet;

use super::container::{load_tensors, save_tensors, DType};
use super::table::Table;

pub const LAYOUT_COLUMNS: &[&str] = &["name", "task", "instance", "layer"];

/// Writes a representation set as a tensor container plus a layout CSV
/// mapping each tensor name to `(task, instance, layer)`.
pub fn dump_representations(
    set: &RepresentationSet,
    container: &Path,
    layout: &Path,
    dtype: DType,
) -> Result<()> {
    let mut entries = Vec::new();
    let mut table = Table::new(LAYOUT_COLUMNS);
    for t in 0..set.tasks() {
        for i in 0..set.instances() {
            for l in 0..set.layers() {
                let name = format!("t{t}.i{i}.l{l}");
                entries.push((name.clone(), Tensor::vector(set.get(t, i, l).to_vec())));
                table.push(vec![
                    name,
                    set.task_names[t].clone(),
                    i.to_string(),
                    l.to_string(),
                ])?;
            }
        }
    }
    save_tensors(container, &entries, dtype)?;
    table.write(layout)
}

/// Builds a representation set from an external dump. Every
/// `(task, instance, layer)` cell must be present; gaps are listed in the error.
pub fn ingest_external_reps(container: &Path, layout: &Path) -> Result<RepresentationSet> {
    let tensors: BTreeMap<String, Tensor> = load_tensors(container)?.into_iter().collect();
    let table = Table::read(layout)?;
    let names = table.column("name")?;
    let tasks = table.column("task")?;
    let insts = table.column_f64("instance")?;
    let layers = table.column_f64("layer")?;

    let mut task_order: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, usize, usize), Vec<f64>> = BTreeMap::new();
    let mut dim = None;
    for r in 0..table.rows.len() {
        let as_index = |v: f64, what: &str| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Invalid(format!(
                    "layout row {}: bad {what} `{v}`",
                    r + 1
                )))
            }
        };
        let t = match task_order.iter().position(|x| x == tasks[r]) {
            Some(t) => t,
            None => {
                task_order.push(tasks[r].to_string());
                task_order.len() - 1
            }
        };
        let tensor = tensors.get(names[r]).ok_or_else(|| {
            Error::Invalid(format!(
                "layout names tensor `{}` absent from the container",
                names[r]
            ))
        })?;
        let d = tensor.numel();
        if *dim.get_or_insert(d) != d {
            return Err(Error::shape(
                "ingested representation",
                &[dim.unwrap_or(0)],
                &[d],
            ));
        }
        let key = (
            t,
            as_index(insts[r], "instance")?,
            as_index(layers[r], "layer")?,
        );
        if cells.insert(key, tensor.data().to_vec()).is_some() {
            return Err(Error::Invalid(format!(
                "layout row {} repeats a cell",
                r + 1
            )));
        }
    }
    if cells.is_empty() {
        return Err(Error::Invalid("layout is empty".into()));
    }
    let n = cells.keys().map(|k| k.1).max().unwrap_or(0) + 1;
    let l = cells.keys().map(|k| k.2).max().unwrap_or(0) + 1;
    let mut gaps = Vec::new();
    let mut reps = vec![vec![vec![Vec::new(); l]; n]; task_order.len()];
    for (t, task) in reps.iter_mut().enumerate() {
        for (i, inst) in task.iter_mut().enumerate() {
            for (layer, slot) in inst.iter_mut().enumerate() {
                match cells.remove(&(t, i, layer)) {
                    Some(v) => *slot = v,
                    None => gaps.push(format!("({}, {i}, {layer})", task_order[t])),
                }
            }
        }
    }
    if !gaps.is_empty() {
        let shown: Vec<&str> = gaps.iter().take(20).map(String::as_str).collect();
        let more = if gaps.len() > 20 {
            format!(" … and {} more", gaps.len() - 20)
        } else {
            String::new()
        };
        return Err(Error::Coverage(format!(
            "{} missing (task, instance, layer) cells: {}{more}",
            gaps.len(),
            shown.join(", ")
        )));
    }
    let tag = container
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("external");
    RepresentationSet::new("external", 0, tag, task_order, reps)
}
