//! Interventions on a trained model: task-vector patching, early exit, saliency.

mod saliency;
mod task_vector;

pub use saliency::saliency_map;
pub use task_vector::{
    choose_dummy_query, early_exit_accuracy, early_exit_curve, extract_task_vector,
    extract_task_vectors, mean_task_vector, probe_instances, run_probes, task_vector_accuracy,
    task_vector_hits, zero_shot_accuracy, ProbeConfig, ProbeReport, TaskVector, VectorSource,
};
