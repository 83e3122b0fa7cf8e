//! Synthetic in-context tasks, their tokenization, and context perturbations.

mod dump;
mod instance;
pub mod tables;
mod tasks;
mod tokenizer;

pub use dump::{read_dump, verify_labels, write_dump, DUMP_HEADER};
pub use instance::{
    extend_instance, inject_noise, make_distinct_instance, make_instance, sample_dataset, Demo,
    ExtendMode, IclInstance, NoiseSpec,
};
pub use tasks::{
    letter_tasks, list_tasks, task_samplers, Family, LetterTask, ListOp, ListTask, MappingTask,
    TaskSampler, TaskSpec, LETTER_TASKS, LIST_TASKS,
};
pub use tokenizer::{Tokenizer, ARROW, COMMA, LBRACKET, PAD, RBRACKET};
