use std::sync::{Arc, OnceLock};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::rng::Rng;

use super::tables::{self, MappingTable};
use super::tokenizer::{Tokenizer, COMMA, LBRACKET, RBRACKET};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    LetterToLetter,
    ListToElement,
    MappingTable,
}

/// A task distribution: how inputs are drawn and how they are labeled.
pub trait TaskSampler: Send + Sync {
    fn name(&self) -> &str;
    fn family(&self) -> Family;
    fn sample_input(&self, rng: &mut Rng) -> Vec<usize>;
    /// The task-correct label of an input.
    fn label(&self, input: &[usize]) -> Result<usize>;
    fn label_domain(&self) -> Vec<usize>;
    /// Number of distinct inputs (saturating).
    fn input_domain_size(&self) -> u64;
}

/// Letter-to-letter map: shift within the alphabet (wrapping), optionally uppercased.
pub struct LetterTask {
    pub name: &'static str,
    pub shift: i64,
    pub upper: bool,
}

impl TaskSampler for LetterTask {
    fn name(&self) -> &str {
        self.name
    }
    fn family(&self) -> Family {
        Family::LetterToLetter
    }
    fn sample_input(&self, rng: &mut Rng) -> Vec<usize> {
        vec![Tokenizer::lower(rng.gen_range(0..26))]
    }
    fn label(&self, input: &[usize]) -> Result<usize> {
        let idx = match input {
            [id] => Tokenizer::lower_index(*id),
            _ => None,
        }
        .ok_or_else(|| {
            Error::Invalid(format!("{}: input must be one lowercase letter", self.name))
        })?;
        let shifted = (idx as i64 + self.shift).rem_euclid(26) as usize;
        Ok(if self.upper {
            Tokenizer::upper(shifted)
        } else {
            Tokenizer::lower(shifted)
        })
    }
    fn label_domain(&self) -> Vec<usize> {
        if self.upper {
            Tokenizer::uppercase_ids()
        } else {
            Tokenizer::lowercase_ids()
        }
    }
    fn input_domain_size(&self) -> u64 {
        26
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ListOp {
    First,
    Last,
    Length,
    FirstUpper,
    LastUpper,
}

/// List-to-element task over bracketed lowercase letter lists.
pub struct ListTask {
    pub name: &'static str,
    pub op: ListOp,
    pub min_len: usize,
    pub max_len: usize,
}

impl ListTask {
    fn elements(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = || Error::Invalid(format!("{}: malformed list input", self.name));
        let inner = match input {
            [LBRACKET, inner @ .., RBRACKET] => inner,
            _ => return Err(bad()),
        };
        let mut items = Vec::new();
        for (i, &t) in inner.iter().enumerate() {
            if i % 2 == 1 {
                if t != COMMA {
                    return Err(bad());
                }
            } else {
                items.push(Tokenizer::lower_index(t).ok_or_else(bad)?);
            }
        }
        if items.is_empty() || inner.len() % 2 == 0 {
            return Err(bad());
        }
        Ok(items)
    }
}

impl TaskSampler for ListTask {
    fn name(&self) -> &str {
        self.name
    }
    fn family(&self) -> Family {
        Family::ListToElement
    }
    fn sample_input(&self, rng: &mut Rng) -> Vec<usize> {
        let n = rng.gen_range(self.min_len..=self.max_len);
        let mut out = vec![LBRACKET];
        for i in 0..n {
            if i > 0 {
                out.push(COMMA);
            }
            out.push(Tokenizer::lower(rng.gen_range(0..26)));
        }
        out.push(RBRACKET);
        out
    }
    fn label(&self, input: &[usize]) -> Result<usize> {
        let items = self.elements(input)?;
        let (first, last) = (items[0], items[items.len() - 1]);
        Ok(match self.op {
            ListOp::First => Tokenizer::lower(first),
            ListOp::Last => Tokenizer::lower(last),
            ListOp::FirstUpper => Tokenizer::upper(first),
            ListOp::LastUpper => Tokenizer::upper(last),
            ListOp::Length => {
                if items.len() > 9 {
                    return Err(Error::Invalid(format!("{}: length above 9", self.name)));
                }
                Tokenizer::digit(items.len())
            }
        })
    }
    fn label_domain(&self) -> Vec<usize> {
        match self.op {
            ListOp::First | ListOp::Last => Tokenizer::lowercase_ids(),
            ListOp::FirstUpper | ListOp::LastUpper => Tokenizer::uppercase_ids(),
            ListOp::Length => (self.min_len..=self.max_len.min(9))
                .map(Tokenizer::digit)
                .collect(),
        }
    }
    fn input_domain_size(&self) -> u64 {
        (self.min_len..=self.max_len).fold(0u64, |acc, n| {
            acc.saturating_add(26u64.saturating_pow(n as u32))
        })
    }
}

/// Word lookup from a built-in table.
pub struct MappingTask {
    pub table: &'static MappingTable,
}

impl TaskSampler for MappingTask {
    fn name(&self) -> &str {
        self.table.name
    }
    fn family(&self) -> Family {
        Family::MappingTable
    }
    fn sample_input(&self, rng: &mut Rng) -> Vec<usize> {
        let (w, _) = self.table.pairs[rng.gen_range(0..self.table.pairs.len())];
        vec![Tokenizer::standard()
            .id(w)
            .expect("table words are in the vocabulary")]
    }
    fn label(&self, input: &[usize]) -> Result<usize> {
        let tok = Tokenizer::standard();
        let word = match input {
            [id] => tok.token(*id)?,
            _ => {
                return Err(Error::Invalid(format!(
                    "{}: input must be one word",
                    self.table.name
                )))
            }
        };
        let (_, out) = self
            .table
            .pairs
            .iter()
            .find(|(a, _)| *a == word)
            .ok_or_else(|| Error::Invalid(format!("{}: `{word}` not in table", self.table.name)))?;
        tok.id(out)
    }
    fn label_domain(&self) -> Vec<usize> {
        let tok = Tokenizer::standard();
        let mut ids: Vec<usize> = self
            .table
            .pairs
            .iter()
            .map(|(_, b)| tok.id(b).expect("in vocab"))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
    fn input_domain_size(&self) -> u64 {
        self.table.pairs.len() as u64
    }
}

type Factory = dyn Fn() -> Arc<dyn TaskSampler> + Send + Sync;

/// Task constructors by name.
pub fn task_samplers() -> &'static Registry<Factory> {
    static REG: OnceLock<Registry<Factory>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut reg: Registry<Factory> = Registry::new("task");
        let letters: [(&'static str, i64, bool); 5] = [
            ("copy_letter", 0, false),
            ("next_letter", 1, false),
            ("to_upper", 0, true),
            ("prev_letter", -1, false),
            ("next2_letter", 2, false),
        ];
        for (name, shift, upper) in letters {
            reg.register(
                name,
                Box::new(move || Arc::new(LetterTask { name, shift, upper })),
            );
        }
        let lists = [
            ("list_first", ListOp::First),
            ("list_last", ListOp::Last),
            ("list_length", ListOp::Length),
            ("list_first_upper", ListOp::FirstUpper),
            ("list_last_upper", ListOp::LastUpper),
        ];
        for (name, op) in lists {
            reg.register(
                name,
                Box::new(move || {
                    Arc::new(ListTask {
                        name,
                        op,
                        min_len: 2,
                        max_len: 5,
                    })
                }),
            );
        }
        for table in tables::ALL_TABLES {
            reg.register(
                table.name,
                Box::new(move || Arc::new(MappingTask { table })),
            );
        }
        reg
    })
}

/// A task with its experiment-local id.
#[derive(Clone)]
pub struct TaskSpec {
    pub id: usize,
    pub sampler: Arc<dyn TaskSampler>,
}

impl std::fmt::Debug for TaskSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TaskSpec")
            .field("id", &self.id)
            .field("name", &self.name())
            .finish()
    }
}

impl TaskSpec {
    pub fn new(id: usize, sampler: Arc<dyn TaskSampler>) -> Self {
        Self { id, sampler }
    }

    pub fn by_name(id: usize, name: &str) -> Result<Self> {
        Ok(Self::new(id, task_samplers().get(name)?()))
    }

    /// Tasks numbered `0..` in the given order; duplicate names are rejected.
    pub fn list(names: &[impl AsRef<str>]) -> Result<Vec<Self>> {
        let mut out: Vec<Self> = Vec::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if out.iter().any(|t| t.name() == n.as_ref()) {
                return Err(Error::Config(format!("task `{}` listed twice", n.as_ref())));
            }
            out.push(Self::by_name(i, n.as_ref())?);
        }
        Ok(out)
    }

    pub fn name(&self) -> &str {
        self.sampler.name()
    }

    pub fn family(&self) -> Family {
        self.sampler.family()
    }

    pub fn sample_input(&self, rng: &mut Rng) -> Vec<usize> {
        self.sampler.sample_input(rng)
    }

    pub fn label(&self, input: &[usize]) -> Result<usize> {
        self.sampler.label(input)
    }

    pub fn label_domain(&self) -> Vec<usize> {
        self.sampler.label_domain()
    }

    pub fn input_domain_size(&self) -> u64 {
        self.sampler.input_domain_size()
    }
}

pub const LETTER_TASKS: [&str; 5] = [
    "copy_letter",
    "next_letter",
    "to_upper",
    "prev_letter",
    "next2_letter",
];
pub const LIST_TASKS: [&str; 5] = [
    "list_first",
    "list_last",
    "list_length",
    "list_first_upper",
    "list_last_upper",
];

pub fn letter_tasks() -> Vec<TaskSpec> {
    TaskSpec::list(&LETTER_TASKS).expect("built-in tasks")
}

pub fn list_tasks() -> Vec<TaskSpec> {
    TaskSpec::list(&LIST_TASKS).expect("built-in tasks")
}
