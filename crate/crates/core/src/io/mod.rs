//! Files on disk: tensor container, checkpoints, CSV tables, SVG plots, run manifests.

mod checkpoint;
mod container;
mod ingest;
mod manifest;
mod plot;
mod table;

pub use checkpoint::{load_checkpoint, save_checkpoint, sidecar_path};
pub use container::{
    decode_tensors, encode_tensors, load_tensors, save_tensors, DType, MAGIC, VERSION,
};
pub use ingest::{dump_representations, ingest_external_reps, LAYOUT_COLUMNS};
pub use manifest::{sha256_file, Artifact, Manifest, RunLock, LOCK_FILE, MANIFEST_FILE};
pub use plot::{plot_curves, plot_tables, Mark, PlotStyle};
pub use table::{fmt_f64, fmt_opt, schema_for, Table, SCHEMAS};

/// Environment variable naming the root directory for run outputs.
pub const OUT_ENV: &str = "ICL_LENS_OUT";

/// `$ICL_LENS_OUT/<name>`, or `runs/<name>` when the variable is unset.
pub fn output_dir(name: &str) -> std::path::PathBuf {
    let root = std::env::var_os(OUT_ENV).map_or_else(
        || std::path::PathBuf::from("runs"),
        std::path::PathBuf::from,
    );
    root.join(name)
}
