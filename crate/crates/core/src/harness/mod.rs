//! Metrics, optimizers, training and multi-seed sweeps.

mod metrics;
mod optim;
mod spec;
mod sweep;
mod train;

pub use metrics::{auroc, convergence_time, mape, mean_std, rmse, Direction, AUROC_CONVERGENCE, MAPE_CONVERGENCE};
pub use optim::{Optimizer, OptimizerKind};
pub use spec::{
    lr_at, LossKind, TrainSpec, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_LR, DEFAULT_LR_DECAY, DEFAULT_LR_DECAY_EVERY,
};
pub use sweep::{msa_grid_matrix, family_matrix, run_sweep, SweepReport, SweepRow, SweepSpec, CSV_HEADER, DEFAULT_SEEDS};
pub use train::{
    convergence_threshold, evaluate, metric_direction, train, Network, RunResult, Standardizer, WORK_CLOCK_MACS_PER_S,
};

/// Keeps freed heap memory mapped for reuse.
///
/// Training allocates and frees the same large activation buffers every
/// step; glibc's default returns them to the kernel and pays page faults on
/// each reuse. Other platforms are left alone.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator parameters.
    unsafe {
        libc::mallopt(libc::M_MMAP_MAX, 0);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}
