//! Allocator tuning for long training runs.

/// Keeps freed buffers in the process heap instead of unmapping them.
///
/// A training step allocates and frees the same few gigabytes of activations
/// every time; with glibc's defaults each large buffer is a fresh mapping and
/// costs about a second of page faults per step at default widths. No-op on
/// other allocators.
pub fn retain_freed_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    unsafe {
        libc::mallopt(libc::M_MMAP_MAX, 0);
        libc::mallopt(libc::M_TRIM_THRESHOLD, -1);
    }
}
