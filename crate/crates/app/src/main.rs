fn main() {
    tune_allocator();
    std::process::exit(latentgrade_app::cli::run(std::env::args_os()));
}

/// Training allocates and frees multi-megabyte activation buffers every step.
/// glibc serves those with fresh mmaps and returns them to the OS on free,
/// which costs page faults on every step; keep them in the heap instead.
fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator tunables; called before any
    // other thread exists.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}
