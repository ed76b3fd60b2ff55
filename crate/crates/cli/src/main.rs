fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = coldpost_cli::thread_cap() {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not cap worker threads at {n}: {e}");
        }
    }
    std::process::exit(coldpost_cli::run_with_args(std::env::args_os()));
}
