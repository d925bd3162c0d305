fn main() {
    std::process::exit(gcs_probe::cli::run_from_args(std::env::args_os()));
}
