fn main() {
    std::process::exit(splinedp::cli::run_from_args(std::env::args_os()));
}
