fn main() {
    std::process::exit(fibcap::cli::run_from_args(std::env::args_os()));
}
