fn main() {
    std::process::exit(liversim::cli::main_with_args(std::env::args_os()));
}
