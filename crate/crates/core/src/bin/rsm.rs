fn main() {
    std::process::exit(robust_sm::cli::main_with_args(std::env::args_os()));
}
