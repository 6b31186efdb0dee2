fn main() {
    std::process::exit(signfuse::cli::main_with_args(std::env::args_os()));
}
