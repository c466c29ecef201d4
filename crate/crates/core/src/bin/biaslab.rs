fn main() {
    std::process::exit(biaslab::cli::main_with_args(std::env::args_os()));
}
