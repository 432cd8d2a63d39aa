fn main() {
    std::process::exit(fedclust::cli::main_with_args(std::env::args_os()));
}
