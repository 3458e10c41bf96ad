fn main() {
    std::process::exit(pdsim::cli::main_with_args(std::env::args_os()));
}
