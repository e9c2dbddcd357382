fn main() {
    std::process::exit(mvgarch::cli::main_with_args(std::env::args_os()));
}
