fn main() {
    std::process::exit(qac_core::cli::main_with_args(std::env::args_os()));
}
