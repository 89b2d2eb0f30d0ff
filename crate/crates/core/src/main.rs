fn main() {
    std::process::exit(carleman_core::cli::main_with_args(std::env::args_os()));
}
