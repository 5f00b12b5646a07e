fn main() {
    std::process::exit(corrmat::cli::main_with_args(std::env::args_os()));
}
