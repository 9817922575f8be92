fn main() {
    std::process::exit(catpark::cli::main_with_args(std::env::args_os()));
}
