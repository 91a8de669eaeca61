fn main() {
    std::process::exit(eio_core::cli::main_with_args(std::env::args_os()));
}
