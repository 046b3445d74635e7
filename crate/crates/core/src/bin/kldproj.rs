fn main() {
    std::process::exit(kldproj::cli::main_with_args(std::env::args_os()));
}
