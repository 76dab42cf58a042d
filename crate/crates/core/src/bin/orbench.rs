fn main() {
    std::process::exit(orbench::cli::main_with_args(std::env::args_os()));
}
