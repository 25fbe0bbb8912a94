fn main() {
    std::process::exit(flcspec_cli::main_with_args(std::env::args_os()));
}
