fn main() {
    std::process::exit(stancekit_cli::main_with_args(std::env::args_os()));
}
