fn main() {
    std::process::exit(lenslabel_cli::main_with_args(std::env::args_os()));
}
