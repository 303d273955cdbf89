fn main() {
    std::process::exit(covreg_cli::main_with_args(std::env::args_os().collect()));
}
