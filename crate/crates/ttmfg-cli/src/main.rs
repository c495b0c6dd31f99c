fn main() {
    std::process::exit(ttmfg_cli::cli::main_with_args(std::env::args_os()));
}
