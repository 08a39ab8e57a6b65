fn main() {
    let code = dpbayes::cli::run_cli(std::env::args_os());
    std::process::exit(code);
}
