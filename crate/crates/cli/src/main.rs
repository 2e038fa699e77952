fn main() {
    let code = dcd_cli::run(std::env::args_os(), &mut std::io::stdout());
    std::process::exit(code);
}
