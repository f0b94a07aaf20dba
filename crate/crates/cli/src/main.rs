fn main() {
    std::process::exit(chromattn_cli::run(std::env::args_os()));
}
