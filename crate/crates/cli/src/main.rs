fn main() {
    std::process::exit(bbscert_cli::run(std::env::args_os()));
}
