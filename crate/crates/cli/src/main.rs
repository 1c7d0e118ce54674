fn main() {
    std::process::exit(khd_cli::run(std::env::args_os()));
}
