fn main() {
    std::process::exit(hjreach_cli::run(std::env::args_os()));
}
