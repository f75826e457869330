fn main() {
    std::process::exit(relightkit_cli::run_cli(std::env::args_os()));
}
