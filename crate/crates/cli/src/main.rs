fn main() {
    std::process::exit(psofed_cli::run_cli(std::env::args_os()));
}
