fn main() {
    std::process::exit(detcal_cli::run(std::env::args_os()));
}
