fn main() {
    std::process::exit(successor_kit::cli::run(std::env::args_os()));
}
