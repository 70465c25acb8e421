fn main() {
    std::process::exit(ragforge::cli::run(std::env::args_os()));
}
