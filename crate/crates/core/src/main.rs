fn main() {
    std::process::exit(stackface::cli::run(std::env::args_os()));
}
