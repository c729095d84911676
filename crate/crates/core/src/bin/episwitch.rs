fn main() {
    std::process::exit(episwitch::cli::run(std::env::args_os()));
}
