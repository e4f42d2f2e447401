fn main() {
    std::process::exit(connlab::cli::run(std::env::args_os()));
}
