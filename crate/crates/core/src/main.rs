fn main() {
    std::process::exit(phmm::cli::run(std::env::args_os()));
}
