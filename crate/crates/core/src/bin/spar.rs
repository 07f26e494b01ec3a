fn main() {
    std::process::exit(spar::cli::run(std::env::args_os()));
}
