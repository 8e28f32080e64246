fn main() {
    std::process::exit(rbpasta::cli::run(std::env::args_os()));
}
