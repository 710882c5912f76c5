fn main() {
    std::process::exit(acoustic_splat::cli::run(std::env::args_os()));
}
