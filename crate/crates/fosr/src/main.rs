fn main() {
    std::process::exit(fosr::cli::run_from_args());
}
