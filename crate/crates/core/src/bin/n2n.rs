fn main() {
    std::process::exit(noise2norm::cli::run(std::env::args()));
}
