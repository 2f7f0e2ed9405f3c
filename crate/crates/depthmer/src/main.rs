fn main() {
    std::process::exit(depthmer::cli::run());
}
