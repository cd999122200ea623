fn main() {
    std::process::exit(mpslam::harness::cli::run());
}
