fn main() {
    std::process::exit(spatial_hurdle::cli::run());
}
