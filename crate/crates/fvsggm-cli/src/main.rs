fn main() {
    std::process::exit(fvsggm_cli::run());
}
