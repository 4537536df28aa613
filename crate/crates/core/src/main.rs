fn main() {
    std::process::exit(odvae::cli::run());
}
