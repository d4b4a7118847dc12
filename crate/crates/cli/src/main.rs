fn main() {
    std::process::exit(hamball_cli::run());
}
