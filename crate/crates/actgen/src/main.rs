fn main() {
    std::process::exit(actgen::cli::run());
}
