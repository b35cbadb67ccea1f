fn main() {
    std::process::exit(swinir::cli::main());
}
