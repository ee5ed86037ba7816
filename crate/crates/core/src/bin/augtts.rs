fn main() {
    std::process::exit(augtts::cli::main());
}
