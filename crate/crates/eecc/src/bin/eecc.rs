fn main() {
    std::process::exit(eecc::cli::main());
}
