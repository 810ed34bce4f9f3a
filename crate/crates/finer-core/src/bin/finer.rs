fn main() {
    std::process::exit(finer_core::cli::main());
}
