fn main() {
    std::process::exit(plda2x::cli::main());
}
