fn main() {
    std::process::exit(spanattn::cli::main());
}
