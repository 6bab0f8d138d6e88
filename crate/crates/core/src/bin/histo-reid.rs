fn main() {
    std::process::exit(histo_reid::cli::main());
}
