fn main() {
    std::process::exit(vino_harness::cli::main_with(std::env::args()));
}
