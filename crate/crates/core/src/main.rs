fn main() {
    std::process::exit(ventbench::cli::parse_and_dispatch(std::env::args()));
}
