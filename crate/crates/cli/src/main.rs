fn main() {
    std::process::exit(himfuse_cli::cli_main(std::env::args().collect()));
}
