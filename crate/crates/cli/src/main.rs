fn main() {
    std::process::exit(sgfnn_cli::run(std::env::args_os()));
}
