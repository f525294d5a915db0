fn main() {
    std::process::exit(talkit_cli::run(std::env::args_os()));
}
