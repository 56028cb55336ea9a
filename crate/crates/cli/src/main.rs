fn main() {
    std::process::exit(refcolor_cli::run(std::env::args_os()));
}
