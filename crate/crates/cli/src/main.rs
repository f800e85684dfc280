fn main() {
    std::process::exit(makeup_cli::run(std::env::args_os()));
}
