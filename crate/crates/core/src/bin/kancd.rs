fn main() {
    std::process::exit(kancd::cli::run(std::env::args_os()));
}
