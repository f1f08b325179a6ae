fn main() {
    std::process::exit(wntk::cli::run(std::env::args_os()));
}
