fn main() {
    std::process::exit(flexenv::cli::run(std::env::args_os()));
}
