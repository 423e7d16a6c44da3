fn main() {
    std::process::exit(perlan::cli::run(std::env::args_os()));
}
