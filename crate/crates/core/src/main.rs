fn main() {
    std::process::exit(splitkit::cli::main_with_args(std::env::args_os()));
}
