fn main() {
    std::process::exit(botwatch::cli::main_with_args(std::env::args_os()));
}
