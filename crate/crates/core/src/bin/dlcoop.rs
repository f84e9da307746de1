fn main() {
    std::process::exit(dlcoop::cli::main_with_args(std::env::args_os()));
}
