fn main() {
    std::process::exit(memqa::cli::main_with_args(std::env::args_os()));
}
