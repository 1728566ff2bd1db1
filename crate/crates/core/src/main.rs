fn main() {
    std::process::exit(psgrisk::cli::main_with_args(std::env::args_os()));
}
