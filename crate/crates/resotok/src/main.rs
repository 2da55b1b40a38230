fn main() {
    std::process::exit(resotok::cli::main_with(std::env::args_os()));
}
