fn main() {
    std::process::exit(sevnet_cli::main_with(std::env::args_os()));
}
