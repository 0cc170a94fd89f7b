fn main() {
    std::process::exit(omnisync_cli::main_with_args(std::env::args_os()));
}
