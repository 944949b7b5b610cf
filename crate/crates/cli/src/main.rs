fn main() {
    std::process::exit(spad_cli::dispatch(std::env::args_os()));
}
