fn main() {
    std::process::exit(sharedctl_cli::dispatch(std::env::args_os()));
}
