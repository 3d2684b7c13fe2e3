fn main() {
    std::process::exit(aclip_cli::run(std::env::args_os()));
}
