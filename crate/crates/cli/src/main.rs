fn main() {
    std::process::exit(codesplat::run(std::env::args_os()));
}
