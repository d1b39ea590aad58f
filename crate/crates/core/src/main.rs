fn main() {
    std::process::exit(metamargin::harness::cli_main(std::env::args_os()));
}
