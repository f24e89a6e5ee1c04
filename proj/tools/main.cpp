#include "cli_app.hpp"

int main(int argc, char** argv) { return dysedit_cli::cli_main(argc, argv); }
