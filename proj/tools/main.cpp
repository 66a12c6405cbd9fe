#include "fodkit/cli.hpp"

int main(int argc, char** argv) { return fodkit::run_cli(argc, argv); }
