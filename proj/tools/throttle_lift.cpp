#include "throttle_lift/cli.hpp"

int main(int argc, char** argv) { return throttle_lift::cli::dispatch(argc, argv); }
