#include "ulab/experiment.hpp"

int main(int argc, char** argv) { return ulab::run_cli(argc, argv); }
