#include "coaction/cli.hpp"

int main(int argc, char** argv) { return coaction::run_cli(argc, argv); }
