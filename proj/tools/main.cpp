#include "gmmloc/cli.h"

int main(int argc, char** argv) { return gmmloc::dispatch(argc, argv); }
