#include "bhnd/cli.h"

int main(int argc, char** argv) { return bhnd::cli_dispatch(argc, argv); }
