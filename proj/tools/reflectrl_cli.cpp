// SPDX-License-Identifier: Apache-2.0
#include <reflectrl/cli.hpp>

int main(int argc, char ** argv) {
    return reflectrl::cli::run(argc, argv);
}
