#include "dialdesc/cli.hpp"

int main(int argc, char** argv) {
    return dialdesc::run(std::vector<std::string>(argv + 1, argv + argc));
}
