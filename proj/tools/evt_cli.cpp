#include <cstdio>

#include "evt/version.hpp"

int main() {
    std::printf("evt %s\n", evt::version_string);
    return 0;
}
