#include <doctest.h>

TEST_SUITE("solver") {
}
