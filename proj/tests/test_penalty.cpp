#include <doctest.h>

TEST_SUITE("penalty") {
}
