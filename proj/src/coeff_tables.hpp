#pragma once

#include <vector>

#include "limm/coeffs.hpp"

namespace limm::detail {

/// Exact coefficients as "num/den" strings, indexed -1..k-1 with an offset of one.
struct RationalTable {
    int k;
    std::vector<const char*> alpha;
    std::vector<const char*> beta;
    std::vector<const char*> mu;
};

const RationalTable& rational_table(Family family, int k);

long double parse_rational(const char* text);

}  // namespace limm::detail
