#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

namespace drugrec::oracle {

// Longest common subsequence by trying every subsequence of `a`.
inline std::size_t brute_lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::size_t best = 0;
    for (std::uint32_t mask = 0; mask < (1u << a.size()); ++mask) {
        std::size_t j = 0;
        std::size_t len = 0;
        bool ok = true;
        for (std::size_t i = 0; i < a.size() && ok; ++i) {
            if ((mask >> i & 1u) == 0) {
                continue;
            }
            while (j < b.size() && b[j] != a[i]) {
                ++j;
            }
            if (j == b.size()) {
                ok = false;
            } else {
                ++j;
                ++len;
            }
        }
        if (ok) {
            best = std::max(best, len);
        }
    }
    return best;
}

} // namespace drugrec::oracle
