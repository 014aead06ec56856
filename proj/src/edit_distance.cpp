#include "sinklab/edit_distance.hpp"

#include <algorithm>

#include "sinklab/check.hpp"

namespace sinklab {

int64_t edit_distance(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
    const size_t n = a.size(), m = b.size();
    std::vector<int64_t> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int64_t>(j);
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<int64_t>(i);
        for (size_t j = 1; j <= m; ++j) {
            const int64_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

double token_error_rate(const std::vector<int64_t>& hyp, const std::vector<int64_t>& ref) {
    SINKLAB_CHECK(!ref.empty(), "token_error_rate requires a non-empty reference");
    return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

}  // namespace sinklab
