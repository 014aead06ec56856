#pragma once

#include <cstdint>
#include <vector>

namespace sinklab {

// Levenshtein distance with unit substitution/insertion/deletion costs.
int64_t edit_distance(const std::vector<int64_t>& a, const std::vector<int64_t>& b);

// edit_distance(hyp, ref) / |ref|; the toy stand-in for WER. Empty reference
// is a contract error.
double token_error_rate(const std::vector<int64_t>& hyp, const std::vector<int64_t>& ref);

}  // namespace sinklab
