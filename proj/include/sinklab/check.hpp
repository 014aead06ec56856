#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace sinklab {

// Contract violations (bad shapes, invalid arguments) throw std::invalid_argument.
// Index violations throw std::out_of_range. I/O and runtime failures throw
// std::runtime_error. The CLI maps these to distinct exit codes.

#define SINKLAB_CHECK(cond, msg)                                     \
    do {                                                             \
        if (!(cond)) {                                               \
            std::ostringstream oss_;                                 \
            oss_ << msg;                                             \
            throw std::invalid_argument(oss_.str());                 \
        }                                                            \
    } while (0)

#define SINKLAB_CHECK_INDEX(cond, msg)                               \
    do {                                                             \
        if (!(cond)) {                                               \
            std::ostringstream oss_;                                 \
            oss_ << msg;                                             \
            throw std::out_of_range(oss_.str());                     \
        }                                                            \
    } while (0)

#define SINKLAB_CHECK_RUNTIME(cond, msg)                             \
    do {                                                             \
        if (!(cond)) {                                               \
            std::ostringstream oss_;                                 \
            oss_ << msg;                                             \
            throw std::runtime_error(oss_.str());                    \
        }                                                            \
    } while (0)

}  // namespace sinklab
