#pragma once

#include <string>

namespace wmb::harness {

/// Shortest decimal form that round-trips; identical across runs and platforms.
std::string fmt_double(double v);

}  // namespace wmb::harness
