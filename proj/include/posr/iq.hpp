#pragma once

#include <complex>
#include <vector>

namespace posr {

/// Complex baseband samples in working precision.
using IqSequence = std::vector<std::complex<double>>;

}  // namespace posr
