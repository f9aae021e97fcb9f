#pragma once

#include <vector>

#include "types.hpp"

namespace gafsim
{

/// A rho_L-separated, rho_L-covering point set Lambda_L.
struct SamplingSequence
{
    std::vector<Complex> points;
    std::vector<double> rho;  // rho_L at each point
    double separation_delta = 0;
    double covering_R = 0;
    double L = 1;
    Rect region;  // where covering is guaranteed
    Rect window;  // padded generation window
};

}  // namespace gafsim
