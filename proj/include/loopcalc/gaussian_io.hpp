#pragma once

#include <string>

#include "loopcalc/gaussian.hpp"

namespace loopcalc {

// Gaussian model document: {"J": [[...]], "h": [...]}; h defaults to zeros.
GaussianModel gaussian_from_json_text(const std::string& text);
GaussianModel load_gaussian(const std::string& path);

}  // namespace loopcalc
