#pragma once

#include <string>

#include "hm/tensor.hpp"

namespace hm {

// Decodes an 8-bit PNG into 3 x H x W floats in [0,1]. Grayscale is promoted
// to three identical channels; alpha is dropped. 16-bit, palette and
// interlaced files are rejected as unsupported.
Tensor<float> read_image(const std::string& path);

// Encodes a 3 x H x W tensor in [0,1] as an 8-bit RGB PNG, rounding half away
// from zero.
void write_image(const Tensor<float>& image, const std::string& path);

}  // namespace hm
