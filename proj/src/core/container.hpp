#pragma once

#include <map>
#include <string>

#include "json.hpp"

#include "core/tensor.hpp"

namespace stainkit::container {

// Weight container: magic "MSGAN1", a little-endian uint64 header length,
// a JSON header, then each tensor as raw little-endian float32 in header
// directory order. The directory is sorted by name so identical state
// always produces identical bytes.

// Writes extra_header plus a generated "tensors" directory.
void write(const std::string& path, const nlohmann::json& extra_header,
           const std::map<std::string, const Tensor*>& tensors);

// Returns the parsed header and fills out_tensors with every entry.
nlohmann::json read(const std::string& path, std::map<std::string, Tensor>& out_tensors);

}  // namespace stainkit::container
