#pragma once

#include <string>

#include "divtrain/model.hpp"

namespace divtrain::nn {

// Binary ensemble container: magic "DIVT", u16 version, u64 manifest length,
// JSON manifest (member specs, tensor shapes, byte offsets), then
// little-endian f64 blobs. save/load round-trips bit-exactly.
void save_checkpoint(const Ensemble& ens, const std::string& path);
Ensemble load_checkpoint(const std::string& path);

// Hex SHA-like digest of the serialized ensemble (FNV-1a over the bytes);
// used by tests to detect parameter mutation.
std::string checkpoint_digest(const Ensemble& ens);

}  // namespace divtrain::nn
