#pragma once

#include <cstdint>
#include <string>

#include "ofalab/supernet.hpp"

namespace ofalab {

// Checkpoint container: magic "OFAS", u32 format version, length-prefixed
// ArchSpec JSON, then named tensors (u32 name_len, name, u32 rank, u32 dims,
// raw little-endian f32 data). Holds parameter values, momentum buffers
// ("<name>.m") and BN running statistics — everything needed to resume at an
// epoch boundary bit-exactly.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(Supernet& net, const std::string& path);
Supernet load_checkpoint(const std::string& path);

}  // namespace ofalab
