#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fallnet/models.hpp"
#include "fallnet/tensor.hpp"

namespace fallnet {

// Self-describing binary weights container. Layout (all integers and floats
// little-endian):
//
//   8 bytes  magic "FNETWTS1"
//   u32      format version (1)
//   u32      model kind tag
//   u64      seed the weights were produced under
//   u32      meta length, then that many bytes of UTF-8 JSON metadata
//   u64      config hash = FNV-1a 64 of the meta bytes
//   u32      tensor count
//   per tensor:
//     u32      name length, then name bytes
//     u32      rank, then rank u64 dims
//     f64[n]   data in row-major order
//   u64      FNV-1a 64 checksum of every preceding byte
//
// Tensor data is always stored as f64 regardless of the in-memory real type.

struct WeightsFile {
    uint32_t version = 1;
    uint32_t kind = 0;
    uint64_t seed = 0;
    std::string meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor* find(const std::string& name) const;
};

uint64_t fnv1a64_bytes(const void* data, size_t n);

void write_weights_file(const std::filesystem::path& path, const WeightsFile& wf);

// Verifies magic, version, and trailer checksum; throws std::runtime_error
// with the failing aspect on any mismatch or truncation.
WeightsFile read_weights_file(const std::filesystem::path& path);

// Model parameters (plus any extra named tensors) -> container.
WeightsFile snapshot_weights(Model& model, uint64_t seed, std::string meta,
                             const std::vector<std::pair<std::string, Tensor>>& extras = {});

// Copies file tensors into the model's parameters, matching by name; every
// parameter must be present with an identical shape. File tensors that are
// not parameters are rejected unless they carry the "standardize." prefix.
void restore_weights(Model& model, const WeightsFile& wf);

} // namespace fallnet
