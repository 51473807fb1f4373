#pragma once

#include <string>
#include <utility>
#include <vector>

#include "neurodyn/denoise.hpp"
#include "neurodyn/multitask.hpp"
#include "neurodyn/plrnn.hpp"
#include "neurodyn/recording.hpp"
#include "neurodyn/tensor.hpp"

namespace neurodyn {

// Whole-file read; IoError with the path on failure.
std::string read_file_bytes(const std::string& path);

// Writes to a temp file beside the target then renames, so a crash never
// leaves a truncated file at the final path.
void atomic_write_bytes(const std::string& path, const std::string& bytes);

// Binary recording container: magic "NDTS", u32 version = 1, u32 channels,
// u64 samples, f64 sample rate, length-prefixed (u16) UTF-8 channel names,
// then channels x samples f64 values channel-major.  All integers and floats
// little-endian.  Round-trips bit-exactly.
void write_recording(const std::string& path, const Recording& rec);
Recording read_recording(const std::string& path);

// CSV: header row = channel names, one row per sample.  CSV carries no rate,
// so reading takes it as an argument.
void write_csv(const std::string& path, const Recording& rec);
Recording read_csv(const std::string& path, double sample_rate_hz);

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Named-tensor container: magic "NDCK", u32 version = 1, u32 tensor count,
// per tensor u16 name length + name, u8 rank, rank x u64 dims, f64 data.
// meta_json lands in a sidecar at `<path>.meta.json`.
void write_checkpoint(const std::string& path, const NamedTensors& tensors,
                      const std::string& meta_json);
NamedTensors read_checkpoint(const std::string& path);
std::string read_checkpoint_meta(const std::string& path);

// Model checkpoints; the sidecar carries the structural fields so loading is
// self-contained.
void save_plrnn(const std::string& path, const PlrnnParams& params);
PlrnnParams load_plrnn(const std::string& path);

void save_dae(const std::string& path, const DaeParams& params);
DaeParams load_dae(const std::string& path);

void save_mtl(const std::string& path, const MtlParams& params);
MtlParams load_mtl(const std::string& path);

}  // namespace neurodyn
