#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>

#include "bitref/model/editor.hpp"

namespace bitref {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  EditorModel model;
  std::size_t epoch = 0;
  double dev_ppl = 0.0;
};

/// Layout: "BTXE", u32 version, u32 header length, JSON header, f32 LE tensors.
void save_checkpoint(const std::filesystem::path& path, const EditorModel& model,
                     std::size_t epoch, double dev_ppl);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws BadMagic, VersionMismatch or ManifestMismatch (truncation, bad header).
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace bitref
