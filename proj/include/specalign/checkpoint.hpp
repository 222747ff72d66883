#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "specalign/model.hpp"

namespace specalign {

// MSA1 container: "MSA1", u32 LE header length, JSON header (config and
// tensor shapes), then every parameter as binary32 LE in tensor_views order.
std::vector<std::uint8_t> encode_checkpoint(const AlignmentModel& model);
AlignmentModel decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const AlignmentModel& model, const std::filesystem::path& path);
AlignmentModel load_checkpoint(const std::filesystem::path& path);

// Parameters rounded through binary32, i.e. what a save/load cycle yields.
AlignmentModel round_to_storage_precision(const AlignmentModel& model);

}  // namespace specalign
