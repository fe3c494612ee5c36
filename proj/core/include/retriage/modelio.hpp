#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "retriage/coral.hpp"
#include "retriage/image.hpp"
#include "retriage/nn.hpp"
#include "retriage/preproc.hpp"

namespace retriage::modelio {

inline constexpr char kMagic[4] = {'R', 'T', 'M', '1'};
inline constexpr std::uint16_t kFormatVersion = 1;

/// Everything infer() needs: configs, calibration temperature, backbone
/// parameters (including running statistics) and the ordinal head.
struct ModelBundle {
    nn::BackboneConfig backbone;
    preproc::PreprocConfig preproc;
    int num_grades = 5;
    float temperature = 1.0f;
    nn::Params params;
    coral::CoralHead head;
};

/// Deterministic little-endian byte stream: magic, version, configs, K,
/// temperature, name-sorted parameter table, trailing CRC32.
std::vector<std::uint8_t> save_model(const ModelBundle& bundle);

/// Inverse of save_model. Validates magic, version, CRC, stream bounds,
/// and that exactly the config-declared parameters are present with
/// matching shapes. Throws ModelIoError with the matching kind.
ModelBundle load_model(const std::vector<std::uint8_t>& bytes);

void save_model_file(const std::string& path, const ModelBundle& bundle);
ModelBundle load_model_file(const std::string& path);

struct InferResult {
    int grade = 0;
    std::vector<float> cumulative_probs;  // sigma(logits), length K-1
    std::vector<float> calibrated_probs;  // sigma(logits / T)
};

/// Embedded-preprocessing inference: preprocess, eval-mode forward, CORAL
/// logits, temperature, decode. Builds no training-graph state.
InferResult infer(const ModelBundle& bundle, const RawImage& image);

/// Human-readable header fields (the --dump-header diagnostic).
std::string dump_header(const std::vector<std::uint8_t>& bytes);

/// CRC32 (reflected polynomial 0xEDB88320, init and final xor 0xFFFFFFFF).
std::uint32_t crc32(const std::uint8_t* data, std::size_t len);

}  // namespace retriage::modelio
