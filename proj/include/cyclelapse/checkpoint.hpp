#pragma once

// Single-file checkpoint container.
//
// Layout (all integers in decimal ASCII):
//
//   CYCLELAPSE-ARCHIVE 1\n
//   <entry count>\n
//   then per entry: "<kind> <name> <payload bytes>\n" followed by the payload,
//   where kind is "text" or "tensor". A tensor payload is
//   "f32 <ndim> <d0> ... <dn-1>\n" followed by little-endian float32 values.
//
// A model checkpoint stores a "config" text entry (INI, format ckpt-v1), one
// tensor per parameter under "G/" and "D/", optimizer moments under
// "opt/G/..." and "opt/D/...", and a "progress" text entry.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "cyclelapse/config.hpp"
#include "cyclelapse/model.hpp"

namespace cyclelapse {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr const char* kCheckpointFormat = "ckpt-v1";

class Archive {
public:
    void put_text(const std::string& name, std::string text);
    void put_tensor(const std::string& name, const torch::Tensor& tensor);

    bool has(const std::string& name) const { return index_.count(name) != 0; }
    const std::string& text(const std::string& name) const;
    torch::Tensor tensor(const std::string& name) const;
    std::vector<std::string> names() const;

    std::vector<std::uint8_t> serialize() const;
    static Archive deserialize(std::span<const std::uint8_t> bytes);

    /// Atomic write: temporary file then rename.
    void save(const std::filesystem::path& path) const;
    static Archive load(const std::filesystem::path& path);

private:
    struct Entry {
        std::string name;
        bool is_tensor = false;
        std::string text;
        std::vector<std::int64_t> shape;
        std::vector<float> values;
    };
    const Entry& find(const std::string& name) const;

    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

struct DatasetInfo {
    Instant first{};
    Instant last{};
    double length_days = 0.0;
    std::size_t frame_count = 0;
};

/// Everything needed to rebuild the networks and continue training.
struct CheckpointHeader {
    ExperimentConfig experiment;
    CycleConfig cycles;   ///< resolved for the dataset
    JitterConfig jitter;  ///< resolved, normalized units
    DatasetInfo dataset;
    std::int64_t images_shown = 0;
    std::int64_t step = 0;

    std::string to_text() const;
    static CheckpointHeader parse(const std::string& text);
};

void store_parameters(Archive& archive, const std::string& prefix, const torch::nn::Module& module);
/// Copies stored values into the module; shapes and names must match exactly.
void restore_parameters(const Archive& archive, const std::string& prefix, torch::nn::Module& module);

/// Generator ready for inference, plus the metadata the tools need.
struct InferenceModel {
    CheckpointHeader header;
    Generator generator{nullptr};
    std::string checkpoint_id;  ///< content hash of the checkpoint file
};

InferenceModel load_inference_model(const std::filesystem::path& path);

/// 64-bit FNV-1a, hex encoded.
std::string content_hash(std::span<const std::uint8_t> bytes);

}  // namespace cyclelapse
